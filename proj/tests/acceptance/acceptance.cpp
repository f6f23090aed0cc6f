// Acceptance gate. Prints one "PASS criterion N: ..." or "FAIL criterion N: ..."
// line per criterion and exits non-zero when any selected criterion fails.
//
//   perfuseg_acceptance            all ten
//   perfuseg_acceptance --only 5   just one
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "perfuseg/dicom.hpp"
#include "perfuseg/error.hpp"
#include "perfuseg/inference.hpp"
#include "perfuseg/io.hpp"
#include "perfuseg/log.hpp"
#include "perfuseg/metrics.hpp"
#include "perfuseg/models.hpp"
#include "perfuseg/nn/gradcheck.hpp"
#include "perfuseg/nn/loss.hpp"
#include "perfuseg/nn/ops.hpp"
#include "perfuseg/parallel.hpp"
#include "perfuseg/phantom.hpp"
#include "perfuseg/preprocess.hpp"
#include "perfuseg/training.hpp"

using namespace perfuseg;
namespace fs = std::filesystem;
using TD = nn::Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::optional<ErrorKind> kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// ---- 1: gradients ------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  nn::GradCheckConfig cfg;
  cfg.seed = 1;
  cfg.trials = 10;
  cfg.step = 1e-3;
  cfg.tolerance = 1e-4;
  const auto results = nn::run_gradcheck_suite(cfg);
  const double elapsed = seconds_since(t0);

  // Every op named by the criterion must appear under some check.
  const std::vector<std::string> required = {"conv3d", "max_pool3d", "avg_pool3d", "conv_transpose3d", "dense",
                                             "relu",   "sigmoid",    "softmax",    "soft_dice",        "cross_entropy"};
  bool ok = elapsed < 120.0;
  std::ostringstream d;
  double worst = 0;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_error);
    if (!r.passed || r.trials < 10) {
      ok = false;
      d << r.op << " failed (" << r.max_error << ", " << r.trials << " trials); ";
    }
  }
  for (const auto& op : required) {
    const bool covered = std::any_of(results.begin(), results.end(), [&](const auto& r) {
      return r.op.rfind(op, 0) == 0 && r.passed && r.trials >= 10;
    });
    if (!covered) {
      ok = false;
      d << op << " not covered; ";
    }
  }
  d << results.size() << " checks, worst relative error " << fmt("%.3g", worst) << ", " << fmt("%.1f", elapsed)
    << " s";
  return {ok, d.str()};
}

// ---- 2: oracles ----------------------------------------------------------------

TD random_tensor(nn::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(nn::numel(shape));
  for (auto& x : v) x = u(rng);
  return TD::from(std::move(shape), std::move(v));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-9}); }

struct Dims {
  int n, d, h, w, c;
  std::size_t at(int in, int id, int ih, int iw, int ic) const {
    return ((((static_cast<std::size_t>(in) * d + id) * h + ih) * w + iw) * c + ic);
  }
};

double worst_diff(const TD& got, const std::vector<double>& want) {
  if (got.values().size() != want.size()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, rel_err(got.values()[i], want[i]));
  return worst;
}

std::vector<double> conv_oracle(const TD& x, const TD& k, const TD& b, bool same_depth) {
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  const Dims X{xs[0], xs[1], xs[2], xs[3], xs[4]};
  const int kd = ks[0], kh = ks[1], kw = ks[2], co = ks[4];
  const int pd = same_depth ? (kd - 1) / 2 : 0, ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const int od = same_depth ? X.d : X.d - kd + 1;
  const Dims Y{X.n, od, X.h, X.w, co};
  std::vector<double> out(static_cast<std::size_t>(Y.n) * od * Y.h * Y.w * co);
  for (int n = 0; n < X.n; ++n)
    for (int z = 0; z < od; ++z)
      for (int y = 0; y < X.h; ++y)
        for (int xx = 0; xx < X.w; ++xx)
          for (int o = 0; o < co; ++o) {
            double s = b.values()[o];
            for (int a = 0; a < kd; ++a)
              for (int bb = 0; bb < kh; ++bb)
                for (int c = 0; c < kw; ++c) {
                  const int iz = z + a - pd, iy = y + bb - ph, ix = xx + c - pw;
                  if (iz < 0 || iz >= X.d || iy < 0 || iy >= X.h || ix < 0 || ix >= X.w) continue;
                  for (int i = 0; i < X.c; ++i)
                    s += x.values()[X.at(n, iz, iy, ix, i)] *
                         k.values()[(((static_cast<std::size_t>(a) * kh + bb) * kw + c) * X.c + i) * co + o];
                }
            out[Y.at(n, z, y, xx, o)] = s;
          }
  return out;
}

std::vector<double> pool_oracle(const TD& x, nn::Window3 win, bool is_max) {
  const auto& xs = x.shape();
  const Dims X{xs[0], xs[1], xs[2], xs[3], xs[4]};
  const int od = (X.d + win[0] - 1) / win[0], oh = (X.h + win[1] - 1) / win[1], ow = (X.w + win[2] - 1) / win[2];
  const Dims Y{X.n, od, oh, ow, X.c};
  std::vector<double> out(static_cast<std::size_t>(X.n) * od * oh * ow * X.c);
  for (int n = 0; n < X.n; ++n)
    for (int z = 0; z < od; ++z)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          for (int c = 0; c < X.c; ++c) {
            double acc = is_max ? -INFINITY : 0.0;
            int count = 0;
            for (int iz = z * win[0]; iz < std::min(X.d, (z + 1) * win[0]); ++iz)
              for (int iy = y * win[1]; iy < std::min(X.h, (y + 1) * win[1]); ++iy)
                for (int ix = xx * win[2]; ix < std::min(X.w, (xx + 1) * win[2]); ++ix) {
                  const double v = x.values()[X.at(n, iz, iy, ix, c)];
                  acc = is_max ? std::max(acc, v) : acc + v;
                  ++count;
                }
            out[Y.at(n, z, y, xx, c)] = is_max ? acc : acc / count;
          }
  return out;
}

std::vector<double> transpose_oracle(const TD& x, const TD& k, const TD& b, nn::Window3 st) {
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  const Dims X{xs[0], xs[1], xs[2], xs[3], xs[4]};
  const int kd = ks[0], kh = ks[1], kw = ks[2], co = ks[4];
  const Dims Y{X.n, (X.d - 1) * st[0] + kd, (X.h - 1) * st[1] + kh, (X.w - 1) * st[2] + kw, co};
  std::vector<double> out(static_cast<std::size_t>(Y.n) * Y.d * Y.h * Y.w * co);
  for (int n = 0; n < Y.n; ++n)
    for (int z = 0; z < Y.d; ++z)
      for (int y = 0; y < Y.h; ++y)
        for (int xx = 0; xx < Y.w; ++xx)
          for (int o = 0; o < co; ++o) out[Y.at(n, z, y, xx, o)] = b.values()[o];
  for (int n = 0; n < X.n; ++n)
    for (int z = 0; z < X.d; ++z)
      for (int y = 0; y < X.h; ++y)
        for (int xx = 0; xx < X.w; ++xx)
          for (int a = 0; a < kd; ++a)
            for (int bb = 0; bb < kh; ++bb)
              for (int c = 0; c < kw; ++c)
                for (int i = 0; i < X.c; ++i)
                  for (int o = 0; o < co; ++o)
                    out[Y.at(n, z * st[0] + a, y * st[1] + bb, xx * st[2] + c, o)] +=
                        x.values()[X.at(n, z, y, xx, i)] *
                        k.values()[(((static_cast<std::size_t>(a) * kh + bb) * kw + c) * X.c + i) * co + o];
  return out;
}

LabelMap random_map(std::mt19937_64& rng, bool allow_background) {
  static constexpr float kValues[] = {0.0f, 76.0f, 150.0f, 255.0f};
  LabelMap m;
  m.pixels.resize(32, 32);
  for (Eigen::Index i = 0; i < m.pixels.size(); ++i) m.pixels.data()[i] = kValues[rng() % (allow_background ? 4 : 3)];
  return m;
}

bool same_optional(const std::optional<double>& got, std::uint64_t num, std::uint64_t den) {
  if (den == 0) return !got.has_value();
  return got.has_value() && *got == static_cast<double>(num) / static_cast<double>(den);
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  int shapes = 0, cases = 0;
  // Every input shape with D <= 4, H, W <= 6, C <= 3.
  for (int d = 1; d <= 4; ++d)
    for (int h = 1; h <= 6; ++h)
      for (int w = 1; w <= 6; ++w)
        for (int c = 1; c <= 3; ++c) {
          ++shapes;
          const int n = 1 + static_cast<int>(rng() % 2);
          const auto x = random_tensor({n, d, h, w, c}, rng);
          // conv3d, both depth modes, random kernel extents 1..3
          for (bool same : {true, false}) {
            const int kd = 1 + static_cast<int>(rng() % std::min(3, d));
            const int kh = 1 + static_cast<int>(rng() % 3), kw = 1 + static_cast<int>(rng() % 3);
            const int co = 1 + static_cast<int>(rng() % 3);
            const auto k = random_tensor({kd, kh, kw, c, co}, rng);
            const auto b = random_tensor({co}, rng);
            const auto y = nn::conv3d(x, k, b, same ? nn::DepthPadding::Same : nn::DepthPadding::Valid);
            worst = std::max(worst, worst_diff(y, conv_oracle(x, k, b, same)));
            ++cases;
          }
          // pools: an exact-divisor window and a ceil-division window
          auto divisor = [&](int extent) {
            std::vector<int> ds;
            for (int q = 1; q <= extent; ++q)
              if (extent % q == 0) ds.push_back(q);
            return ds[rng() % ds.size()];
          };
          const nn::Window3 exact{divisor(d), divisor(h), divisor(w)};
          const nn::Window3 partial{1 + static_cast<int>(rng() % d), 1 + static_cast<int>(rng() % h),
                                    1 + static_cast<int>(rng() % w)};
          worst = std::max(worst, worst_diff(nn::max_pool3d(x, exact), pool_oracle(x, exact, true)));
          worst = std::max(worst, worst_diff(nn::avg_pool3d(x, exact), pool_oracle(x, exact, false)));
          worst = std::max(worst, worst_diff(nn::max_pool3d(x, partial, true), pool_oracle(x, partial, true)));
          worst = std::max(worst, worst_diff(nn::avg_pool3d(x, partial, true), pool_oracle(x, partial, false)));
          cases += 4;
          // transposed convolution
          const nn::Window3 st{1 + static_cast<int>(rng() % 2), 1 + static_cast<int>(rng() % 2),
                               1 + static_cast<int>(rng() % 2)};
          const int co = 1 + static_cast<int>(rng() % 3);
          const auto k = random_tensor({1 + static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 3),
                                        1 + static_cast<int>(rng() % 3), c, co},
                                       rng);
          const auto b = random_tensor({co}, rng);
          worst = std::max(worst, worst_diff(nn::conv_transpose3d(x, k, b, st), transpose_oracle(x, k, b, st)));
          ++cases;
        }
  const bool ops_ok = worst <= 1e-6;

  // Pixel-counting metric oracle.
  int metric_mismatches = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const auto pred = random_map(rng, true);
    auto truth = random_map(rng, true);
    if (pair == 0) truth.pixels.setConstant(255.0f);  // nothing evaluated
    for (auto cls : kEvaluatedClasses) {
      const float t = target_value(cls);
      std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          if (truth.pixels(y, x) == 255.0f) continue;
          const bool p = pred.pixels(y, x) == t, g = truth.pixels(y, x) == t;
          tp += p && g;
          fp += p && !g;
          fn += !p && g;
          tn += !p && !g;
        }
      const auto got = scalars(confusion(pred, truth, cls));
      const bool ok = same_optional(got.dice, 2 * tp, 2 * tp + fp + fn) && same_optional(got.sensitivity, tp, tp + fn) &&
                      same_optional(got.specificity, tn, tn + fp) && same_optional(got.precision, tp, tp + fp) &&
                      same_optional(got.accuracy, tp + tn, tp + tn + fp + fn);
      metric_mismatches += !ok;
    }
  }
  std::ostringstream d;
  d << shapes << " input shapes, " << cases << " op cases, worst relative difference " << fmt("%.3g", worst)
    << "; metric mismatches " << metric_mismatches << " over 100 map pairs";
  return {ops_ok && metric_mismatches == 0, d.str()};
}

// ---- 3: loss identities --------------------------------------------------------

Outcome loss_identities() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int nonzero = 0;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> v(256);
    // half continuous, half four-level grayscale targets
    for (auto& x : v) x = i % 2 ? u(rng) : std::array<double, 4>{0.0, 76 / 255.0, 150 / 255.0, 1.0}[rng() % 4];
    const auto t = TD::from({16, 16}, v);
    if (nn::soft_dice_loss(t, t).item() != 0.0) ++nonzero;
  }
  const double eps = 1e-6;
  const double want = 1.0 - eps / (256.0 + eps);
  const double a = nn::soft_dice_loss(TD::zeros({16, 16}), TD::filled({16, 16}, 1.0), eps).item();
  const double b = nn::soft_dice_loss(TD::filled({16, 16}, 1.0), TD::zeros({16, 16}), eps).item();
  const double err = std::max(std::abs(a - want), std::abs(b - want));
  std::ostringstream d;
  d << "pred=target nonzero in " << nonzero << "/50; 0-vs-1 tile error " << fmt("%.3g", err);
  return {nonzero == 0 && err <= 1e-12, d.str()};
}

// ---- 4: architectures ------------------------------------------------------------

Outcome architecture_conformance() {
  const std::map<ModelName, nn::Shape> declared = {{ModelName::Arch1, {1, 4}},
                                                   {ModelName::Arch2, {1, 4}},
                                                   {ModelName::Arch3, {1, 4}},
                                                   {ModelName::MjNet, {1, 16, 16}}};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> input(30 * 16 * 16);
  for (auto& v : input) v = u(rng);
  const auto x = nn::Tensor<float>::from({1, 30, 16, 16, 1}, input);
  bool ok = true;
  std::ostringstream d, audits;
  for (const auto& [name, want] : declared) {
    const auto net = build_model<float>(name, {}, 1);
    const auto y = net.forward(x);
    const bool shape_ok = y.shape() == want &&
                          std::all_of(y.values().begin(), y.values().end(), [](float v) { return std::isfinite(v); });
    ok = ok && shape_ok;
    const auto audit = count_parameters(net.spec());
    // A mismatch must be itemized: every layer listed with its count.
    const bool itemized = audit.difference() == 0 || (!audit.layers.empty() && audit.declared > 0);
    ok = ok && itemized;
    audits << format_audit(audit) << '\n';
    d << display_name(name) << " " << nn::to_string(y.shape()) << (shape_ok ? "" : " (wrong)") << " params "
      << audit.total << " vs " << audit.declared << " (" << (audit.difference() >= 0 ? "+" : "")
      << audit.difference() << "); ";
  }
  std::cout << audits.str();
  return {ok, d.str() + "audit printed above"};
}

// ---- 5: phantom end to end ----------------------------------------------------------

// Training settings for the end-to-end run; see README "Phantom benchmark".
constexpr int kE2eBatch = 1;

Outcome phantom_end_to_end() {
  const auto t0 = Clock::now();
  const PhantomSpec spec;  // 8 patients, 4 slices, 128 x 128, 30 frames
  std::vector<PatientData> data;
  std::vector<std::vector<Mask>> masks;
  for (const auto& p : generate_cohort(spec)) {
    const auto pre = preprocess(p.volume);
    PatientData d;
    d.id = p.volume.patient_id();
    d.volume = pre.enhanced;
    d.labels = p.labels;
    data.push_back(std::move(d));
    masks.push_back(pre.masks);
  }
  std::vector<std::string> ids;
  for (const auto& d : data) ids.push_back(d.id);

  TrainConfig cfg;  // 100 epochs, patience 10, SGD lr 0.01 Nesterov 0.9
  cfg.batch_size = kE2eBatch;
  cfg.skip_background_tiles = true;

  MetricAccumulator pooled("held-out");
  std::ostringstream folds;
  for (const auto& plan : group_split(ids, 2)) {
    const auto r = train_fold(plan, data, ModelName::MjNet, cfg);
    folds << plan.name() << " best epoch " << r.best_epoch << "/" << r.log.size() << "; ";
    for (const auto& id : plan.held_out) {
      const auto k = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
      for (int s = 0; s < data[k].volume.slices(); ++s) {
        const auto raw = predict_slice(tile_model(r.network), data[k].volume, s);
        pooled.add(raw, classify_pixels(raw, {}, &masks[k][s]), data[k].labels[s]);
      }
    }
  }
  const double elapsed = seconds_since(t0);
  const auto report = pooled.report();
  std::cout << metrics_csv({report});
  const auto& pen = report.at(TissueClass::Penumbra);
  const auto& core = report.at(TissueClass::Core);
  auto val = [](const std::optional<double>& v) { return v ? *v : -1.0; };
  const double pd = val(pen.values.dice), cd = val(core.values.dice), pa = val(pen.auc), ca = val(core.auc);
  const bool ok = pd >= 0.70 && cd >= 0.50 && pa >= 0.90 && ca >= 0.90 && elapsed < 30 * 60;
  std::ostringstream d;
  d << "penumbra Dice " << fmt("%.3f", pd) << " AUC " << fmt("%.3f", pa) << ", core Dice " << fmt("%.3f", cd)
    << " AUC " << fmt("%.3f", ca) << "; " << folds.str() << fmt("%.0f", elapsed) << " s on " << thread_count()
    << " thread(s)";
  return {ok, d.str()};
}

// ---- 6: baselines -------------------------------------------------------------------

Outcome baseline_exactness() {
  std::ostringstream d;
  bool ok = true;
  for (double sigma : {0.0, 2.0}) {
    PhantomSpec spec;
    spec.noise_sigma = sigma;
    std::map<RuleId, double> worst;
    for (auto id : kAllRules) worst[id] = 1.0;
    for (int i = 0; i < spec.patients; ++i) {
      const auto p = generate_patient(spec, i);
      PreprocessConfig pc;
      pc.register_frames = false;
      const auto pre = preprocess(p.volume, pc);
      const auto maps = compute_maps(pre.stripped, pre.masks);
      for (auto id : kAllRules) {
        const auto got = apply_rule(maps, rule(id));
        for (int s = 0; s < spec.slices; ++s) {
          const auto score = dice(got[s], engineered_region(p, s, id));
          worst[id] = std::min(worst[id], score.value_or(0.0));
        }
      }
    }
    const double need = sigma == 0.0 ? 1.0 : 0.95;
    d << "sigma " << sigma << ":";
    for (const auto& [id, v] : worst) {
      ok = ok && v >= need;
      d << ' ' << rule(id).name << '=' << fmt("%.4f", v);
    }
    d << "; ";
  }
  return {ok, d.str() + "minimum Dice per rule over every patient and slice"};
}

// ---- 7: preprocessing -----------------------------------------------------------------

Image<int> oracle_equalize(const Image<int>& img, int levels) {
  const long n = img.size();
  std::vector<long> at_most(img.size());
  long cdf_min = n;
  for (Eigen::Index i = 0; i < n; ++i) {
    long c = 0;
    for (Eigen::Index j = 0; j < n; ++j) c += img.data()[j] <= img.data()[i];
    at_most[i] = c;
    cdf_min = std::min(cdf_min, c);
  }
  if (cdf_min == n) return img;
  Image<int> out(img.rows(), img.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    out.data()[i] = static_cast<int>(std::lround(double(at_most[i] - cdf_min) / double(n - cdf_min) * (levels - 1)));
  return out;
}

Outcome preprocessing_recovery() {
  PhantomSpec spec;
  spec.patients = 1;
  spec.slices = 4;
  spec.frames = 26;  // 25 moved frames per slice, 100 in all
  spec.jitter_shift = 4.0;
  spec.jitter_rotation = 4.0;
  const auto p = generate_patient(spec, 0);
  const auto reg = register_time_series(p.volume);
  double worst_px = 0, worst_deg = 0;
  int frames = 0;
  for (int t = 1; t < spec.frames; ++t)
    for (int s = 0; s < spec.slices; ++s) {
      const auto residual = compose(inverse(reg.at(t, s)), p.motion[t]);
      worst_px = std::max({worst_px, std::abs(residual.dx), std::abs(residual.dy)});
      worst_deg = std::max(worst_deg, std::abs(residual.rotation_deg));
      ++frames;
    }
  const auto stripped = strip_skull(reg.volume);
  const auto enhanced = enhance_contrast(stripped.volume, stripped.masks);
  const auto [lo, hi] = std::minmax_element(enhanced.voxels().begin(), enhanced.voxels().end());

  std::mt19937_64 rng(7);
  int eq_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Image<int> img(8 + static_cast<int>(rng() % 9), 8 + static_cast<int>(rng() % 9));
    const int spread = 1 + static_cast<int>(rng() % 256);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<int>(rng() % spread);
    eq_mismatch += !(equalize_histogram(img) == oracle_equalize(img, 256)).all();
  }
  const bool ok = frames == 100 && worst_px <= 0.5 && worst_deg <= 0.5 && *lo >= 0.0f && *hi <= 1.0f &&
                  eq_mismatch == 0;
  std::ostringstream d;
  d << frames << " jittered frames, worst residual " << fmt("%.3f", worst_px) << " px " << fmt("%.3f", worst_deg)
    << " deg; enhanced range [" << *lo << ", " << *hi << "]; equalization mismatches " << eq_mismatch << "/100";
  return {ok, d.str()};
}

// ---- 8: determinism -------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + PERFUSEG_CLI + "\" --seed 11 --threads 1 --log-level warn " + args +
                          " >>\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return status;
}

// Drops the wall-clock column of a training log; everything else stays.
std::string without_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).string();
    if (rel == "cli.log") continue;
    const auto bytes = io::read_file(e.path());
    std::string text(bytes.begin(), bytes.end());
    if (rel.size() > 8 && rel.substr(rel.size() - 8) == "_log.csv") text = without_seconds(text);
    files[rel] = std::move(text);
  }
  return files;
}

Outcome pipeline_determinism() {
  const fs::path base = fs::temp_directory_path() / "perfuseg_acceptance_determinism";
  fs::remove_all(base);
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* name : {"a", "b"}) {
    const fs::path r = base / name;
    fs::create_directories(r);
    const auto log = r / "cli.log";
    const std::string R = "\"" + r.string() + "\"";
    const std::vector<std::string> steps = {
        "phantom --out " + R + "/raw --patients 2 --slices 1 --size 64",
        "preprocess --in " + R + "/raw --out " + R + "/pre",
        "train --model mjnet --data " + R + "/pre --labels " + R + "/raw --fold phantom_01 --epochs 3 --patience 2 --out " +
            R + "/runs",
        "predict --model mjnet --ckpt " + R + "/runs/fold_phantom_01.psck --in " + R + "/pre/phantom_01.ctpv --out " + R +
            "/pred --truth " + R + "/raw/phantom_01/labels --histogram",
        "evaluate --pred " + R + "/pred --truth " + R + "/raw/phantom_01/labels --out " + R + "/metrics.csv"};
    for (const auto& s : steps)
      if (run_cli(s, log) != 0) return {false, std::string("run ") + name + " failed at: " + s + " (see " + log.string() + ")"};
    runs.push_back(snapshot(r));
  }
  std::vector<std::string> differing;
  for (const auto& [path, text] : runs[0]) {
    const auto it = runs[1].find(path);
    if (it == runs[1].end() || it->second != text) differing.push_back(path);
  }
  for (const auto& [path, text] : runs[1])
    if (!runs[0].count(path)) differing.push_back(path);
  std::ostringstream d;
  d << runs[0].size() << " files compared byte for byte (training-log seconds column excluded)";
  if (!differing.empty()) {
    d << "; differing:";
    for (const auto& p : differing) d << ' ' << p;
  } else {
    fs::remove_all(base);
  }
  return {differing.empty() && runs[0].size() > 5, d.str()};
}

// ---- 9: overfit ----------------------------------------------------------------------

Outcome overfit_sanity() {
  PhantomSpec spec;
  spec.patients = 1;
  spec.slices = 1;
  const auto p = generate_patient(spec, 0);
  PatientData patient;
  patient.id = p.volume.patient_id();
  patient.volume = enhance_contrast(p.volume, p.brain_masks);
  patient.labels = p.labels;
  // The tile holding the most distinct classes.
  const auto tiles = make_tiles({&patient}, 8, true);
  const TileSample* pick = &tiles.front();
  int most = 0;
  for (const auto& t : tiles) {
    std::set<float> seen(t.target.data(), t.target.data() + t.target.size());
    if (static_cast<int>(seen.size()) > most) {
      most = static_cast<int>(seen.size());
      pick = &t;
    }
  }
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.patience = 199;
  cfg.stop_on = StopSignal::Training;
  const auto r = train_samples({*pick}, {}, ModelName::MjNet, cfg);
  int reached = 0;
  for (const auto& e : r.log)
    if (e.train_cost < 0.05) {
      reached = e.epoch;
      break;
    }
  std::ostringstream d;
  d << "tile with " << most << " classes; loss " << fmt("%.4f", r.log.front().train_cost) << " -> "
    << fmt("%.4f", r.log.back().train_cost) << " after " << r.log.size() << " epochs";
  if (reached) d << ", below 0.05 from epoch " << reached;
  return {reached > 0, d.str()};
}

// ---- 10: DICOM ----------------------------------------------------------------------

Outcome dicom_golden() {
  const fs::path dir = fs::path(PERFUSEG_TEST_DATA) / "dicom";
  int files = 0, mismatched = 0;
  for (const auto& e : fs::directory_iterator(dir / "golden")) {
    const auto bytes = io::read_file(e.path());
    const auto frame = dicom::parse_dicom_file(bytes);
    mismatched += dicom::serialize_dicom_file(frame) != bytes || !(dicom::parse_dicom_file(bytes) == frame);
    ++files;
  }
  const auto volume = dicom::assemble_volume(dicom::read_dicom_directory(dir / "golden"));
  const auto expected = io::read_raw_f32(dir / "golden_volume.f32");
  const bool volume_ok = expected.size() == volume.voxels().size() &&
                         std::equal(expected.begin(), expected.end(), volume.voxels().begin());

  auto parse = [&](const char* name) { return [&dir, name] { dicom::parse_dicom_file(io::read_file(dir / name)); }; };
  const std::vector<std::pair<std::string, std::pair<std::function<void()>, ErrorKind>>> fixtures = {
      {"truncated_header", {parse("truncated_header.dcm"), ErrorKind::IncompleteFile}},
      {"truncated_pixels", {parse("truncated_pixels.dcm"), ErrorKind::IncompleteFile}},
      {"no_pixel_data", {parse("no_pixel_data.dcm"), ErrorKind::IncompleteFile}},
      {"implicit_vr", {parse("implicit_vr.dcm"), ErrorKind::Unsupported}},
      {"no_marker", {parse("no_marker.dcm"), ErrorKind::Format}},
      {"ragged", {[&dir] { dicom::assemble_volume(dicom::read_dicom_directory(dir / "ragged")); },
                  ErrorKind::InconsistentAcquisition}},
      {"duplicate", {[&dir] { dicom::assemble_volume(dicom::read_dicom_directory(dir / "duplicate")); },
                     ErrorKind::Duplicate}},
  };
  std::ostringstream d;
  bool errors_ok = true;
  for (const auto& [name, f] : fixtures) {
    const auto got = kind_of(f.first);
    if (got != f.second) {
      errors_ok = false;
      d << name << " raised " << (got ? to_string(*got) : std::string("nothing")) << "; ";
    }
  }
  d << files << " golden files, " << mismatched << " re-serialization mismatches; assembled volume "
    << (volume_ok ? "matches" : "differs from") << " the reference; " << fixtures.size() << " error fixtures checked";
  return {files > 0 && mismatched == 0 && volume_ok && errors_ok, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
  log::set_threshold(log::Level::Warn);
  set_thread_count(1);

  const std::vector<std::function<Outcome()>> criteria = {
      gradient_fidelity,   oracle_equivalence,    loss_identities,      architecture_conformance, phantom_end_to_end,
      baseline_exactness,  preprocessing_recovery, pipeline_determinism, overfit_sanity,           dicom_golden};
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (only && only != n) continue;
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
