#include "perfuseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <queue>

#include "perfuseg/error.hpp"
#include "perfuseg/log.hpp"
#include "perfuseg/parallel.hpp"

namespace perfuseg {

namespace {

// ---- registration ----------------------------------------------------------

// Separable, edges clamped.
ImageF gaussian_blur(const ImageF& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v = static_cast<float>(v / total);
  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  ImageF rows(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * img(y, std::clamp(x + i, 0, w - 1));
      rows(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * rows(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

ImageF downsample(const ImageF& img, int f) {
  if (f == 1) return img;
  const auto h = img.rows() / f;
  const auto w = img.cols() / f;
  ImageF out = ImageF::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) out(y, x) = img.block(y * f, x * f, f, f).mean();
  return out;
}

// Reference with its mean removed, kept with its norm for repeated NCC.
struct CenteredReference {
  ImageF values;
  double norm = 0.0;

  explicit CenteredReference(const ImageF& ref) {
    const double mean = ref.cast<double>().mean();
    values = (ref.cast<double>() - mean).cast<float>();
    norm = std::sqrt(values.cast<double>().square().sum());
  }
};

// NCC of reference against moving(T(p)) with T the candidate transform.
double candidate_score(const CenteredReference& ref, const ImageF& moving, double rot_deg, double dx, double dy,
                       float fill) {
  const int h = static_cast<int>(moving.rows());
  const int w = static_cast<int>(moving.cols());
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const double c = std::cos(rot_deg * std::numbers::pi / 180.0);
  const double s = std::sin(rot_deg * std::numbers::pi / 180.0);
  const float* src = moving.data();
  const float xmax = static_cast<float>(w - 1);
  const float ymax = static_cast<float>(h - 1);
  double sb = 0.0, sbb = 0.0, sab = 0.0;
  for (int y = 0; y < h; ++y) {
    const double yy = y - cy;
    // Sample position is affine in x along the row.
    const float x0 = static_cast<float>(-s * yy + cx + dx - c * cx);
    const float y0 = static_cast<float>(c * yy + cy + dy - s * cx);
    const float* a = ref.values.data() + static_cast<std::ptrdiff_t>(y) * w;
    float rb = 0.0f, rbb = 0.0f, rab = 0.0f;
    for (int x = 0; x < w; ++x) {
      const float px = x0 + static_cast<float>(c) * x;
      const float py = y0 + static_cast<float>(s) * x;
      float b = fill;
      if (px >= 0.0f && py >= 0.0f && px <= xmax && py <= ymax) {
        const int ix = std::min(static_cast<int>(px), w - 2 < 0 ? 0 : w - 2);
        const int iy = std::min(static_cast<int>(py), h - 2 < 0 ? 0 : h - 2);
        const float fx = px - ix;
        const float fy = py - iy;
        const float* p = src + static_cast<std::ptrdiff_t>(iy) * w + ix;
        const float top = p[0] + (p[1] - p[0]) * fx;
        const float bottom = p[w] + (p[w + 1] - p[w]) * fx;
        b = top + (bottom - top) * fy;
      }
      rb += b;
      rbb += b * b;
      rab += a[x] * b;
    }
    sb += rb;
    sbb += rbb;
    sab += rab;
  }
  const double n = static_cast<double>(h) * w;
  const double var = sbb - sb * sb / n;
  if (var <= 0.0 || ref.norm <= 0.0) return 0.0;
  return sab / (ref.norm * std::sqrt(var));
}

struct Stage {
  int factor;
  double rot_step;
  double shift_step;  // full-resolution pixels
};

std::vector<double> steps_around(double centre, double half, double step, double bound) {
  std::vector<double> out;
  const int n = static_cast<int>(std::round(half / step));
  for (int i = -n; i <= n; ++i) {
    const double v = centre + i * step;
    if (std::abs(v) <= bound + 1e-9) out.push_back(v);
  }
  if (out.empty()) out.push_back(std::clamp(centre, -bound, bound));
  return out;
}

// ---- skull strip -----------------------------------------------------------

using Labels = Image<int>;

// 4-connected components of `on`; returns labels (0 = off) and sizes indexed by label.
std::vector<std::size_t> components(const Mask& on, Labels& labels) {
  const int h = static_cast<int>(on.rows());
  const int w = static_cast<int>(on.cols());
  labels = Labels::Zero(h, w);
  std::vector<std::size_t> sizes{0};
  std::vector<int> stack;
  for (int i = 0; i < h * w; ++i) {
    if (!on.data()[i] || labels.data()[i]) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    stack.push_back(i);
    labels.data()[i] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++sizes[id];
      const int y = p / w, x = p % w;
      const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (auto [ny, nx] : nbr) {
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        const int q = ny * w + nx;
        if (on.data()[q] && !labels.data()[q]) {
          labels.data()[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  return sizes;
}

Mask largest_component(const Mask& on) {
  Labels labels;
  const auto sizes = components(on, labels);
  if (sizes.size() <= 1) return Mask::Zero(on.rows(), on.cols());
  const int best = static_cast<int>(std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());
  return (labels == best).cast<std::uint8_t>();
}

// Pixels of `on` reachable from the image border through `on`.
Mask border_connected(const Mask& on) {
  Labels labels;
  components(on, labels);
  const int h = static_cast<int>(on.rows());
  const int w = static_cast<int>(on.cols());
  std::vector<char> touches(static_cast<std::size_t>(labels.maxCoeff()) + 1, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (y == 0 || x == 0 || y == h - 1 || x == w - 1) touches[labels(y, x)] = 1;
  touches[0] = 0;
  Mask out = Mask::Zero(h, w);
  for (int i = 0; i < h * w; ++i) out.data()[i] = touches[labels.data()[i]];
  return out;
}

Mask fill_holes(const Mask& m) {
  const Mask outside = border_connected((m == 0).cast<std::uint8_t>());
  return (outside == 0).cast<std::uint8_t>();
}

Mask erode(const Mask& m) {
  const int h = static_cast<int>(m.rows());
  const int w = static_cast<int>(m.cols());
  Mask out = Mask::Zero(h, w);
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x)
      out(y, x) = m(y, x) && m(y - 1, x) && m(y + 1, x) && m(y, x - 1) && m(y, x + 1);
  return out;
}

ImageF gradient_magnitude(const ImageF& img) {
  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  ImageF out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (img(y, std::min(x + 1, w - 1)) - img(y, std::max(x - 1, 0))) / 2.0;
      const double gy = (img(std::min(y + 1, h - 1), x) - img(std::max(y - 1, 0), x)) / 2.0;
      out(y, x) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
    }
  return out;
}

// Meyer flooding from labelled markers (1 interior, 2 exterior). A pixel is
// queued with its own gradient as priority; at equal priority interior
// claims win, then first-queued.
Labels watershed(const ImageF& gradient, Labels labels) {
  const int h = static_cast<int>(gradient.rows());
  const int w = static_cast<int>(gradient.cols());
  struct Entry {
    float priority;
    int label;
    std::uint64_t seq;
    int pixel;
    bool operator>(const Entry& o) const {
      if (priority != o.priority) return priority > o.priority;
      if (label != o.label) return label > o.label;
      return seq > o.seq;
    }
  };
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  std::uint64_t seq = 0;
  auto push_neighbours = [&](int p, int label) {
    const int y = p / w, x = p % w;
    const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
    for (auto [ny, nx] : nbr) {
      if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
      const int q = ny * w + nx;
      if (!labels.data()[q]) queue.push({gradient.data()[q], label, seq++, q});
    }
  };
  for (int p = 0; p < h * w; ++p)
    if (labels.data()[p]) push_neighbours(p, labels.data()[p]);
  while (!queue.empty()) {
    const Entry e = queue.top();
    queue.pop();
    if (labels.data()[e.pixel]) continue;
    labels.data()[e.pixel] = e.label;
    push_neighbours(e.pixel, e.label);
  }
  return labels;
}

double median_of(std::vector<float> v) { return percentile(std::move(v), 50.0); }

}  // namespace

double normalized_cross_correlation(const ImageF& a, const ImageF& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::Alignment, "NCC needs equally sized images");
  const auto da = a.cast<double>() - a.cast<double>().mean();
  const auto db = b.cast<double>() - b.cast<double>().mean();
  const double den = std::sqrt(da.square().sum() * db.square().sum());
  return den > 0.0 ? (da * db).sum() / den : 0.0;
}

RigidTransform2D register_frame(const ImageF& reference, const ImageF& moving, const RegistrationConfig& config) {
  require(reference.rows() == moving.rows() && reference.cols() == moving.cols(), ErrorKind::Alignment,
          "registration frames differ in size");
  if (moving.maxCoeff() == moving.minCoeff() || reference.maxCoeff() == reference.minCoeff()) {
    log::warn("constant frame, registration falls back to identity");
    return {};
  }
  // Contrast uptake changes soft tissue between frames and drags the optimum;
  // bone does not take it up, so match on bone alone when there is any.
  ImageF ref = reference.max(static_cast<float>(config.bone_window));
  ImageF mov = moving.max(static_cast<float>(config.bone_window));
  if (ref.maxCoeff() == ref.minCoeff() || mov.maxCoeff() == mov.minCoeff()) {
    ref = reference;
    mov = moving;
  }
  const ImageF smooth_ref = gaussian_blur(ref, config.smoothing);
  const ImageF smooth_mov = gaussian_blur(mov, config.smoothing);
  const float fill = smooth_mov.minCoeff();
  const int smallest = static_cast<int>(std::min(reference.rows(), reference.cols()));
  const int coarse = smallest / 4 >= 8 ? 4 : (smallest / 2 >= 8 ? 2 : 1);

  struct Level {
    ImageF moving;
    std::unique_ptr<CenteredReference> reference;
  };
  std::map<int, Level> levels;
  auto level = [&](int f) -> Level& {
    auto it = levels.find(f);
    if (it == levels.end()) {
      Level l{downsample(smooth_mov, f), std::make_unique<CenteredReference>(downsample(smooth_ref, f))};
      it = levels.emplace(f, std::move(l)).first;
    }
    return it->second;
  };
  auto score = [&](int f, const RigidTransform2D& t) {
    auto& l = level(f);
    return candidate_score(*l.reference, l.moving, t.rotation_deg, t.dx / f, t.dy / f, fill);
  };
  auto in_bounds = [&](const RigidTransform2D& t) {
    return std::abs(t.rotation_deg) <= config.max_rotation + 1e-9 && std::abs(t.dx) <= config.max_shift + 1e-9 &&
           std::abs(t.dy) <= config.max_shift + 1e-9;
  };

  // Exhaustive grid at the coarsest level: one coarse pixel per shift step.
  std::vector<std::pair<double, RigidTransform2D>> grid;
  for (double r : steps_around(0.0, config.max_rotation, config.coarse_rotation_step, config.max_rotation))
    for (double dy : steps_around(0.0, config.max_shift, coarse, config.max_shift))
      for (double dx : steps_around(0.0, config.max_shift, coarse, config.max_shift))
        grid.push_back({score(coarse, {r, dx, dy}), RigidTransform2D{r, dx, dy}});
  // Best first; ties keep grid order so the result never depends on the sort.
  const std::size_t starts = std::min<std::size_t>(grid.size(), std::max(1, config.starts));
  std::partial_sort(grid.begin(), grid.begin() + starts, grid.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;
  });

  // Local 3x3x3 grids, re-centred until the centre wins, with steps halving
  // down to the final quantum at full resolution.
  std::vector<Stage> schedule;
  double rot_step = config.coarse_rotation_step / 2;
  double shift_step = coarse / 2.0;
  for (int f = coarse / 2; f >= 1; f /= 2) {
    schedule.push_back({f, rot_step, shift_step});
    rot_step = std::max(rot_step / 2, config.final_step);
    shift_step = std::max(shift_step / 2, config.final_step);
  }
  while (schedule.empty() || schedule.back().rot_step > config.final_step ||
         schedule.back().shift_step > config.final_step) {
    schedule.push_back({1, rot_step, shift_step});
    if (rot_step == config.final_step && shift_step == config.final_step) break;
    rot_step = std::max(rot_step / 2, config.final_step);
    shift_step = std::max(shift_step / 2, config.final_step);
  }
  auto refine = [&](RigidTransform2D best) {
    double best_score = -2.0;
    for (const auto& st : schedule) {
      best_score = score(st.factor, best);
      for (int iter = 0; iter < 32; ++iter) {
        const RigidTransform2D centre = best;
        for (int i = -1; i <= 1; ++i)
          for (int j = -1; j <= 1; ++j)
            for (int k = -1; k <= 1; ++k) {
              if (!i && !j && !k) continue;
              const RigidTransform2D c{centre.rotation_deg + i * st.rot_step, centre.dx + k * st.shift_step,
                                       centre.dy + j * st.shift_step};
              if (!in_bounds(c)) continue;
              const double v = score(st.factor, c);
              if (v > best_score) {
                best_score = v;
                best = c;
              }
            }
        if (best == centre) break;
      }
    }
    return std::pair{best_score, best};
  };
  auto winner = refine(grid[0].second);
  for (std::size_t i = 1; i < starts; ++i) {
    const auto r = refine(grid[i].second);
    if (r.first > winner.first) winner = r;
  }
  const RigidTransform2D best = winner.second;
  return best;
}

Registration register_time_series(const CtpVolume& volume, const RegistrationConfig& config) {
  require(volume.frames() >= 2, ErrorKind::Usage, "registration needs at least two frames");
  Registration out{volume, std::vector<RigidTransform2D>(static_cast<std::size_t>(volume.frames()) * volume.slices())};
  const int slices = volume.slices();
  const std::size_t jobs = static_cast<std::size_t>(volume.frames() - 1) * slices;
  parallel_for(jobs, [&](std::size_t j) {
    const int t = static_cast<int>(j / slices) + 1;
    const int s = static_cast<int>(j % slices);
    const ImageF reference = volume.frame(0, s);
    const ImageF moving = volume.frame(t, s);
    const auto transform = register_frame(reference, moving, config);
    out.transforms[static_cast<std::size_t>(t) * slices + s] = transform;
    out.volume.frame(t, s) = warp(moving, transform, moving.minCoeff());
  });
  return out;
}

Mask brain_mask(const ImageF& mean, int slice, const SkullStripConfig& config) {
  const int h = static_cast<int>(mean.rows());
  const int w = static_cast<int>(mean.cols());
  const std::string where = "slice " + std::to_string(slice);
  std::vector<float> all(mean.data(), mean.data() + mean.size());
  const double bone_threshold =
      std::max(config.bone_fraction * percentile(all, config.bone_percentile), config.bone_floor);
  std::vector<float> border;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (y == 0 || x == 0 || y == h - 1 || x == w - 1) border.push_back(mean(y, x));
  const double background = median_of(border);

  const Mask bone = (mean >= static_cast<float>(bone_threshold)).cast<std::uint8_t>();
  const Mask tissue = ((mean - static_cast<float>(background)).abs() > static_cast<float>(config.foreground_contrast) &&
                       mean < static_cast<float>(bone_threshold))
                          .cast<std::uint8_t>();
  const Mask interior = largest_component(tissue);
  require((interior > 0).any(), ErrorKind::SkullStrip, "no interior marker found on " + where);

  Mask seed = interior;
  for (int i = 0; i < config.marker_erosion; ++i) {
    const Mask next = erode(seed);
    if (!(next > 0).any()) break;
    seed = next;
  }
  const Mask outside = border_connected(((tissue == 0) && (bone == 0)).cast<std::uint8_t>());
  Labels markers = Labels::Zero(h, w);
  for (int i = 0; i < h * w; ++i) {
    if (outside.data()[i] || bone.data()[i]) markers.data()[i] = 2;
    if (seed.data()[i]) markers.data()[i] = 1;
  }
  const Labels flooded = watershed(gradient_magnitude(mean), markers);
  Mask mask = fill_holes(largest_component((flooded == 1).cast<std::uint8_t>()));
  require((mask > 0).any(), ErrorKind::SkullStrip, "empty brain mask on " + where);
  return mask;
}

SkullStrip strip_skull(const CtpVolume& volume, const SkullStripConfig& config) {
  SkullStrip out{volume, std::vector<Mask>(volume.slices())};
  parallel_for(static_cast<std::size_t>(volume.slices()), [&](std::size_t s) {
    const int slice = static_cast<int>(s);
    out.masks[s] = brain_mask(volume.temporal_mean(slice), slice, config);
    const auto keep = out.masks[s].cast<float>();
    for (int t = 0; t < volume.frames(); ++t) out.volume.frame(t, slice) *= keep;
  });
  return out;
}

double percentile(std::vector<float> values, double p) {
  require(!values.empty(), ErrorKind::Validation, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return values[lo] + (static_cast<double>(values[hi]) - values[lo]) * f;
}

Image<int> equalize_histogram(const Image<int>& image, const Mask* mask, int levels) {
  require(levels >= 2, ErrorKind::Config, "equalization needs at least two levels");
  if (mask)
    require(mask->rows() == image.rows() && mask->cols() == image.cols(), ErrorKind::Alignment,
            "equalization mask differs in size");
  std::vector<std::uint64_t> hist(levels, 0);
  std::uint64_t n = 0;
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    if (mask && !mask->data()[i]) continue;
    const int v = image.data()[i];
    require(v >= 0 && v < levels, ErrorKind::Validation,
            "value " + std::to_string(v) + " outside [0, " + std::to_string(levels) + ")");
    ++hist[v];
    ++n;
  }
  Image<int> out = image;
  if (n == 0) return out;
  std::vector<std::uint64_t> cdf(levels);
  std::uint64_t run = 0;
  std::uint64_t cdf_min = 0;
  for (int v = 0; v < levels; ++v) {
    run += hist[v];
    cdf[v] = run;
    if (cdf_min == 0 && hist[v]) cdf_min = run;
  }
  if (n == cdf_min) return out;  // a single occupied level
  const double den = static_cast<double>(n - cdf_min);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    if (mask && !mask->data()[i]) continue;
    const int v = image.data()[i];
    out.data()[i] = static_cast<int>(std::lround(static_cast<double>(cdf[v] - cdf_min) / den * (levels - 1)));
  }
  return out;
}

CtpVolume enhance_contrast(const CtpVolume& volume, const std::vector<Mask>& masks, const EnhanceConfig& config) {
  require(static_cast<int>(masks.size()) == volume.slices(), ErrorKind::Alignment, "expected one mask per slice");
  require(config.low_percentile < config.high_percentile, ErrorKind::Config, "percentile bounds are inverted");
  for (int s = 0; s < volume.slices(); ++s) {
    require(masks[s].rows() == volume.height() && masks[s].cols() == volume.width(), ErrorKind::Alignment,
            "mask of slice " + std::to_string(s) + " does not match the volume");
    require((masks[s] > 0).any(), ErrorKind::SkullStrip, "empty brain mask on slice " + std::to_string(s));
  }
  CtpVolume out(volume.patient_id(), volume.geometry());
  const int top = config.levels - 1;
  const std::size_t jobs = static_cast<std::size_t>(volume.frames()) * volume.slices();
  parallel_for(jobs, [&](std::size_t j) {
    const int t = static_cast<int>(j / volume.slices());
    const int s = static_cast<int>(j % volume.slices());
    const auto& mask = masks[s];
    const auto frame = volume.frame(t, s);
    std::vector<float> inside;
    for (Eigen::Index i = 0; i < frame.size(); ++i)
      if (mask.data()[i]) inside.push_back(frame.data()[i]);
    const double lo = percentile(inside, config.low_percentile);
    const double hi = percentile(inside, config.high_percentile);
    Image<int> levels = Image<int>::Zero(frame.rows(), frame.cols());
    if (hi > lo)
      for (Eigen::Index i = 0; i < frame.size(); ++i) {
        if (!mask.data()[i]) continue;
        const double u = std::clamp((frame.data()[i] - lo) / (hi - lo), 0.0, 1.0);
        levels.data()[i] = static_cast<int>(std::lround(u * top));
      }
    const Image<int> eq = equalize_histogram(levels, &mask, config.levels);
    auto dst = out.frame(t, s);
    for (Eigen::Index i = 0; i < frame.size(); ++i) dst.data()[i] = mask.data()[i] ? static_cast<float>(eq.data()[i]) : 0.0f;
  });

  // Min-max normalization over in-mask voxels, per the configured scope.
  auto normalize = [&](const std::vector<std::pair<int, int>>& group) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -lo;
    for (auto [t, s] : group) {
      const auto f = out.frame(t, s);
      for (Eigen::Index i = 0; i < f.size(); ++i)
        if (masks[s].data()[i]) {
          lo = std::min(lo, f.data()[i]);
          hi = std::max(hi, f.data()[i]);
        }
    }
    const float range = hi - lo;
    for (auto [t, s] : group) {
      auto f = out.frame(t, s);
      for (Eigen::Index i = 0; i < f.size(); ++i)
        f.data()[i] = masks[s].data()[i] && range > 0.0f ? (f.data()[i] - lo) / range : 0.0f;
    }
  };
  std::vector<std::vector<std::pair<int, int>>> groups;
  switch (config.scope) {
    case NormalizationScope::Global: {
      groups.emplace_back();
      for (int t = 0; t < volume.frames(); ++t)
        for (int s = 0; s < volume.slices(); ++s) groups.back().push_back({t, s});
      break;
    }
    case NormalizationScope::PerSlice:
      for (int s = 0; s < volume.slices(); ++s) {
        groups.emplace_back();
        for (int t = 0; t < volume.frames(); ++t) groups.back().push_back({t, s});
      }
      break;
    case NormalizationScope::PerFrame:
      for (int t = 0; t < volume.frames(); ++t)
        for (int s = 0; s < volume.slices(); ++s) groups.push_back({{t, s}});
      break;
  }
  for (const auto& g : groups) normalize(g);
  return out;
}

Preprocessed preprocess(const CtpVolume& volume, const PreprocessConfig& config) {
  volume.validate();
  Preprocessed out;
  CtpVolume registered = volume;
  if (config.register_frames && volume.frames() >= 2) {
    auto r = register_time_series(volume, config.registration);
    registered = std::move(r.volume);
    out.transforms = std::move(r.transforms);
  }
  auto stripped = strip_skull(registered, config.skull);
  out.masks = std::move(stripped.masks);
  out.stripped = std::move(stripped.volume);
  out.enhanced = enhance_contrast(out.stripped, out.masks, config.enhance);
  return out;
}

}  // namespace perfuseg
