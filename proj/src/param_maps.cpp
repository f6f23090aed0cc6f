#include "perfuseg/param_maps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "perfuseg/error.hpp"
#include "perfuseg/parallel.hpp"

namespace perfuseg {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

std::vector<ThresholdRule> make_rules() {
  using enum MapKind;
  using enum Comparison;
  return {
      {RuleId::WintermarkCore, "wintermark_core", "Wintermark et al. 2006", false, {{Rcbv, Less, 33.0}}},
      {RuleId::CampbellPenumbra, "campbell_penumbra", "Campbell et al. 2012", true, {{Tmax, Greater, 6.0}}},
      {RuleId::CampbellCore, "campbell_core", "Campbell et al. 2012", false, {{Rcbf, Less, 31.0}, {Ttp, Greater, 4.0}}},
      {RuleId::CeredaPenumbra, "cereda_penumbra", "Cereda et al. 2016", true, {{Tmax, Greater, 4.0}}},
      {RuleId::CeredaCore, "cereda_core", "Cereda et al. 2016", false, {{Rcbf, Less, 38.0}}},
      {RuleId::MaLinPenumbra, "ma_lin_penumbra", "Ma et al. 2019; Lin et al. 2014", true, {{Tmax, Greater, 6.0}}},
      {RuleId::MaLinCore, "ma_lin_core", "Ma et al. 2019; Lin et al. 2014", false, {{Rcbf, Less, 30.0}}},
  };
}

const std::vector<ThresholdRule>& rules() {
  static const std::vector<ThresholdRule> r = make_rules();
  return r;
}

float median(std::vector<float> v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const float upper = v[mid];
  if (v.size() % 2) return upper;
  const float lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5f * (lower + upper);
}

int first_argmax(const std::vector<float>& c) {
  return static_cast<int>(std::max_element(c.begin(), c.end()) - c.begin());
}

}  // namespace

std::string_view to_string(MapKind kind) {
  switch (kind) {
    case MapKind::Ttp: return "ttp";
    case MapKind::Cbv: return "cbv";
    case MapKind::Cbf: return "cbf";
    case MapKind::Tmax: return "tmax";
    case MapKind::Rcbv: return "rcbv";
    case MapKind::Rcbf: return "rcbf";
  }
  return "?";
}

const ImageF& SliceMaps::map(MapKind kind) const {
  switch (kind) {
    case MapKind::Ttp: return ttp;
    case MapKind::Cbv: return cbv;
    case MapKind::Cbf: return cbf;
    case MapKind::Tmax: return tmax;
    case MapKind::Rcbv: return rcbv;
    case MapKind::Rcbf: return rcbf;
  }
  return ttp;
}

ImageF& SliceMaps::map(MapKind kind) { return const_cast<ImageF&>(std::as_const(*this).map(kind)); }

SliceMaps compute_slice_maps(const CtpVolume& volume, int slice, const Mask& mask, const MapConfig& config) {
  const int h = volume.height();
  const int w = volume.width();
  const int frames = volume.frames();
  require(mask.rows() == h && mask.cols() == w, ErrorKind::Alignment,
          "brain mask of slice " + std::to_string(slice) + " does not match the volume grid");
  require(config.arterial_fraction > 0.0 && config.arterial_fraction <= 1.0, ErrorKind::Config,
          "arterial_fraction must be in (0, 1]");
  const double dt = volume.frame_interval();
  require(dt > 0.0, ErrorKind::Validation, "frame interval must be positive");
  const int base_frames = std::clamp(config.baseline_frames, 1, frames);

  SliceMaps m;
  m.ttp = ImageF::Constant(h, w, kNaN);
  m.cbv = ImageF::Constant(h, w, kNaN);
  m.cbf = ImageF::Constant(h, w, kNaN);
  m.tmax = ImageF::Constant(h, w, kNaN);
  m.valid = Mask::Zero(h, w);

  struct Candidate {
    int ttp_index;
    float enhancement;
    int pixel;
  };
  std::vector<Candidate> candidates;
  std::vector<float> curve(frames);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      for (int t = 0; t < frames; ++t) curve[t] = volume.at(t, slice, y, x);
      const auto [lo, hi] = std::minmax_element(curve.begin(), curve.end());
      if (static_cast<double>(*hi) - *lo <= config.flat_tolerance) {
        m.cbv(y, x) = 0.0f;
        m.cbf(y, x) = 0.0f;
        continue;
      }
      double baseline = 0.0;
      for (int t = 0; t < base_frames; ++t) baseline += curve[t];
      baseline /= base_frames;
      double area = 0.0;
      for (float v : curve) area += (v - baseline) * dt;
      double slope = 0.0;
      for (int t = 0; t + 1 < frames; ++t) slope = std::max(slope, (curve[t + 1] - static_cast<double>(curve[t])) / dt);
      const int peak = first_argmax(curve);
      m.ttp(y, x) = static_cast<float>(peak * dt);
      m.cbv(y, x) = static_cast<float>(area);
      m.cbf(y, x) = static_cast<float>(slope);
      m.valid(y, x) = 1;
      candidates.push_back({peak, static_cast<float>(*hi - baseline), y * w + x});
    }
  }

  if (!candidates.empty()) {
    // Arterial reference: earliest peaks first, stronger enhancement breaks ties.
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.ttp_index != b.ttp_index) return a.ttp_index < b.ttp_index;
      if (a.enhancement != b.enhancement) return a.enhancement > b.enhancement;
      return a.pixel < b.pixel;
    });
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(config.arterial_fraction * static_cast<double>(candidates.size()))));
    std::vector<float> aif(frames, 0.0f);
    std::vector<double> sum(frames, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
      const int y = candidates[i].pixel / w;
      const int x = candidates[i].pixel % w;
      for (int t = 0; t < frames; ++t) sum[t] += volume.at(t, slice, y, x);
    }
    for (int t = 0; t < frames; ++t) aif[t] = static_cast<float>(sum[t] / static_cast<double>(count));
    m.arterial_ttp = static_cast<float>(first_argmax(aif) * dt);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (m.valid(y, x)) m.tmax(y, x) = m.ttp(y, x) - m.arterial_ttp;
  }
  fill_relative_maps(m);
  return m;
}

void fill_relative_maps(SliceMaps& m) {
  const int h = m.height();
  const int w = m.width();
  m.rcbv = ImageF::Constant(h, w, kNaN);
  m.rcbf = ImageF::Constant(h, w, kNaN);
  // Left half: 2x < w - 1, right half: 2x > w - 1, centre column otherwise.
  auto side = [w](int x) { return 2 * x < w - 1 ? 0 : (2 * x > w - 1 ? 1 : 2); };
  std::vector<float> values[2][2];  // [map][side]
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int s = side(x);
      if (!m.valid(y, x) || s == 2) continue;
      values[0][s].push_back(m.cbv(y, x));
      values[1][s].push_back(m.cbf(y, x));
    }
  float medians[2][2] = {};
  for (int k = 0; k < 2; ++k)
    for (int s = 0; s < 2; ++s) {
      if (values[k][s].empty()) {
        m.relative_available = false;
        return;
      }
      medians[k][s] = median(values[k][s]);
      if (!(medians[k][s] > 0.0f)) {
        m.relative_available = false;
        return;
      }
    }
  m.relative_available = true;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m.valid(y, x)) continue;
      const int s = side(x);
      const int contra = s == 0 ? 1 : 0;  // the centre column divides by the left median
      const int ref = s == 2 ? 0 : contra;
      m.rcbv(y, x) = std::max(0.0f, 100.0f * m.cbv(y, x) / medians[0][ref]);
      m.rcbf(y, x) = std::max(0.0f, 100.0f * m.cbf(y, x) / medians[1][ref]);
    }
}

ParametricMaps compute_maps(const CtpVolume& volume, const std::vector<Mask>& masks, const MapConfig& config) {
  require(static_cast<int>(masks.size()) == volume.slices(), ErrorKind::Alignment,
          "expected one brain mask per slice (" + std::to_string(volume.slices()) + "), got " +
              std::to_string(masks.size()));
  ParametricMaps out;
  out.slices.resize(masks.size());
  parallel_for(masks.size(), [&](std::size_t s) {
    out.slices[s] = compute_slice_maps(volume, static_cast<int>(s), masks[s], config);
  });
  return out;
}

const ThresholdRule& rule(RuleId id) { return rules().at(static_cast<std::size_t>(id)); }

const ThresholdRule& rule_from_name(std::string_view name) {
  for (const auto& r : rules())
    if (r.name == name) return r;
  fail(ErrorKind::Config, "unknown threshold rule '" + std::string(name) + "'");
}

Mask apply_rule(const SliceMaps& maps, const ThresholdRule& rule) {
  const int h = maps.height();
  const int w = maps.width();
  for (const auto& c : rule.clauses) {
    const auto& img = maps.map(c.map);
    require(img.rows() == h && img.cols() == w, ErrorKind::Evaluation,
            "rule " + rule.name + " needs the " + std::string(to_string(c.map)) + " map, which is missing");
    if (is_relative(c.map))
      require(maps.relative_available, ErrorKind::Evaluation,
              "rule " + rule.name + " needs " + std::string(to_string(c.map)) +
                  " but relative maps are unavailable (empty contralateral hemisphere)");
  }
  Mask out = Mask::Zero(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!maps.valid(y, x)) continue;
      bool hit = true;
      for (const auto& c : rule.clauses) {
        const float v = maps.map(c.map)(y, x);
        hit = hit && (c.op == Comparison::Less ? v < c.threshold : v > c.threshold);
      }
      out(y, x) = hit ? 1 : 0;
    }
  return out;
}

std::vector<Mask> apply_rule(const ParametricMaps& maps, const ThresholdRule& rule) {
  std::vector<Mask> out;
  out.reserve(maps.slices.size());
  for (const auto& s : maps.slices) out.push_back(apply_rule(s, rule));
  return out;
}

}  // namespace perfuseg
