#include "perfuseg/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>

#include "perfuseg/error.hpp"
#include "perfuseg/parallel.hpp"

namespace perfuseg {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

void check_shape(double alpha, double beta) {
  require(alpha > 0.0 && beta > 0.0, ErrorKind::Config,
          "gamma variate needs alpha > 0 and beta > 0 (got " + std::to_string(alpha) + ", " + std::to_string(beta) + ")");
}

// Independent streams per patient and purpose, so enabling jitter does not
// move the geometry or the noise.
std::mt19937_64 stream(std::uint64_t seed, int patient, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(patient), static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

struct TissueCurve {
  double amplitude = 0.0;
  double t0 = 0.0;
};

TissueCurve curve_for(const PhantomSpec& spec, PhantomTissue t) {
  const double a = spec.healthy_amplitude;
  switch (t) {
    case PhantomTissue::Healthy: return {a, spec.healthy_t0};
    case PhantomTissue::Artery: return {a * spec.artery_amplitude_factor, spec.artery_t0};
    case PhantomTissue::Penumbra: return {a * spec.penumbra_amplitude_factor, spec.healthy_t0 + spec.penumbra_delay};
    case PhantomTissue::Core: return {a * spec.core_amplitude_factor, spec.healthy_t0 + spec.core_delay};
    default: return {0.0, 0.0};
  }
}

bool is_brain(PhantomTissue t) { return t != PhantomTissue::Air && t != PhantomTissue::Skull; }

PhantomTissue tissue_at(const SliceGeometry& g, double x, double y) {
  if (g.core.contains(x, y)) return PhantomTissue::Core;
  if (g.penumbra.contains(x, y)) return PhantomTissue::Penumbra;
  if (g.artery.contains(x, y)) return PhantomTissue::Artery;
  if (g.brain.contains(x, y)) return PhantomTissue::Healthy;
  if (g.skull_outer.contains(x, y)) return PhantomTissue::Skull;
  return PhantomTissue::Air;
}

double skull_value(const PhantomSpec& spec, const PatientGeometry& pg, const SliceGeometry& g, double x, double y) {
  const double phi = std::atan2(y - g.brain.cy, x - g.brain.cx);
  return spec.skull_low + (spec.skull_high - spec.skull_low) * (0.5 + 0.5 * std::sin(3.0 * phi + pg.skull_phase));
}

bool ellipse_inside(const Ellipse& inner, const Ellipse& outer) {
  for (int i = 0; i < 720; ++i) {
    const double a = i * std::numbers::pi / 360.0;
    if (!outer.contains(inner.cx + inner.rx * std::cos(a), inner.cy + inner.ry * std::sin(a))) return false;
  }
  return true;
}

void check_spec(const PhantomSpec& s) {
  require(s.patients >= 1 && s.slices >= 1 && s.frames >= 1, ErrorKind::Config,
          "phantom needs at least one patient, slice and frame");
  require(s.size >= 16, ErrorKind::Config, "phantom slice size must be at least 16");
  require(s.frame_interval > 0.0, ErrorKind::Config, "frame_interval must be positive");
  require(s.noise_sigma >= 0.0, ErrorKind::Config, "noise_sigma must be nonnegative");
  require(s.jitter_shift >= 0.0 && s.jitter_rotation >= 0.0, ErrorKind::Config, "jitter bounds must be nonnegative");
  check_shape(s.alpha, s.beta);
  require(s.penumbra_delay > 0.0 && s.penumbra_amplitude_factor < 1.0, ErrorKind::Config,
          "penumbra must be delayed and damped relative to healthy tissue");
  require(s.core_amplitude_factor < s.penumbra_amplitude_factor, ErrorKind::Config,
          "core amplitude must be below the penumbra amplitude");
  require(s.core_amplitude_factor > 0.0 && s.healthy_amplitude > 0.0, ErrorKind::Config, "amplitudes must be positive");
}

}  // namespace

double gamma_variate(double t, double amplitude, double t0, double alpha, double beta) {
  check_shape(alpha, beta);
  if (t <= t0) return 0.0;
  const double s = t - t0;
  return amplitude * std::pow(s / (alpha * beta), alpha) * std::exp(alpha - s / beta);
}

double gamma_variate_area(double amplitude, double alpha, double beta) {
  check_shape(alpha, beta);
  return amplitude * beta * std::exp(alpha) * std::tgamma(alpha + 1.0) / std::pow(alpha, alpha);
}

double gamma_variate_max_slope(double amplitude, double alpha, double beta) {
  check_shape(alpha, beta);
  require(alpha > 1.0, ErrorKind::Config, "max slope is defined for alpha > 1");
  const double s = beta * (alpha - std::sqrt(alpha));
  const double scale = amplitude * std::exp(alpha) / std::pow(alpha * beta, alpha);
  return scale * std::pow(s, alpha - 1.0) * std::exp(-s / beta) * (alpha - s / beta);
}

std::string phantom_patient_id(int patient) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%02d", patient);
  return buf;
}

PatientGeometry make_geometry(const PhantomSpec& spec, int patient) {
  check_spec(spec);
  auto rng = stream(spec.seed, patient, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto vary = [&] { return 1.0 + spec.geometry_variation * (2.0 * unit(rng) - 1.0); };

  const double n = spec.size;
  const double c = (n - 1.0) / 2.0;
  PatientGeometry pg;
  pg.lesion_side = unit(rng) < 0.5 ? -1 : 1;
  pg.skull_phase = 2.0 * std::numbers::pi * unit(rng);
  const double brain_ry = spec.brain_semi_y * n * vary();
  const double brain_rx = spec.brain_semi_x * n * vary();
  const double brain_cy = c + 0.015 * n * (2.0 * unit(rng) - 1.0);
  const double lesion_dy = 0.12 * (2.0 * unit(rng) - 1.0);
  const double pen_vx = vary();
  const double pen_vy = vary();
  const double side = pg.lesion_side;

  for (int k = 0; k < spec.slices; ++k) {
    const double phase = std::sin(std::numbers::pi * (k + 0.5) / spec.slices);
    const double brain_scale = 0.94 + 0.06 * phase;
    const double lesion_scale = 0.6 + 0.4 * phase;
    SliceGeometry g;
    g.brain = {c, brain_cy, brain_rx * brain_scale, brain_ry * brain_scale};
    const double th = spec.skull_thickness * n;
    g.skull_outer = {c, brain_cy, g.brain.rx + th, g.brain.ry + th};
    g.penumbra = {c + side * 0.5 * g.brain.rx, brain_cy + lesion_dy * g.brain.ry,
                  spec.penumbra_semi_x * g.brain.rx * lesion_scale * pen_vx,
                  spec.penumbra_semi_y * g.brain.ry * lesion_scale * pen_vy};
    g.core = {g.penumbra.cx + side * 0.1 * g.penumbra.rx, g.penumbra.cy, spec.core_scale * g.penumbra.rx,
              spec.core_scale * g.penumbra.ry};
    const double r = std::sqrt(spec.artery_area * g.brain.rx * g.brain.ry);
    g.artery = {c - side * 0.45 * g.brain.rx, brain_cy - 0.3 * g.brain.ry, r, r};
    pg.slices.push_back(g);
  }
  validate_geometry(pg, spec.size);
  return pg;
}

void validate_geometry(const PatientGeometry& pg, int size) {
  const double mid = (size - 1) / 2.0;
  for (std::size_t k = 0; k < pg.slices.size(); ++k) {
    const auto& g = pg.slices[k];
    const std::string where = " on slice " + std::to_string(k);
    require(ellipse_inside(g.core, g.penumbra), ErrorKind::Config, "core is not inside the penumbra" + where);
    require(ellipse_inside(g.penumbra, g.brain), ErrorKind::Config, "penumbra is not inside the brain" + where);
    require(ellipse_inside(g.artery, g.brain), ErrorKind::Config, "artery is not inside the brain" + where);
    require(ellipse_inside(g.brain, g.skull_outer), ErrorKind::Config, "skull does not enclose the brain" + where);
    require(g.skull_outer.cx - g.skull_outer.rx > 0.0 && g.skull_outer.cx + g.skull_outer.rx < size - 1.0 &&
                g.skull_outer.cy - g.skull_outer.ry > 0.0 && g.skull_outer.cy + g.skull_outer.ry < size - 1.0,
            ErrorKind::Config, "head does not fit inside the image" + where);
    // The lesion stays in one hemisphere and the artery in the other, clear
    // of the centre column.
    const double lesion_near = pg.lesion_side > 0 ? g.penumbra.cx - g.penumbra.rx : -(g.penumbra.cx + g.penumbra.rx);
    const double artery_near = pg.lesion_side > 0 ? -(g.artery.cx + g.artery.rx) : g.artery.cx - g.artery.rx;
    require(lesion_near > pg.lesion_side * mid + 0.5, ErrorKind::Config, "lesion crosses the midline" + where);
    require(artery_near > -pg.lesion_side * mid + 0.5, ErrorKind::Config, "artery crosses the midline" + where);
  }
}

PhantomPatient generate_patient(const PhantomSpec& spec, int patient) {
  PhantomPatient out;
  out.geometry = make_geometry(spec, patient);
  const int n = spec.size;
  VolumeGeometry vg;
  vg.frames = spec.frames;
  vg.slices = spec.slices;
  vg.height = n;
  vg.width = n;
  vg.frame_interval = static_cast<float>(spec.frame_interval);
  vg.spacing = 1.0f;
  vg.thickness = 5.0f;
  out.volume = CtpVolume(phantom_patient_id(patient), vg);

  // Per-frame curve value of every tissue class.
  std::vector<std::array<double, 6>> level(spec.frames);
  for (int t = 0; t < spec.frames; ++t) {
    const double time = t * spec.frame_interval;
    for (int k = 0; k < 6; ++k) {
      const auto tissue = static_cast<PhantomTissue>(k);
      const auto tc = curve_for(spec, tissue);
      level[t][k] = tissue == PhantomTissue::Air ? spec.air
                                                 : spec.baseline + gamma_variate(time, tc.amplitude, tc.t0, spec.alpha, spec.beta);
    }
  }

  out.motion.assign(spec.frames, RigidTransform2D{});
  if (spec.jitter_enabled()) {
    auto rng = stream(spec.seed, patient, 2);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int t = 1; t < spec.frames; ++t) {
      out.motion[t].rotation_deg = spec.jitter_rotation * unit(rng);
      out.motion[t].dx = spec.jitter_shift * unit(rng);
      out.motion[t].dy = spec.jitter_shift * unit(rng);
    }
  }

  const TissueCurve artery = curve_for(spec, PhantomTissue::Artery);
  const double peak_shift = spec.alpha * spec.beta;
  for (int s = 0; s < spec.slices; ++s) {
    const auto& g = out.geometry.slices[s];
    Image<std::uint8_t> tissue(n, n);
    LabelMap labels;
    labels.slice_index = s;
    labels.pixels = ImageF(n, n);
    Mask brain = Mask::Zero(n, n);
    SliceMaps maps;
    maps.ttp = maps.cbv = maps.cbf = maps.tmax = maps.rcbv = maps.rcbf = ImageF::Constant(n, n, kNaN);
    maps.valid = Mask::Zero(n, n);
    maps.arterial_ttp = static_cast<float>(artery.t0 + peak_shift);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const auto t = tissue_at(g, x, y);
        tissue(y, x) = static_cast<std::uint8_t>(t);
        TissueClass cls = TissueClass::Background;
        if (t == PhantomTissue::Core) cls = TissueClass::Core;
        else if (t == PhantomTissue::Penumbra) cls = TissueClass::Penumbra;
        else if (is_brain(t)) cls = TissueClass::Brain;
        labels.pixels(y, x) = target_value(cls);
        if (!is_brain(t)) continue;
        brain(y, x) = 1;
        maps.valid(y, x) = 1;
        const auto tc = curve_for(spec, t);
        maps.ttp(y, x) = static_cast<float>(tc.t0 + peak_shift);
        maps.cbv(y, x) = static_cast<float>(gamma_variate_area(tc.amplitude, spec.alpha, spec.beta));
        maps.cbf(y, x) = static_cast<float>(gamma_variate_max_slope(tc.amplitude, spec.alpha, spec.beta));
        maps.tmax(y, x) = static_cast<float>(tc.t0 - artery.t0);
        maps.rcbv(y, x) = maps.rcbf(y, x) = static_cast<float>(100.0 * tc.amplitude / spec.healthy_amplitude);
      }
    out.tissue.push_back(std::move(tissue));
    out.labels.push_back(std::move(labels));
    out.brain_masks.push_back(std::move(brain));
    out.analytic.slices.push_back(std::move(maps));
  }

  // Frames: point sampled at pixel centres without motion; with motion every
  // frame averages a 3x3 subpixel grid pulled back through the transform.
  for (int t = 0; t < spec.frames; ++t) {
    const auto back = inverse(out.motion[t]);
    for (int s = 0; s < spec.slices; ++s) {
      auto frame = out.volume.frame(t, s);
      const auto& g = out.geometry.slices[s];
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          if (!spec.jitter_enabled()) {
            const auto k = out.tissue[s](y, x);
            frame(y, x) = static_cast<float>(static_cast<PhantomTissue>(k) == PhantomTissue::Skull
                                                 ? skull_value(spec, out.geometry, g, x, y)
                                                 : level[t][k]);
            continue;
          }
          double sum = 0.0;
          for (int j = -1; j <= 1; ++j)
            for (int i = -1; i <= 1; ++i) {
              const auto q = apply(back, {x + i / 3.0, y + j / 3.0}, n, n);
              const auto k = tissue_at(g, q.x, q.y);
              sum += k == PhantomTissue::Skull ? skull_value(spec, out.geometry, g, q.x, q.y)
                                               : level[t][static_cast<int>(k)];
            }
          frame(y, x) = static_cast<float>(sum / 9.0);
        }
    }
  }

  if (spec.noise_sigma > 0.0) {
    auto rng = stream(spec.seed, patient, 3);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : out.volume.voxels()) v = static_cast<float>(v + noise(rng));
  }
  return out;
}

std::vector<PhantomPatient> generate_cohort(const PhantomSpec& spec) {
  check_spec(spec);
  std::vector<PhantomPatient> cohort(spec.patients);
  parallel_for(cohort.size(), [&](std::size_t p) { cohort[p] = generate_patient(spec, static_cast<int>(p)); });
  return cohort;
}

Mask engineered_region(const PhantomPatient& patient, int slice, RuleId id) {
  require(slice >= 0 && slice < static_cast<int>(patient.analytic.slices.size()), ErrorKind::Validation,
          "slice " + std::to_string(slice) + " out of range");
  return apply_rule(patient.analytic.slices[slice], rule(id));
}

}  // namespace perfuseg
