#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "perfuseg/image.hpp"
#include "perfuseg/labels.hpp"
#include "perfuseg/param_maps.hpp"
#include "perfuseg/rigid.hpp"
#include "perfuseg/volume.hpp"

namespace perfuseg {

/// Peak-normalized gamma variate: 0 for t <= t0, otherwise
/// A ((t - t0) / (alpha beta))^alpha exp(alpha - (t - t0) / beta), which peaks
/// at exactly A when t = t0 + alpha beta. Config error unless alpha, beta > 0.
double gamma_variate(double t, double amplitude, double t0, double alpha, double beta);
/// Integral over t of gamma_variate: A beta e^alpha Gamma(alpha + 1) / alpha^alpha.
double gamma_variate_area(double amplitude, double alpha, double beta);
/// Largest time derivative, reached at t - t0 = beta (alpha - sqrt(alpha)).
double gamma_variate_max_slope(double amplitude, double alpha, double beta);

enum class PhantomTissue : std::uint8_t { Air, Skull, Healthy, Artery, Penumbra, Core };

struct PhantomSpec {
  int patients = 8;
  int slices = 4;
  int size = 128;  // square slices
  int frames = 30;
  double frame_interval = 1.0;

  double baseline = 40.0;  // HU before contrast arrival
  double air = -1000.0;
  double skull_low = 1500.0;
  double skull_high = 2000.0;
  double noise_sigma = 2.0;

  double alpha = 3.0;
  double beta = 1.0;
  double healthy_amplitude = 300.0;
  double healthy_t0 = 5.0;
  double artery_amplitude_factor = 2.0;
  double artery_t0 = 2.0;
  double penumbra_delay = 4.0;
  double penumbra_amplitude_factor = 0.5;
  double core_delay = 6.0;
  double core_amplitude_factor = 0.1;

  // Geometry, as fractions of the slice size unless noted.
  double brain_semi_y = 0.39;
  double brain_semi_x = 0.32;
  double skull_thickness = 0.045;
  double penumbra_semi_x = 0.42;  // fraction of the brain half-width
  double penumbra_semi_y = 0.50;  // fraction of the brain semi-axis in y
  double core_scale = 0.5;        // core semi-axes relative to the penumbra
  double artery_area = 0.02;      // fraction of the brain area
  double geometry_variation = 0.05;

  // Rigid motion per frame (frame 0 stays put); uniform in +-bounds.
  double jitter_shift = 0.0;     // px
  double jitter_rotation = 0.0;  // degrees

  std::uint64_t seed = 1;

  bool jitter_enabled() const { return jitter_shift > 0.0 || jitter_rotation > 0.0; }
};

struct Ellipse {
  double cx = 0, cy = 0, rx = 0, ry = 0;
  bool contains(double x, double y) const {
    const double u = (x - cx) / rx;
    const double v = (y - cy) / ry;
    return u * u + v * v <= 1.0;
  }
};

struct SliceGeometry {
  Ellipse brain;
  Ellipse skull_outer;
  Ellipse penumbra;  // outer lesion boundary; the core sits inside it
  Ellipse core;
  Ellipse artery;    // circular
};

struct PatientGeometry {
  int lesion_side = 1;  // +1: lesion right of the midline, -1: left
  double skull_phase = 0.0;
  std::vector<SliceGeometry> slices;
};

/// Per-patient geometry drawn from the spec seed. Config error when the
/// nesting core in penumbra in brain (lesion inside one hemisphere, artery in
/// the other) does not hold.
PatientGeometry make_geometry(const PhantomSpec& spec, int patient);
void validate_geometry(const PatientGeometry& g, int size);

struct PhantomPatient {
  CtpVolume volume;
  std::vector<LabelMap> labels;          // one per slice, 4-valued
  std::vector<Mask> brain_masks;         // brain interior inside the skull
  std::vector<Image<std::uint8_t>> tissue;  // PhantomTissue per pixel
  ParametricMaps analytic;               // nominal map values per class
  std::vector<RigidTransform2D> motion;  // per frame, scene -> frame
  PatientGeometry geometry;
};

/// Patient ids are "phantom_00", "phantom_01", ...
std::string phantom_patient_id(int patient);

PhantomPatient generate_patient(const PhantomSpec& spec, int patient);
std::vector<PhantomPatient> generate_cohort(const PhantomSpec& spec);

/// Tissue whose nominal parameters satisfy the rule; equals the rule mask on a
/// noise-free, motion-free phantom.
Mask engineered_region(const PhantomPatient& patient, int slice, RuleId rule);

}  // namespace perfuseg
