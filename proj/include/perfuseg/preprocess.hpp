#pragma once

#include <vector>

#include "perfuseg/image.hpp"
#include "perfuseg/rigid.hpp"
#include "perfuseg/volume.hpp"

namespace perfuseg {

struct RegistrationConfig {
  double max_rotation = 15.0;  // degrees
  double max_shift = 32.0;     // px
  double coarse_rotation_step = 1.5;
  double final_step = 0.125;   // px and degrees
  double smoothing = 1.0;      // Gaussian sigma (px) applied to both frames before scoring
  double bone_window = 700.0;  // values below are raised to this before scoring; -inf disables
  int starts = 4;              // best coarse candidates refined independently
};

struct Registration {
  CtpVolume volume;
  /// Per (t, s), index t * S + s. Frame t was resampled as out(p) = in(T(p)),
  /// so T estimates the motion that carried the reference into frame t.
  std::vector<RigidTransform2D> transforms;

  const RigidTransform2D& at(int t, int s) const {
    return transforms[static_cast<std::size_t>(t) * volume.slices() + s];
  }
};

/// NCC between two equally sized images; 0 when either is constant.
double normalized_cross_correlation(const ImageF& a, const ImageF& b);

/// Rigid transform that best maps `moving` onto `reference`, by NCC of the
/// bone-windowed, smoothed frames over a 4x, 2x, 1x grid search. Frames with
/// nothing above the window are matched on their full range. Identity (with a warning) for a constant frame.
RigidTransform2D register_frame(const ImageF& reference, const ImageF& moving, const RegistrationConfig& config = {});

/// Aligns every frame to frame 0 of its slice. Out-of-frame pixels take the
/// frame minimum. Usage error when T < 2.
Registration register_time_series(const CtpVolume& volume, const RegistrationConfig& config = {});

struct SkullStripConfig {
  double bone_percentile = 99.5;
  double bone_fraction = 0.5;      // bone threshold = max(fraction * percentile, floor)
  double bone_floor = 300.0;
  double foreground_contrast = 10.0;  // |mean - border median| above this is tissue
  int marker_erosion = 2;
};

struct SkullStrip {
  CtpVolume volume;
  std::vector<Mask> masks;  // one per slice
};

/// Brain mask of one temporal-mean image. SkullStrip error naming the slice
/// when no interior marker exists.
Mask brain_mask(const ImageF& mean, int slice, const SkullStripConfig& config = {});
SkullStrip strip_skull(const CtpVolume& volume, const SkullStripConfig& config = {});

enum class NormalizationScope { Global, PerSlice, PerFrame };

struct EnhanceConfig {
  double low_percentile = 1.0;
  double high_percentile = 99.0;
  int levels = 256;
  NormalizationScope scope = NormalizationScope::Global;
};

/// Linear-interpolated percentile (0..100) of a nonempty sample.
double percentile(std::vector<float> values, double p);

/// CDF mapping h(v) = round((cdf(v) - cdf_min) / (n - cdf_min) * (levels - 1))
/// over the pixels selected by `mask` (all when null); others are copied
/// through. A single occupied level is left unchanged. Values must lie in
/// [0, levels).
Image<int> equalize_histogram(const Image<int>& image, const Mask* mask = nullptr, int levels = 256);

/// Percentile stretch, equalization and normalization inside the masks; every
/// voxel outside its slice mask is 0.
CtpVolume enhance_contrast(const CtpVolume& volume, const std::vector<Mask>& masks, const EnhanceConfig& config = {});

struct PreprocessConfig {
  bool register_frames = true;
  RegistrationConfig registration;
  SkullStripConfig skull;
  EnhanceConfig enhance;
};

struct Preprocessed {
  CtpVolume stripped;   // registered, skull stripped, original units
  CtpVolume enhanced;   // network input in [0, 1]
  std::vector<Mask> masks;
  std::vector<RigidTransform2D> transforms;  // empty when registration is skipped
};

Preprocessed preprocess(const CtpVolume& volume, const PreprocessConfig& config = {});

}  // namespace perfuseg
