#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>

#include "perfuseg/labels.hpp"
#include "perfuseg/models.hpp"
#include "perfuseg/tiling.hpp"
#include "perfuseg/volume.hpp"

namespace perfuseg {

/// Upper (exclusive) edges of the brain, penumbra and core bands; everything
/// at or above core_upper is background.
struct ClassBands {
  float brain_upper = 60.0f;
  float penumbra_upper = 135.0f;
  float core_upper = 234.0f;

  void validate() const;
};

TissueClass classify_value(float value, const ClassBands& bands = {});

/// Maps a continuous [0, 255] map onto the four target values. Pixels outside
/// `mask` become background. Validation error for values outside [0, 255].
LabelMap classify_pixels(const LabelMap& map, const ClassBands& bands = {}, const Mask* mask = nullptr);

/// Batched tile model: (N, T, 16, 16, 1) -> (N, 4) or (N, 16, 16).
struct TileModel {
  bool classifier = false;
  std::function<nn::Tensor<float>(const nn::Tensor<float>&)> forward;
};

TileModel tile_model(const Network<float>& net);

struct PredictConfig {
  int stride = kTileSize;
  OverlapPolicy policy = OverlapPolicy::Average;
  int batch_size = 64;
};

/// Continuous prediction of one slice: mJ-Net maps are scaled by 255, tiles
/// are combined per the grid policy, then rounded half away from zero. The
/// classifier path fills each tile with the target value of its most probable
/// class.
LabelMap predict_slice(const TileModel& model, const CtpVolume& volume, int slice, const PredictConfig& config = {});

/// Rebuilds the network from `ckpt` (Load error when it was trained as a
/// different model) and predicts.
LabelMap predict_slice(const nn::Checkpoint& ckpt, ModelName model, const CtpVolume& volume, int slice,
                       const PredictConfig& config = {});

/// Counts of round(value) for values in [0, 255].
std::array<std::uint64_t, 256> value_histogram(const LabelMap& map);
std::string histogram_csv(const std::array<std::uint64_t, 256>& counts);

/// Writes the map as an 8-bit PGM; Io error when the path is not writable.
void render_output(const LabelMap& map, const std::filesystem::path& path);

/// Prediction and ground truth side by side, separated by a 2 px mid-gray bar.
void render_panel(const LabelMap& prediction, const LabelMap& truth, const std::filesystem::path& path);

}  // namespace perfuseg
