#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "perfuseg/image.hpp"
#include "perfuseg/labels.hpp"
#include "perfuseg/volume.hpp"

namespace perfuseg {

inline constexpr int kTileSize = 16;

/// Spatial transforms applied to core tiles during augmentation.
enum class TileTransform : std::uint8_t { Identity = 0, Rot90, Rot180, Rot270, FlipHorizontal, FlipVertical };

std::string_view to_string(TileTransform t);

struct TileOrigin {
  std::string patient_id;
  int slice = 0;
  int y = 0;  // top-left row (m)
  int x = 0;  // top-left column (n)

  bool operator==(const TileOrigin&) const = default;
};

/// One spatio-temporal network input with its target patch.
struct TileSample {
  int frames = 0;
  std::vector<float> input;  // frames x 16 x 16, (t, y, x) order
  ImageF target;             // 16 x 16 grayscale targets
  TileOrigin origin;
  std::optional<TissueClass> label;
  TileTransform transform = TileTransform::Identity;

  bool augmented() const { return transform != TileTransform::Identity; }
};

enum class OverlapPolicy { Average, LastWins };

struct TileGrid {
  int height = 0;
  int width = 0;
  int stride = kTileSize;
  int tile_size = kTileSize;
  OverlapPolicy policy = OverlapPolicy::Average;
  std::vector<int> rows;  // tile origin rows
  std::vector<int> cols;  // tile origin columns

  std::size_t tile_count() const { return rows.size() * cols.size(); }

  /// Origins in row-major order.
  std::vector<std::pair<int, int>> origins() const;

  /// Number of tiles covering each pixel.
  Image<int> coverage() const;

  /// Pastes tiles (given in origins() order) into a full slice image.
  ImageF compose(const std::vector<ImageF>& tiles) const;
};

/// Start offsets 0, stride, 2*stride, ... with the last one anchored to
/// extent - tile so the border is always covered.
std::vector<int> tile_offsets(int extent, int tile, int stride);

TileGrid make_grid(int height, int width, int stride, OverlapPolicy policy = OverlapPolicy::Average,
                   int tile_size = kTileSize);

/// Extracts the frames x 16 x 16 block at (y, x) of one slice.
std::vector<float> extract_tile_input(const CtpVolume& volume, int slice, int y, int x, int tile_size = kTileSize);

/// Sliding-window tiling of one slice with its ground-truth map.
std::vector<TileSample> tile_slice(const CtpVolume& volume, int slice, const LabelMap& labels, int stride);

/// Majority class of a ground-truth patch, ties broken by clinical severity.
TissueClass assign_tile_label(const ImageF& target);

/// Sets TileSample::label for every sample.
void label_tiles(std::vector<TileSample>& samples);

struct AugmentConfig {
  std::vector<TileTransform> transforms = {TileTransform::Rot90, TileTransform::Rot180, TileTransform::Rot270,
                                           TileTransform::FlipHorizontal, TileTransform::FlipVertical};
  /// When > 0 and smaller than transforms.size(), each core tile receives a
  /// seeded random subset of this many transforms.
  int max_variants = 0;
};

/// Applies a spatial transform to a square image.
ImageF transform_patch(const ImageF& patch, TileTransform t);

TileSample transform_sample(const TileSample& sample, TileTransform t);

/// Appends transformed copies after every Core-labelled sample; all other
/// samples pass through untouched.
std::vector<TileSample> augment_core_tiles(const std::vector<TileSample>& samples, std::uint64_t seed,
                                           const AugmentConfig& config = {});

}  // namespace perfuseg
