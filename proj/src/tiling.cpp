#include "perfuseg/tiling.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "perfuseg/error.hpp"

namespace perfuseg {

std::string_view to_string(TileTransform t) {
  switch (t) {
    case TileTransform::Identity: return "identity";
    case TileTransform::Rot90: return "rot90";
    case TileTransform::Rot180: return "rot180";
    case TileTransform::Rot270: return "rot270";
    case TileTransform::FlipHorizontal: return "flip_h";
    case TileTransform::FlipVertical: return "flip_v";
  }
  return "identity";
}

std::vector<int> tile_offsets(int extent, int tile, int stride) {
  require(stride >= 1 && stride <= tile, ErrorKind::Config,
          "stride must lie in 1.." + std::to_string(tile) + ", got " + std::to_string(stride));
  require(tile <= extent, ErrorKind::Config,
          "tile size " + std::to_string(tile) + " exceeds slice extent " + std::to_string(extent));
  std::vector<int> offsets;
  for (int o = 0; o + tile <= extent; o += stride) offsets.push_back(o);
  if (offsets.back() != extent - tile) offsets.push_back(extent - tile);
  return offsets;
}

TileGrid make_grid(int height, int width, int stride, OverlapPolicy policy, int tile_size) {
  TileGrid grid;
  grid.height = height;
  grid.width = width;
  grid.stride = stride;
  grid.tile_size = tile_size;
  grid.policy = policy;
  grid.rows = tile_offsets(height, tile_size, stride);
  grid.cols = tile_offsets(width, tile_size, stride);
  return grid;
}

std::vector<std::pair<int, int>> TileGrid::origins() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(tile_count());
  for (int r : rows)
    for (int c : cols) out.emplace_back(r, c);
  return out;
}

Image<int> TileGrid::coverage() const {
  Image<int> cov = Image<int>::Zero(height, width);
  for (auto [r, c] : origins()) cov.block(r, c, tile_size, tile_size) += 1;
  return cov;
}

ImageF TileGrid::compose(const std::vector<ImageF>& tiles) const {
  require(tiles.size() == tile_count(), ErrorKind::Shape,
          "compose got " + std::to_string(tiles.size()) + " tiles for a grid of " + std::to_string(tile_count()));
  ImageD sum = ImageD::Zero(height, width);
  ImageD count = ImageD::Zero(height, width);
  ImageF last = ImageF::Zero(height, width);
  const auto orig = origins();
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& tile = tiles[i];
    require(tile.rows() == tile_size && tile.cols() == tile_size, ErrorKind::Shape, "tile prediction is not 16x16");
    auto [r, c] = orig[i];
    if (policy == OverlapPolicy::Average) {
      sum.block(r, c, tile_size, tile_size) += tile.cast<double>();
      count.block(r, c, tile_size, tile_size) += 1.0;
    } else {
      last.block(r, c, tile_size, tile_size) = tile;
    }
  }
  if (policy == OverlapPolicy::LastWins) return last;
  return (sum / count.max(1.0)).cast<float>();
}

std::vector<float> extract_tile_input(const CtpVolume& volume, int slice, int y, int x, int tile_size) {
  std::vector<float> block(static_cast<std::size_t>(volume.frames()) * tile_size * tile_size);
  auto* out = block.data();
  for (int t = 0; t < volume.frames(); ++t) {
    const auto frame = volume.frame(t, slice);
    for (int dy = 0; dy < tile_size; ++dy)
      for (int dx = 0; dx < tile_size; ++dx) *out++ = frame(y + dy, x + dx);
  }
  return block;
}

std::vector<TileSample> tile_slice(const CtpVolume& volume, int slice, const LabelMap& labels, int stride) {
  require(slice >= 0 && slice < volume.slices(), ErrorKind::Config,
          "slice index " + std::to_string(slice) + " outside 0.." + std::to_string(volume.slices() - 1));
  require(labels.height() == volume.height() && labels.width() == volume.width(), ErrorKind::Alignment,
          "label map " + std::to_string(labels.height()) + "x" + std::to_string(labels.width()) +
              " does not match slice " + std::to_string(volume.height()) + "x" + std::to_string(volume.width()));
  labels.validate_ground_truth();
  const TileGrid grid = make_grid(volume.height(), volume.width(), stride);

  std::vector<TileSample> samples;
  samples.reserve(grid.tile_count());
  for (auto [r, c] : grid.origins()) {
    TileSample s;
    s.frames = volume.frames();
    s.input = extract_tile_input(volume, slice, r, c);
    s.target = labels.pixels.block(r, c, kTileSize, kTileSize);
    s.origin = TileOrigin{volume.patient_id(), slice, r, c};
    samples.push_back(std::move(s));
  }
  return samples;
}

TissueClass assign_tile_label(const ImageF& target) {
  std::array<int, 4> counts{};
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const float v = target.data()[i];
    const auto cls = class_from_target(static_cast<int>(v));
    if (!cls || static_cast<float>(static_cast<int>(v)) != v)
      fail(ErrorKind::LabelEncoding, "tile target value " + std::to_string(v) + " is not a class target");
    ++counts[static_cast<int>(*cls)];
  }
  TissueClass best = TissueClass::Background;
  for (auto c : kAllClasses) {
    const int n = counts[static_cast<int>(c)];
    const int nb = counts[static_cast<int>(best)];
    if (n > nb || (n == nb && severity(c) > severity(best))) best = c;
  }
  return best;
}

void label_tiles(std::vector<TileSample>& samples) {
  for (auto& s : samples) s.label = assign_tile_label(s.target);
}

ImageF transform_patch(const ImageF& patch, TileTransform t) {
  const Eigen::Index n = patch.rows();
  require(patch.cols() == n, ErrorKind::Shape, "tile transforms need a square patch");
  ImageF out(n, n);
  for (Eigen::Index y = 0; y < n; ++y) {
    for (Eigen::Index x = 0; x < n; ++x) {
      switch (t) {
        case TileTransform::Identity: out(y, x) = patch(y, x); break;
        // counter-clockwise quarter turn
        case TileTransform::Rot90: out(y, x) = patch(x, n - 1 - y); break;
        case TileTransform::Rot180: out(y, x) = patch(n - 1 - y, n - 1 - x); break;
        case TileTransform::Rot270: out(y, x) = patch(n - 1 - x, y); break;
        case TileTransform::FlipHorizontal: out(y, x) = patch(y, n - 1 - x); break;
        case TileTransform::FlipVertical: out(y, x) = patch(n - 1 - y, x); break;
      }
    }
  }
  return out;
}

TileSample transform_sample(const TileSample& sample, TileTransform t) {
  TileSample out = sample;
  out.transform = t;
  out.target = transform_patch(sample.target, t);
  const int n = static_cast<int>(sample.target.rows());
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  for (int f = 0; f < sample.frames; ++f) {
    ConstImageMap<float> in(sample.input.data() + f * plane, n, n);
    ImageMap<float> dst(out.input.data() + f * plane, n, n);
    dst = transform_patch(ImageF(in), t);
  }
  return out;
}

std::vector<TileSample> augment_core_tiles(const std::vector<TileSample>& samples, std::uint64_t seed,
                                           const AugmentConfig& config) {
  std::mt19937_64 rng(seed);
  std::vector<TileSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    require(s.label.has_value(), ErrorKind::Validation, "augment_core_tiles needs labelled samples");
    out.push_back(s);
    if (*s.label != TissueClass::Core) continue;
    std::vector<TileTransform> chosen = config.transforms;
    if (config.max_variants > 0 && config.max_variants < static_cast<int>(chosen.size())) {
      std::shuffle(chosen.begin(), chosen.end(), rng);
      chosen.resize(config.max_variants);
      std::sort(chosen.begin(), chosen.end());
    }
    for (auto t : chosen) out.push_back(transform_sample(s, t));
  }
  return out;
}

}  // namespace perfuseg
