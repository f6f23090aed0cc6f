#include "perfuseg/inference.hpp"

#include <cmath>
#include <sstream>

#include "perfuseg/error.hpp"
#include "perfuseg/io.hpp"

namespace perfuseg {

void ClassBands::validate() const {
  require(0.0f < brain_upper && brain_upper <= penumbra_upper && penumbra_upper <= core_upper && core_upper <= 256.0f,
          ErrorKind::Config, "class bands must satisfy 0 < brain <= penumbra <= core <= 256");
}

TissueClass classify_value(float value, const ClassBands& bands) {
  require(value >= 0.0f && value <= 255.0f, ErrorKind::Validation,
          "prediction value " + std::to_string(value) + " outside [0, 255]");
  if (value < bands.brain_upper) return TissueClass::Brain;
  if (value < bands.penumbra_upper) return TissueClass::Penumbra;
  if (value < bands.core_upper) return TissueClass::Core;
  return TissueClass::Background;
}

LabelMap classify_pixels(const LabelMap& map, const ClassBands& bands, const Mask* mask) {
  bands.validate();
  if (mask)
    require(mask->rows() == map.pixels.rows() && mask->cols() == map.pixels.cols(), ErrorKind::Alignment,
            "mask and map sizes differ");
  LabelMap out;
  out.slice_index = map.slice_index;
  out.pixels.resize(map.pixels.rows(), map.pixels.cols());
  for (Eigen::Index i = 0; i < map.pixels.size(); ++i) {
    const auto cls = classify_value(map.pixels.data()[i], bands);
    const bool inside = !mask || mask->data()[i];
    out.pixels.data()[i] = target_value(inside ? cls : TissueClass::Background);
  }
  return out;
}

TileModel tile_model(const Network<float>& net) {
  return TileModel{is_classifier(net.spec().name), [net](const nn::Tensor<float>& x) { return net.forward(x); }};
}

LabelMap predict_slice(const TileModel& model, const CtpVolume& volume, int slice, const PredictConfig& config) {
  require(slice >= 0 && slice < volume.slices(), ErrorKind::Usage, "slice " + std::to_string(slice) + " out of range");
  require(config.batch_size >= 1, ErrorKind::Config, "batch size must be >= 1");
  const auto grid = make_grid(volume.height(), volume.width(), config.stride, config.policy);
  const auto origins = grid.origins();
  const int frames = volume.frames();
  const std::size_t per = static_cast<std::size_t>(frames) * kTileSize * kTileSize;
  std::vector<ImageF> tiles;
  tiles.reserve(origins.size());

  nn::NoGradGuard guard;
  for (std::size_t b = 0; b < origins.size(); b += config.batch_size) {
    const std::size_t end = std::min(origins.size(), b + config.batch_size);
    const int n = static_cast<int>(end - b);
    std::vector<float> input(per * n);
    for (int i = 0; i < n; ++i) {
      const auto block = extract_tile_input(volume, slice, origins[b + i].first, origins[b + i].second);
      std::copy(block.begin(), block.end(), input.begin() + per * i);
    }
    const auto out = model.forward(nn::Tensor<float>::from({n, frames, kTileSize, kTileSize, 1}, std::move(input)));
    const auto v = out.values();
    if (model.classifier) {
      require(out.rank() == 2 && out.dim(0) == n && out.dim(1) == 4, ErrorKind::Shape,
              "classifier output must be (N, 4), got " + nn::to_string(out.shape()));
      for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int k = 1; k < 4; ++k)
          if (v[4 * i + k] > v[4 * i + best]) best = k;
        tiles.push_back(ImageF::Constant(kTileSize, kTileSize, target_value(static_cast<TissueClass>(best))));
      }
    } else {
      require(out.rank() == 3 && out.dim(0) == n && out.dim(1) == kTileSize && out.dim(2) == kTileSize,
              ErrorKind::Shape, "map output must be (N, 16, 16), got " + nn::to_string(out.shape()));
      for (int i = 0; i < n; ++i) {
        ImageF tile(kTileSize, kTileSize);
        for (int y = 0; y < kTileSize; ++y)
          for (int x = 0; x < kTileSize; ++x) tile(y, x) = v[(static_cast<std::size_t>(i) * kTileSize + y) * kTileSize + x] * 255.0f;
        tiles.push_back(std::move(tile));
      }
    }
  }

  LabelMap map;
  map.slice_index = slice;
  map.pixels = grid.compose(tiles);
  // std::round rounds halves away from zero
  for (Eigen::Index i = 0; i < map.pixels.size(); ++i)
    map.pixels.data()[i] = std::clamp(std::round(map.pixels.data()[i]), 0.0f, 255.0f);
  return map;
}

LabelMap predict_slice(const nn::Checkpoint& ckpt, ModelName model, const CtpVolume& volume, int slice,
                       const PredictConfig& config) {
  const auto net = network_from_checkpoint(ckpt, model);
  require(net.spec().config.frames == volume.frames(), ErrorKind::Load,
          "checkpoint expects " + std::to_string(net.spec().config.frames) + " frames, volume has " +
              std::to_string(volume.frames()));
  return predict_slice(tile_model(net), volume, slice, config);
}

std::array<std::uint64_t, 256> value_histogram(const LabelMap& map) {
  std::array<std::uint64_t, 256> counts{};
  const auto bytes = map.to_bytes();
  for (Eigen::Index i = 0; i < bytes.size(); ++i) ++counts[bytes.data()[i]];
  return counts;
}

std::string histogram_csv(const std::array<std::uint64_t, 256>& counts) {
  std::ostringstream out;
  out << "value,count\n";
  for (int v = 0; v < 256; ++v) out << v << ',' << counts[v] << '\n';
  return out.str();
}

void render_output(const LabelMap& map, const std::filesystem::path& path) { io::write_label_map(map, path); }

void render_panel(const LabelMap& prediction, const LabelMap& truth, const std::filesystem::path& path) {
  require(prediction.height() == truth.height() && prediction.width() == truth.width(), ErrorKind::Alignment,
          "prediction and ground truth sizes differ");
  const int h = prediction.height(), w = prediction.width(), gap = 2;
  Image<std::uint8_t> panel(h, 2 * w + gap);
  panel.setConstant(128);
  panel.leftCols(w) = prediction.to_bytes();
  panel.rightCols(w) = truth.to_bytes();
  io::write_pgm(panel, path);
}

}  // namespace perfuseg
