#include "perfuseg/volume.hpp"

#include <cmath>

#include "perfuseg/error.hpp"
#include "perfuseg/log.hpp"

namespace perfuseg {

CtpVolume::CtpVolume(std::string patient_id, VolumeGeometry geometry)
    : patient_id_(std::move(patient_id)), geometry_(geometry), voxels_(geometry.voxel_count(), 0.0f) {}

CtpVolume::CtpVolume(std::string patient_id, VolumeGeometry geometry, std::vector<float> voxels)
    : patient_id_(std::move(patient_id)), geometry_(geometry), voxels_(std::move(voxels)) {
  require(voxels_.size() == geometry_.voxel_count(), ErrorKind::Shape,
          "voxel buffer holds " + std::to_string(voxels_.size()) + " values, geometry needs " +
              std::to_string(geometry_.voxel_count()));
}

std::vector<float> CtpVolume::curve(int s, int y, int x) const {
  std::vector<float> out(geometry_.frames);
  for (int t = 0; t < geometry_.frames; ++t) out[t] = at(t, s, y, x);
  return out;
}

ImageF CtpVolume::temporal_mean(int s) const {
  ImageF acc = ImageF::Zero(geometry_.height, geometry_.width);
  for (int t = 0; t < geometry_.frames; ++t) acc += frame(t, s);
  return acc / static_cast<float>(geometry_.frames);
}

void CtpVolume::validate() const {
  const auto& g = geometry_;
  require(g.frames >= 1, ErrorKind::Validation, "volume needs at least one frame");
  require(g.slices >= 1 && g.height >= 1 && g.width >= 1, ErrorKind::Validation, "volume has an empty dimension");
  require(voxels_.size() == g.voxel_count(), ErrorKind::Shape, "voxel buffer does not match geometry");
  for (std::size_t i = 0; i < voxels_.size(); ++i) {
    if (!std::isfinite(voxels_[i])) fail(ErrorKind::Validation, "non-finite voxel at linear index " + std::to_string(i));
  }
  if (g.slices < 13 || g.slices > 22)
    log::warn("volume '", patient_id_, "' has ", g.slices, " slices; clinical acquisitions use 13..22");
}

}  // namespace perfuseg
