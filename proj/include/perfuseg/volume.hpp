#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "perfuseg/image.hpp"

namespace perfuseg {

struct VolumeGeometry {
  int frames = 30;   // T
  int slices = 13;   // S
  int height = 512;  // M
  int width = 512;   // N
  float frame_interval = 1.0f;  // seconds between consecutive frames
  float spacing = 0.4258f;      // mm / pixel
  float thickness = 5.0f;       // mm

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t voxel_count() const { return frame_size() * slices * frames; }
  bool same_grid(const VolumeGeometry& other) const {
    return frames == other.frames && slices == other.slices && height == other.height && width == other.width;
  }
  bool operator==(const VolumeGeometry&) const = default;
};

/// One patient's 4D perfusion scan, voxels stored contiguously in (t, s, y, x)
/// order, which is also the CTPV on-disk order.
class CtpVolume {
 public:
  CtpVolume() = default;
  CtpVolume(std::string patient_id, VolumeGeometry geometry);
  CtpVolume(std::string patient_id, VolumeGeometry geometry, std::vector<float> voxels);

  const std::string& patient_id() const { return patient_id_; }
  void set_patient_id(std::string id) { patient_id_ = std::move(id); }
  const VolumeGeometry& geometry() const { return geometry_; }
  int frames() const { return geometry_.frames; }
  int slices() const { return geometry_.slices; }
  int height() const { return geometry_.height; }
  int width() const { return geometry_.width; }
  float frame_interval() const { return geometry_.frame_interval; }

  std::span<const float> voxels() const { return voxels_; }
  std::span<float> voxels() { return voxels_; }

  std::size_t offset(int t, int s, int y = 0, int x = 0) const {
    return ((static_cast<std::size_t>(t) * geometry_.slices + s) * geometry_.height + y) * geometry_.width + x;
  }
  float at(int t, int s, int y, int x) const { return voxels_[offset(t, s, y, x)]; }
  float& at(int t, int s, int y, int x) { return voxels_[offset(t, s, y, x)]; }

  ImageMap<float> frame(int t, int s) {
    return ImageMap<float>(voxels_.data() + offset(t, s), geometry_.height, geometry_.width);
  }
  ConstImageMap<float> frame(int t, int s) const {
    return ConstImageMap<float>(voxels_.data() + offset(t, s), geometry_.height, geometry_.width);
  }

  /// Time-attenuation curve of one voxel.
  std::vector<float> curve(int s, int y, int x) const;

  /// Mean over time of one slice.
  ImageF temporal_mean(int s) const;

  /// Throws on T < 1, mismatched buffer size or non-finite voxels; warns when
  /// the slice count falls outside the 13..22 clinical range.
  void validate() const;

  bool operator==(const CtpVolume& other) const = default;

 private:
  std::string patient_id_;
  VolumeGeometry geometry_{};
  std::vector<float> voxels_;
};

}  // namespace perfuseg
