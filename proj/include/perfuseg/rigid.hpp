#pragma once

#include "perfuseg/image.hpp"

namespace perfuseg {

/// In-plane rigid motion about the image centre ((W-1)/2, (H-1)/2):
/// p' = R(rotation) (p - c) + c + (dx, dy), with x to the right and y down.
struct RigidTransform2D {
  double rotation_deg = 0.0;
  double dx = 0.0;
  double dy = 0.0;

  bool operator==(const RigidTransform2D&) const = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

Point2 apply(const RigidTransform2D& t, Point2 p, int height, int width);
RigidTransform2D inverse(const RigidTransform2D& t);
/// a after b.
RigidTransform2D compose(const RigidTransform2D& a, const RigidTransform2D& b);

/// Bilinear sample at (x, y); points outside the pixel grid return `fill`.
float sample_bilinear(const ImageF& image, double x, double y, float fill);

/// out(p) = image(t(p)): pulls every output pixel from the transformed
/// location. With t the motion that moved a scene into `image`, this undoes it.
ImageF warp(const ImageF& image, const RigidTransform2D& t, float fill);

}  // namespace perfuseg
