#include "perfuseg/rigid.hpp"

#include <cmath>
#include <numbers>

namespace perfuseg {

namespace {

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

Point2 apply(const RigidTransform2D& t, Point2 p, int height, int width) {
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  const double c = std::cos(radians(t.rotation_deg));
  const double s = std::sin(radians(t.rotation_deg));
  const double x = p.x - cx;
  const double y = p.y - cy;
  return {c * x - s * y + cx + t.dx, s * x + c * y + cy + t.dy};
}

RigidTransform2D inverse(const RigidTransform2D& t) {
  // p = R^-1 (p' - c - d) + c, so the inverse translation is -R^-1 d.
  const double c = std::cos(radians(t.rotation_deg));
  const double s = std::sin(radians(t.rotation_deg));
  return {-t.rotation_deg, -(c * t.dx + s * t.dy), -(-s * t.dx + c * t.dy)};
}

RigidTransform2D compose(const RigidTransform2D& a, const RigidTransform2D& b) {
  // a(b(p)) = Ra (Rb (p - c) + c + db - c) + c + da = Ra Rb (p - c) + c + Ra db + da
  const double c = std::cos(radians(a.rotation_deg));
  const double s = std::sin(radians(a.rotation_deg));
  return {a.rotation_deg + b.rotation_deg, c * b.dx - s * b.dy + a.dx, s * b.dx + c * b.dy + a.dy};
}

float sample_bilinear(const ImageF& image, double x, double y, float fill) {
  const auto h = image.rows();
  const auto w = image.cols();
  if (!(x >= 0.0 && y >= 0.0 && x <= static_cast<double>(w - 1) && y <= static_cast<double>(h - 1))) return fill;
  const auto x0 = static_cast<Eigen::Index>(std::floor(x));
  const auto y0 = static_cast<Eigen::Index>(std::floor(y));
  const auto x1 = std::min<Eigen::Index>(x0 + 1, w - 1);
  const auto y1 = std::min<Eigen::Index>(y0 + 1, h - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = image(y0, x0) * (1.0 - fx) + image(y0, x1) * fx;
  const double bottom = image(y1, x0) * (1.0 - fx) + image(y1, x1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

ImageF warp(const ImageF& image, const RigidTransform2D& t, float fill) {
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  ImageF out(h, w);
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const double c = std::cos(radians(t.rotation_deg));
  const double s = std::sin(radians(t.rotation_deg));
  for (int y = 0; y < h; ++y) {
    const double yy = y - cy;
    for (int x = 0; x < w; ++x) {
      const double xx = x - cx;
      out(y, x) = sample_bilinear(image, c * xx - s * yy + cx + t.dx, s * xx + c * yy + cy + t.dy, fill);
    }
  }
  return out;
}

}  // namespace perfuseg
