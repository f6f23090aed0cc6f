#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace perfuseg {

/// Dense 2D image, row-major so that (y, x) indexing matches the on-disk
/// raster order of PGM and CTPV files.
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ImageMap = Eigen::Map<Image<Scalar>>;

template <typename Scalar>
using ConstImageMap = Eigen::Map<const Image<Scalar>>;

using ImageF = Image<float>;
using ImageD = Image<double>;

/// Binary mask, 1 inside / 0 outside.
using Mask = Image<std::uint8_t>;

}  // namespace perfuseg
