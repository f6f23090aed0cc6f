#pragma once

#include <array>

#include "perfuseg/nn/tensor.hpp"

namespace perfuseg::nn {

// Activations are laid out (N, D, H, W, C) with the batch first and channels
// last. Convolution kernels are (kd, kh, kw, C_in, C_out), biases (C_out).

enum class DepthPadding { Same, Valid };

/// Stride-1 3D cross-correlation plus bias. Height and width are zero padded
/// to keep their extent (front pad (k-1)/2); depth is padded the same way or
/// not at all.
template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                      DepthPadding depth = DepthPadding::Same);

using Window3 = std::array<int, 3>;

/// Non-overlapping pooling with stride equal to the window. With
/// allow_partial the trailing partial window of a non-divisible extent is
/// kept (ceil division); otherwise every window extent must divide its axis.
template <typename Scalar>
Tensor<Scalar> max_pool3d(const Tensor<Scalar>& x, Window3 window, bool allow_partial = false);
template <typename Scalar>
Tensor<Scalar> avg_pool3d(const Tensor<Scalar>& x, Window3 window, bool allow_partial = false);

/// Transposed convolution without padding: out = (in - 1) * stride + k along
/// each spatial axis.
template <typename Scalar>
Tensor<Scalar> conv_transpose3d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                                Window3 stride);

template <typename Scalar>
Tensor<Scalar> concat(const Tensor<Scalar>& a, const Tensor<Scalar>& b, int axis);

/// Upsamples `decoder` with a (1,2,2)/(1,2,2) transposed convolution and
/// appends `skip` along the channel axis.
template <typename Scalar>
Tensor<Scalar> transpose_conv_concat(const Tensor<Scalar>& decoder, const Tensor<Scalar>& skip,
                                     const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias);

/// out[..., c] = max(x[..., c], x[..., c + C/2]) over the last axis.
template <typename Scalar>
Tensor<Scalar> channel_halving_max(const Tensor<Scalar>& x);

/// x (N, F) times weights (F, O) plus bias (O).
template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);
/// Softmax over the last axis.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

/// Elementwise product of equally shaped tensors.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Sum of all elements as a (1) tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

}  // namespace perfuseg::nn
