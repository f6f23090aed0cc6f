#pragma once

#include "perfuseg/nn/tensor.hpp"

namespace perfuseg::nn {

inline constexpr double kDefaultDiceEpsilon = 1e-6;

/// Soft Dice loss of one prediction/target pair of any (equal) shape:
/// 1 - (2 sum|t*y| + eps) / (sum t^2 + sum y^2 + eps).
template <typename Scalar>
Tensor<Scalar> soft_dice_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                              double epsilon = kDefaultDiceEpsilon);

/// Batch cost: the sum of per-sample soft Dice losses, samples along axis 0.
template <typename Scalar>
Tensor<Scalar> soft_dice_cost(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                              double epsilon = kDefaultDiceEpsilon);

/// Summed categorical cross-entropy -sum t*log(p + 1e-12) over (N, K) rows.
/// Targets must be one-hot; with check_simplex each prediction row must sum
/// to 1 within 1e-6.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, bool check_simplex = true);

}  // namespace perfuseg::nn
