#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "perfuseg/nn/tensor.hpp"

namespace perfuseg::nn {

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Largest relative disagreement between reverse-mode gradients of fn and
/// central finite differences, over every element of every input.
/// Relative error is |a - n| / max(|a|, |n|, floor).
double gradient_error(const ScalarFn& fn, std::vector<Tensor<double>> inputs, double step = 1e-3,
                      double floor = 1e-6);

struct GradCheckResult {
  std::string op;
  int trials = 0;
  double max_error = 0.0;
  bool passed = false;
};

struct GradCheckConfig {
  std::uint64_t seed = 1;
  int trials = 10;
  double step = 1e-3;
  double tolerance = 1e-4;
};

/// Finite-difference check of every differentiable op on seeded random
/// inputs.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckConfig& config = {});

}  // namespace perfuseg::nn
