#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "perfuseg/nn/tensor.hpp"

namespace perfuseg::nn {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
};

enum class OptimizerKind { SgdNesterov, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_name(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdNesterov;
  double learning_rate = 0.01;
  double momentum = 0.9;  // Nesterov
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Serializable optimizer state: the configuration, step counter and one or
/// two moment buffers per parameter (velocity for SGD, m and v for Adam).
struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> first;
  std::vector<std::vector<float>> second;
};

template <typename Scalar>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return step_; }

  /// Applies one update from the gradients currently stored on the
  /// parameters. Buffers are created on the first call.
  ///
  /// SGD with Nesterov momentum:  v <- mu*v - lr*g;  w <- w + mu*v - lr*g.
  /// Adam: bias-corrected first/second moment update.
  void step(std::vector<Parameter<Scalar>>& params);

  OptimizerState state() const;
  void load_state(const OptimizerState& state, const std::vector<Parameter<Scalar>>& params);

 private:
  OptimizerConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<Scalar>> first_;
  std::vector<std::vector<Scalar>> second_;
};

template <typename Scalar>
void zero_grad(std::vector<Parameter<Scalar>>& params);

}  // namespace perfuseg::nn
