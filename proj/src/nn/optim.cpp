#include "perfuseg/nn/optim.hpp"

#include <cmath>

#include "perfuseg/error.hpp"

namespace perfuseg::nn {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd" || name == "nesterov" || name == "sgd-nesterov") return OptimizerKind::SgdNesterov;
  if (name == "adam") return OptimizerKind::Adam;
  fail(ErrorKind::Config, "unknown optimizer '" + name + "' (expected sgd or adam)");
}

template <typename Scalar>
Optimizer<Scalar>::Optimizer(OptimizerConfig config) : config_(config) {
  require(config.learning_rate >= 0.0, ErrorKind::Config, "learning rate must be non-negative");
  require(config.momentum >= 0.0 && config.momentum < 1.0, ErrorKind::Config, "momentum must lie in [0, 1)");
  require(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0,
          ErrorKind::Config, "Adam betas must lie in [0, 1)");
}

template <typename Scalar>
void Optimizer<Scalar>::step(std::vector<Parameter<Scalar>>& params) {
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.emplace_back(p.tensor.size(), Scalar(0));
      if (config_.kind == OptimizerKind::Adam) second_.emplace_back(p.tensor.size(), Scalar(0));
    }
  }
  require(first_.size() == params.size(), ErrorKind::Shape,
          "optimizer tracks " + std::to_string(first_.size()) + " parameters, got " + std::to_string(params.size()));
  ++step_;
  const auto lr = static_cast<Scalar>(config_.learning_rate);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    require(first_[i].size() == t.size(), ErrorKind::Shape,
            "optimizer buffer for '" + params[i].name + "' does not match parameter shape " + to_string(t.shape()));
    if (t.grad().empty()) continue;
    auto w = t.values();
    auto g = t.grad();
    auto& m = first_[i];
    if (config_.kind == OptimizerKind::SgdNesterov) {
      const auto mu = static_cast<Scalar>(config_.momentum);
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = mu * m[j] - lr * g[j];
        w[j] += mu * m[j] - lr * g[j];
      }
    } else {
      auto& v = second_[i];
      const auto b1 = static_cast<Scalar>(config_.beta1);
      const auto b2 = static_cast<Scalar>(config_.beta2);
      const auto eps = static_cast<Scalar>(config_.epsilon);
      const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(config_.beta1, static_cast<double>(step_)));
      const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(config_.beta2, static_cast<double>(step_)));
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (Scalar(1) - b1) * g[j];
        v[j] = b2 * v[j] + (Scalar(1) - b2) * g[j] * g[j];
        w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
      }
    }
  }
}

template <typename Scalar>
OptimizerState Optimizer<Scalar>::state() const {
  OptimizerState s;
  s.config = config_;
  s.step = step_;
  for (const auto& b : first_) s.first.emplace_back(b.begin(), b.end());
  for (const auto& b : second_) s.second.emplace_back(b.begin(), b.end());
  return s;
}

template <typename Scalar>
void Optimizer<Scalar>::load_state(const OptimizerState& state, const std::vector<Parameter<Scalar>>& params) {
  const bool adam = state.config.kind == OptimizerKind::Adam;
  const bool empty = state.first.empty() && state.second.empty();
  require(empty || (state.first.size() == params.size() && (!adam || state.second.size() == params.size())),
          ErrorKind::Load, "optimizer state holds buffers for a different parameter list");
  for (std::size_t i = 0; i < state.first.size(); ++i)
    require(state.first[i].size() == params[i].tensor.size() &&
                (!adam || state.second[i].size() == params[i].tensor.size()),
            ErrorKind::Load, "optimizer buffer shape mismatch for '" + params[i].name + "'");
  config_ = state.config;
  step_ = state.step;
  first_.clear();
  second_.clear();
  for (const auto& b : state.first) first_.emplace_back(b.begin(), b.end());
  for (const auto& b : state.second) second_.emplace_back(b.begin(), b.end());
}

template <typename Scalar>
void zero_grad(std::vector<Parameter<Scalar>>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template class Optimizer<float>;
template class Optimizer<double>;
template void zero_grad(std::vector<Parameter<float>>&);
template void zero_grad(std::vector<Parameter<double>>&);

}  // namespace perfuseg::nn
