#include "perfuseg/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "perfuseg/error.hpp"
#include "perfuseg/nn/loss.hpp"
#include "perfuseg/nn/ops.hpp"

namespace perfuseg::nn {

double gradient_error(const ScalarFn& fn, std::vector<Tensor<double>> inputs, double step, double floor) {
  for (auto& t : inputs) {
    t = t.detach();
    t.set_requires_grad(true);
  }
  const auto loss = fn(inputs);
  backward(loss);

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.size(), 0.0);
    if (!t.grad().empty()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double orig = t.values()[j];
      t.values()[j] = orig + step;
      const double up = fn(inputs).item();
      t.values()[j] = orig - step;
      const double down = fn(inputs).item();
      t.values()[j] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[j] - numeric) / denom);
    }
  }
  return worst;
}

namespace {

using T = Tensor<double>;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  T uniform(Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = d(rng_);
    return T::from(std::move(shape), std::move(v));
  }

  // Values kept at least `gap` apart from one another, so max selections
  // cannot flip under a finite-difference step.
  T distinct(Shape shape, double gap) {
    std::vector<double> v(numel(shape));
    std::iota(v.begin(), v.end(), 0.0);
    std::shuffle(v.begin(), v.end(), rng_);
    for (auto& x : v) x = (x - static_cast<double>(v.size()) / 2) * gap;
    return T::from(std::move(shape), std::move(v));
  }

  // Values with magnitude in [margin, 1], away from the ReLU kink.
  T away_from_zero(Shape shape, double margin) {
    std::uniform_real_distribution<double> mag(margin, 1.0);
    std::bernoulli_distribution neg(0.5);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = neg(rng_) ? -mag(rng_) : mag(rng_);
    return T::from(std::move(shape), std::move(v));
  }

  // Rows on the probability simplex whose hot entry is at least 0.3, with a
  // matching one-hot target.
  std::pair<T, T> simplex_with_target(int rows, int k) {
    std::uniform_real_distribution<double> d(0.2, 1.0);
    std::uniform_int_distribution<int> pick(0, k - 1);
    std::vector<double> p(static_cast<std::size_t>(rows) * k), t(p.size(), 0.0);
    for (int r = 0; r < rows; ++r) {
      const int hot = pick(rng_);
      double total = 0.0;
      for (int i = 0; i < k; ++i) total += (p[r * k + i] = d(rng_));
      p[r * k + hot] += total;  // hot share >= 0.5
      total *= 2.0;
      for (int i = 0; i < k; ++i) p[r * k + i] /= total;
      t[r * k + hot] = 1.0;
    }
    return {T::from({rows, k}, std::move(p)), T::from({rows, k}, std::move(t))};
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Contracts an op's output with fixed random weights into a scalar.
ScalarFn weighted(std::function<T(const std::vector<T>&)> op, T weights) {
  return [op = std::move(op), weights](const std::vector<T>& in) { return sum(mul(op(in), weights)); };
}

struct Case {
  std::string name;
  std::function<std::pair<ScalarFn, std::vector<T>>(Sampler&)> make;
};

std::vector<Case> cases() {
  std::vector<Case> out;
  out.push_back({"conv3d_same", [](Sampler& s) {
                   auto x = s.uniform({2, 3, 4, 4, 2}, -1, 1);
                   auto k = s.uniform({3, 3, 3, 2, 3}, -1, 1);
                   auto b = s.uniform({3}, -1, 1);
                   auto w = s.uniform({2, 3, 4, 4, 3}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return conv3d(in[0], in[1], in[2]); }, w),
                                    std::vector<T>{x, k, b}};
                 }});
  out.push_back({"conv3d_valid_depth", [](Sampler& s) {
                   auto x = s.uniform({1, 4, 5, 5, 2}, -1, 1);
                   auto k = s.uniform({3, 3, 3, 2, 2}, -1, 1);
                   auto b = s.uniform({2}, -1, 1);
                   auto w = s.uniform({1, 2, 5, 5, 2}, -1, 1);
                   return std::pair{
                       weighted([](const auto& in) { return conv3d(in[0], in[1], in[2], DepthPadding::Valid); }, w),
                       std::vector<T>{x, k, b}};
                 }});
  out.push_back({"max_pool3d", [](Sampler& s) {
                   auto x = s.distinct({2, 4, 4, 4, 2}, 0.01);
                   auto w = s.uniform({2, 2, 2, 2, 2}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return max_pool3d(in[0], {2, 2, 2}); }, w),
                                    std::vector<T>{x}};
                 }});
  out.push_back({"max_pool3d_partial", [](Sampler& s) {
                   auto x = s.distinct({1, 3, 5, 5, 2}, 0.01);
                   auto w = s.uniform({1, 2, 3, 3, 2}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return max_pool3d(in[0], {2, 2, 2}, true); }, w),
                                    std::vector<T>{x}};
                 }});
  out.push_back({"avg_pool3d", [](Sampler& s) {
                   auto x = s.uniform({2, 4, 4, 4, 2}, -1, 1);
                   auto w = s.uniform({2, 1, 2, 2, 2}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return avg_pool3d(in[0], {4, 2, 2}); }, w),
                                    std::vector<T>{x}};
                 }});
  out.push_back({"avg_pool3d_partial", [](Sampler& s) {
                   auto x = s.uniform({1, 3, 5, 5, 2}, -1, 1);
                   auto w = s.uniform({1, 2, 3, 3, 2}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return avg_pool3d(in[0], {2, 2, 2}, true); }, w),
                                    std::vector<T>{x}};
                 }});
  out.push_back({"conv_transpose3d", [](Sampler& s) {
                   auto x = s.uniform({2, 2, 3, 3, 3}, -1, 1);
                   auto k = s.uniform({1, 2, 2, 3, 2}, -1, 1);
                   auto b = s.uniform({2}, -1, 1);
                   auto w = s.uniform({2, 2, 6, 6, 2}, -1, 1);
                   return std::pair{
                       weighted([](const auto& in) { return conv_transpose3d(in[0], in[1], in[2], {1, 2, 2}); }, w),
                       std::vector<T>{x, k, b}};
                 }});
  out.push_back({"conv_transpose3d_overlap", [](Sampler& s) {
                   auto x = s.uniform({1, 2, 3, 3, 2}, -1, 1);
                   auto k = s.uniform({2, 3, 3, 2, 2}, -1, 1);
                   auto b = s.uniform({2}, -1, 1);
                   auto w = s.uniform({1, 3, 7, 7, 2}, -1, 1);
                   return std::pair{
                       weighted([](const auto& in) { return conv_transpose3d(in[0], in[1], in[2], {1, 2, 2}); }, w),
                       std::vector<T>{x, k, b}};
                 }});
  out.push_back({"transpose_conv_concat", [](Sampler& s) {
                   auto x = s.uniform({2, 1, 2, 2, 3}, -1, 1);
                   auto skip = s.uniform({2, 1, 4, 4, 2}, -1, 1);
                   auto k = s.uniform({1, 2, 2, 3, 2}, -1, 1);
                   auto b = s.uniform({2}, -1, 1);
                   auto w = s.uniform({2, 1, 4, 4, 4}, -1, 1);
                   return std::pair{
                       weighted([](const auto& in) { return transpose_conv_concat(in[0], in[1], in[2], in[3]); }, w),
                       std::vector<T>{x, skip, k, b}};
                 }});
  out.push_back({"channel_halving_max", [](Sampler& s) {
                   auto x = s.distinct({2, 1, 3, 3, 4}, 0.01);
                   auto w = s.uniform({2, 1, 3, 3, 2}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return channel_halving_max(in[0]); }, w),
                                    std::vector<T>{x}};
                 }});
  out.push_back({"dense", [](Sampler& s) {
                   auto x = s.uniform({3, 5}, -1, 1);
                   auto k = s.uniform({5, 4}, -1, 1);
                   auto b = s.uniform({4}, -1, 1);
                   auto w = s.uniform({3, 4}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return dense(in[0], in[1], in[2]); }, w),
                                    std::vector<T>{x, k, b}};
                 }});
  out.push_back({"relu", [](Sampler& s) {
                   auto x = s.away_from_zero({4, 6}, 0.05);
                   auto w = s.uniform({4, 6}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return relu(in[0]); }, w), std::vector<T>{x}};
                 }});
  out.push_back({"sigmoid", [](Sampler& s) {
                   auto x = s.uniform({4, 6}, -4, 4);
                   auto w = s.uniform({4, 6}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return sigmoid(in[0]); }, w), std::vector<T>{x}};
                 }});
  out.push_back({"softmax", [](Sampler& s) {
                   auto x = s.uniform({3, 4}, -2, 2);
                   auto w = s.uniform({3, 4}, -1, 1);
                   return std::pair{weighted([](const auto& in) { return softmax(in[0]); }, w), std::vector<T>{x}};
                 }});
  out.push_back({"soft_dice", [](Sampler& s) {
                   auto y = s.uniform({2, 4, 4}, 0.05, 1);
                   auto t = s.uniform({2, 4, 4}, 0.05, 1);
                   return std::pair{ScalarFn([](const auto& in) { return soft_dice_cost(in[0], in[1]); }),
                                    std::vector<T>{y, t}};
                 }});
  out.push_back({"cross_entropy", [](Sampler& s) {
                   auto [p, t] = s.simplex_with_target(3, 4);
                   return std::pair{ScalarFn([t](const auto& in) { return cross_entropy(in[0], t, false); }),
                                    std::vector<T>{p}};
                 }});
  out.push_back({"softmax_cross_entropy", [](Sampler& s) {
                   auto x = s.uniform({3, 4}, -2, 2);
                   auto [p, t] = s.simplex_with_target(3, 4);
                   return std::pair{ScalarFn([t](const auto& in) { return cross_entropy(softmax(in[0]), t); }),
                                    std::vector<T>{x}};
                 }});
  return out;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckConfig& config) {
  std::vector<GradCheckResult> results;
  std::uint64_t case_index = 0;
  for (const auto& c : cases()) {
    GradCheckResult r{c.name, config.trials, 0.0, true};
    for (int trial = 0; trial < config.trials; ++trial) {
      Sampler sampler(config.seed * 1000003ULL + case_index * 1009ULL + static_cast<std::uint64_t>(trial));
      auto [fn, inputs] = c.make(sampler);
      r.max_error = std::max(r.max_error, gradient_error(fn, std::move(inputs), config.step));
    }
    r.passed = r.max_error < config.tolerance;
    results.push_back(r);
    ++case_index;
  }
  return results;
}

}  // namespace perfuseg::nn
