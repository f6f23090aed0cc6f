#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "perfuseg/error.hpp"
#include "perfuseg/io.hpp"
#include "perfuseg/nn/checkpoint.hpp"
#include "perfuseg/nn/loss.hpp"
#include "perfuseg/nn/ops.hpp"
#include "perfuseg/nn/optim.hpp"

using perfuseg::Error;
using perfuseg::ErrorKind;
namespace nn = perfuseg::nn;
using TD = nn::Tensor<double>;

namespace {

TD random_unit(nn::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(nn::numel(shape));
  for (auto& x : v) x = u(rng);
  return TD::from(std::move(shape), std::move(v));
}

}  // namespace

TEST(SoftDice, PerfectPredictionIsExactlyZero) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 50; ++i) {
    auto t = random_unit({16, 16}, rng);
    EXPECT_EQ(nn::soft_dice_loss(t, t).item(), 0.0);
    nn::Tensor<float> tf = nn::Tensor<float>::from({16, 16}, std::vector<float>(t.values().begin(), t.values().end()));
    EXPECT_EQ(nn::soft_dice_loss(tf, tf).item(), 0.0f);
  }
}

TEST(SoftDice, DisjointTilesGiveOneMinusEpsilonRatio) {
  const double eps = 1e-6;
  const auto zeros = TD::zeros({16, 16});
  const auto ones = TD::filled({16, 16}, 1.0);
  const double want = 1.0 - eps / (256.0 + eps);
  EXPECT_NEAR(nn::soft_dice_loss(zeros, ones, eps).item(), want, 1e-12);
  EXPECT_NEAR(nn::soft_dice_loss(ones, zeros, eps).item(), want, 1e-12);
}

TEST(SoftDice, CostSumsPerSampleLosses) {
  std::mt19937_64 rng(4);
  auto p = random_unit({3, 16, 16}, rng);
  auto t = random_unit({3, 16, 16}, rng);
  double sum = 0;
  for (int i = 0; i < 3; ++i) {
    auto slice = [&](const TD& x) {
      return TD::from({16, 16}, std::vector<double>(x.values().begin() + i * 256, x.values().begin() + (i + 1) * 256));
    };
    sum += nn::soft_dice_loss(slice(p), slice(t)).item();
  }
  EXPECT_NEAR(nn::soft_dice_cost(p, t).item(), sum, 1e-12);
}

TEST(SoftDice, RejectsNonPositiveEpsilonAndShapeMismatch) {
  auto a = TD::zeros({4, 4});
  try {
    nn::soft_dice_loss(a, a, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  EXPECT_THROW(nn::soft_dice_loss(a, TD::zeros({4, 5})), Error);
}

TEST(CrossEntropy, OneHotClosedForm) {
  auto p = TD::from({2, 4}, {0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25});
  auto t = TD::from({2, 4}, {0, 0, 1, 0, 1, 0, 0, 0});
  EXPECT_NEAR(nn::cross_entropy(p, t).item(), -std::log(0.3 + 1e-12) - std::log(0.25 + 1e-12), 1e-12);
}

TEST(CrossEntropy, ValidatesInputs) {
  auto p = TD::from({1, 4}, {0.25, 0.25, 0.25, 0.25});
  try {
    nn::cross_entropy(p, TD::from({1, 4}, {0.5, 0.5, 0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
  }
  auto off = TD::from({1, 4}, {0.5, 0.5, 0.5, 0.5});
  EXPECT_THROW(nn::cross_entropy(off, TD::from({1, 4}, {1, 0, 0, 0})), Error);
  EXPECT_NO_THROW(nn::cross_entropy(off, TD::from({1, 4}, {1, 0, 0, 0}), false));
}

namespace {

// Loss g.w with constant gradient g.
std::vector<nn::Parameter<double>> linear_problem(double w0) {
  return {{"w", TD::from({2}, {w0, -w0}, true)}};
}

void linear_grad(std::vector<nn::Parameter<double>>& params, const TD& g) {
  nn::zero_grad(params);
  nn::backward(nn::sum(nn::mul(params[0].tensor, g)));
}

}  // namespace

TEST(Optimizer, NesterovTwoStepsMatchHandRecursion) {
  const double lr = 0.01, mu = 0.9, w0 = 0.7;
  const auto g = TD::from({2}, {1.5, -0.5});
  auto params = linear_problem(w0);
  nn::Optimizer<double> opt({nn::OptimizerKind::SgdNesterov, lr, mu});
  linear_grad(params, g);
  opt.step(params);
  const double w1 = w0 - lr * 1.5 * (1 + mu);
  EXPECT_NEAR(params[0].tensor.values()[0], w1, 1e-15);
  linear_grad(params, g);
  opt.step(params);
  const double w2 = w1 - lr * 1.5 * (mu * (1 + mu) + 1);
  EXPECT_NEAR(params[0].tensor.values()[0], w2, 1e-15);
  EXPECT_NEAR(params[0].tensor.values()[1], -w0 + lr * 0.5 * (1 + mu) + lr * 0.5 * (mu * (1 + mu) + 1), 1e-15);
}

TEST(Optimizer, ZeroMomentumIsPlainSgd) {
  auto params = linear_problem(1.0);
  nn::Optimizer<double> opt({nn::OptimizerKind::SgdNesterov, 0.1, 0.0});
  linear_grad(params, TD::from({2}, {2.0, 3.0}));
  opt.step(params);
  EXPECT_NEAR(params[0].tensor.values()[0], 1.0 - 0.2, 1e-15);
  EXPECT_NEAR(params[0].tensor.values()[1], -1.0 - 0.3, 1e-15);
}

TEST(Optimizer, ZeroLearningRateFreezesWeights) {
  auto params = linear_problem(0.3);
  nn::Optimizer<double> opt({nn::OptimizerKind::SgdNesterov, 0.0, 0.9});
  for (int i = 0; i < 3; ++i) {
    linear_grad(params, TD::from({2}, {1.0, 1.0}));
    opt.step(params);
  }
  EXPECT_EQ(params[0].tensor.values()[0], 0.3);
}

TEST(Optimizer, AdamFirstStepIsSignedLearningRate) {
  auto params = linear_problem(0.5);
  nn::OptimizerConfig c;
  c.kind = nn::OptimizerKind::Adam;
  c.learning_rate = 0.001;
  nn::Optimizer<double> opt(c);
  linear_grad(params, TD::from({2}, {4.0, -0.25}));
  opt.step(params);
  EXPECT_NEAR(params[0].tensor.values()[0], 0.5 - 0.001 * 4.0 / (4.0 + 1e-7), 1e-12);
  EXPECT_NEAR(params[0].tensor.values()[1], -0.5 + 0.001 * 0.25 / (0.25 + 1e-7), 1e-12);
}

TEST(Optimizer, StateRestoresContinuation) {
  const auto g = TD::from({2}, {1.0, 2.0});
  auto a = linear_problem(0.2);
  nn::Optimizer<double> oa;
  linear_grad(a, g);
  oa.step(a);
  auto b = linear_problem(0.0);
  b[0].tensor.values()[0] = a[0].tensor.values()[0];
  b[0].tensor.values()[1] = a[0].tensor.values()[1];
  nn::Optimizer<double> ob;
  ob.load_state(oa.state(), b);
  linear_grad(a, g);
  oa.step(a);
  linear_grad(b, g);
  ob.step(b);
  EXPECT_NEAR(a[0].tensor.values()[0], b[0].tensor.values()[0], 1e-7);
  EXPECT_EQ(ob.steps(), 2u);
}

TEST(Checkpoint, RoundTripWithOptimizer) {
  nn::Checkpoint c;
  c.model_name = "mjnet";
  c.metadata["frames"] = "30";
  c.params.push_back({"conv1.kernel", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.params.push_back({"conv1.bias", {3}, {0.5f, -0.5f, 0}});
  nn::OptimizerState st;
  st.step = 7;
  st.first = {{1, 2}, {3}};
  c.optimizer = st;
  const auto bytes = nn::encode_checkpoint(c);
  const auto back = nn::decode_checkpoint(bytes);
  EXPECT_EQ(back.model_name, "mjnet");
  EXPECT_EQ(back.metadata, c.metadata);
  EXPECT_EQ(back.params, c.params);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(back.optimizer->step, 7u);
  EXPECT_EQ(back.optimizer->first, st.first);
  EXPECT_EQ(nn::encode_checkpoint(back), bytes);
}

TEST(Checkpoint, UnknownSectionsAreSkipped) {
  nn::Checkpoint c;
  c.model_name = "arch1";
  c.params.push_back({"w", {2}, {1, 2}});
  auto bytes = nn::encode_checkpoint(c);
  const std::string tag = "XTRA";
  bytes.insert(bytes.end(), tag.begin(), tag.end());
  perfuseg::io::put_u64(bytes, 3);
  bytes.insert(bytes.end(), {9, 9, 9});
  const auto back = nn::decode_checkpoint(bytes);
  EXPECT_EQ(back.params, c.params);
}

TEST(Checkpoint, TruncatedOrForeignBytes) {
  nn::Checkpoint c;
  c.model_name = "arch1";
  c.params.push_back({"w", {2}, {1, 2}});
  auto bytes = nn::encode_checkpoint(c);
  bytes.pop_back();
  EXPECT_THROW(nn::decode_checkpoint(bytes), Error);
  std::vector<std::uint8_t> junk(16, 'x');
  EXPECT_THROW(nn::decode_checkpoint(junk), Error);
}

TEST(Checkpoint, ImportRejectsMismatches) {
  std::vector<nn::Parameter<float>> params = {{"w", nn::Tensor<float>::zeros({2}, true)}};
  try {
    nn::import_parameters<float>({{"w", {3}, {1, 2, 3}}}, params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Load);
  }
  EXPECT_THROW(nn::import_parameters<float>({{"v", {2}, {1, 2}}}, params), Error);
  nn::import_parameters<float>({{"w", {2}, {1, 2}}}, params);
  EXPECT_EQ(params[0].tensor.values()[1], 2.0f);
}
