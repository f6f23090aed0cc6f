#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "perfuseg/error.hpp"
#include "perfuseg/models.hpp"
#include "perfuseg/nn/gradcheck.hpp"

using namespace perfuseg;
using TF = nn::Tensor<float>;

namespace {

TF random_input(int n, int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(n) * frames * 256);
  for (auto& x : v) x = u(rng);
  return TF::from({n, frames, 16, 16, 1}, std::move(v));
}

std::vector<float> vec(const TF& t) { return {t.values().begin(), t.values().end()}; }

const ModelName kAll[] = {ModelName::Arch1, ModelName::Arch2, ModelName::Arch3, ModelName::MjNet};

}  // namespace

TEST(Models, ForwardProducesDeclaredOutputShapes) {
  for (auto name : kAll) {
    auto net = build_model<float>(name, {}, 3);
    auto y = net.forward(random_input(2, 30, 5));
    nn::Shape want = {2};
    for (int d : net.spec().output_shape()) want.push_back(d);
    EXPECT_EQ(y.shape(), want) << display_name(name);
    for (float v : y.values()) ASSERT_TRUE(std::isfinite(v)) << display_name(name);
    if (is_classifier(name)) {
      for (int r = 0; r < 2; ++r) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += y.values()[r * 4 + k];
        EXPECT_NEAR(s, 1.0, 1e-5);
      }
    } else {
      for (float v : y.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
    }
  }
}

TEST(Models, FifteenFramesChangeOnlyTimeExtents) {
  for (auto name : kAll) {
    const auto a = make_spec(name, {30});
    const auto b = make_spec(name, {15});
    ASSERT_EQ(a.layers.size(), b.layers.size());
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto& sa = a.layers[i].output_shape;
      const auto& sb = b.layers[i].output_shape;
      if (sa.size() != 4) continue;
      for (int ax = 1; ax < 4; ++ax) EXPECT_EQ(sa[ax], sb[ax]) << display_name(name) << " " << a.layers[i].name;
    }
    auto net = build_model<float>(name, {15}, 1);
    EXPECT_NO_THROW(net.forward(random_input(1, 15, 2)));
  }
}

TEST(Models, LayerCountsFollowTheLayersColumn) {
  auto counted = [](const ModelSpec& s) {
    int n = 0;
    for (const auto& l : s.layers) n += l.kind != LayerKind::Flatten;
    return n;
  };
  EXPECT_EQ(counted(make_spec(ModelName::Arch1)), 9);
  EXPECT_EQ(counted(make_spec(ModelName::Arch2)), 10);
  EXPECT_EQ(counted(make_spec(ModelName::Arch3)), 8);
  EXPECT_EQ(counted(make_spec(ModelName::MjNet)), 19);
}

TEST(Models, MjNetFilterLadder) {
  for (auto reading : {DecoderReading::ChannelHalving, DecoderReading::DepthStack}) {
    const auto spec = make_spec(ModelName::MjNet, {30, reading});
    std::vector<int> ladder;
    for (const auto& l : spec.layers)
      if (l.kind == LayerKind::Conv && l.name != "conv12") ladder.push_back(l.filters);
    EXPECT_EQ(ladder, (std::vector<int>{16, 32, 64, 64, 128, 128, 256, 128, 64, 32, 32}));
  }
}

TEST(Models, SkipPairsShareSpatialDims) {
  for (auto reading : {DecoderReading::ChannelHalving, DecoderReading::DepthStack}) {
    const auto spec = make_spec(ModelName::MjNet, {30, reading});
    std::map<std::string, std::vector<int>> taps;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const auto& l = spec.layers[i];
      if (!l.save_as.empty()) taps[l.save_as] = l.output_shape;
      if (l.kind == LayerKind::TransposeConcat) {
        const auto& before = spec.layers[i - 1].output_shape;
        EXPECT_EQ(before[1] * 2, taps.at(l.skip)[1]);
        EXPECT_EQ(before[2] * 2, taps.at(l.skip)[2]);
      }
    }
  }
}

TEST(Models, AuditMatchesClosedFormAndNetworkSize) {
  for (auto name : kAll) {
    const auto spec = make_spec(name);
    const auto audit = count_parameters(spec);
    long long sum = 0;
    for (const auto& row : audit.layers) {
      EXPECT_EQ(row.parameters, row.closed_form) << row.name;
      sum += row.parameters;
    }
    EXPECT_EQ(sum, audit.total);
    auto net = build_model<float>(name);
    long long actual = 0;
    for (const auto& p : net.parameters()) actual += static_cast<long long>(p.tensor.size());
    EXPECT_EQ(actual, audit.total);
  }
}

TEST(Models, FirstConvClosedFormCount) {
  const auto audit = count_parameters(make_spec(ModelName::Arch1));
  EXPECT_EQ(audit.layers[0].parameters, (30 * 3 * 3 * 1 + 1) * 16);
  EXPECT_EQ(audit.layers[0].parameters, 4336);
}

TEST(Models, DeclaredTotals) {
  EXPECT_EQ(count_parameters(make_spec(ModelName::Arch1)).declared, 203320);
  EXPECT_EQ(count_parameters(make_spec(ModelName::Arch2)).declared, 773384);
  EXPECT_EQ(count_parameters(make_spec(ModelName::Arch3)).declared, 63312);
  EXPECT_EQ(count_parameters(make_spec(ModelName::MjNet)).declared, 981553);
}

TEST(Models, DenseWidthRule) {
  // Arch_1 convolutions: (270+1)*16 + (144+1)*32 + (288+1)*32 + (288+1)*64.
  const long long conv = 4336 + 4640 + 9248 + 18496;
  const int f = dense_width_for_total(203320, conv, 256);
  EXPECT_EQ(f, 638);
  for (int other : {f - 1, f + 1}) {
    const long long mine = std::llabs(conv + 261LL * f + 4 - 203320);
    EXPECT_LE(mine, std::llabs(conv + 261LL * other + 4 - 203320));
  }
  const auto spec = make_spec(ModelName::Arch1);
  EXPECT_EQ(spec.layers[8].filters, f);
}

TEST(Models, EmptySpecHasNoParameters) {
  ModelSpec spec;
  spec.layers.clear();
  EXPECT_EQ(count_parameters(spec).total, 0);
}

TEST(Models, UnresolvableChainNamesLayer) {
  ModelSpec spec;
  spec.name = ModelName::Arch1;
  LayerDesc bad;
  bad.kind = LayerKind::Conv;
  bad.name = "too_deep";
  bad.kernel = {40, 3, 3};
  bad.filters = 4;
  bad.depth_padding = nn::DepthPadding::Valid;
  spec.layers = {bad};
  try {
    resolve(spec);
    FAIL() << "expected a model-construction error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ModelConstruction);
    EXPECT_NE(std::string(e.what()).find("too_deep"), std::string::npos);
  }
}

TEST(Models, DepthStackReading) {
  const auto spec = make_spec(ModelName::MjNet, {30, DecoderReading::DepthStack});
  EXPECT_EQ(count_parameters(spec).total, 978033);
  auto net = Network<float>(spec, 1);
  EXPECT_EQ(net.forward(random_input(1, 30, 9)).shape(), (nn::Shape{1, 16, 16}));
}

TEST(Models, SameTileTwiceGivesIdenticalOutputs) {
  auto net = build_model<float>(ModelName::MjNet, {}, 4);
  auto one = random_input(1, 30, 11);
  std::vector<float> twice = vec(one);
  twice.insert(twice.end(), one.values().begin(), one.values().end());
  auto y = net.forward(TF::from({2, 30, 16, 16, 1}, twice));
  for (int i = 0; i < 256; ++i) ASSERT_EQ(y.values()[i], y.values()[256 + i]);
  auto y1 = net.forward(one);
  for (int i = 0; i < 256; ++i) ASSERT_EQ(y.values()[i], y1.values()[i]);
}

TEST(Models, SeededInitIsReproducible) {
  auto a = build_model<float>(ModelName::Arch3, {}, 42);
  auto b = build_model<float>(ModelName::Arch3, {}, 42);
  auto c = build_model<float>(ModelName::Arch3, {}, 43);
  EXPECT_EQ(vec(a.parameters()[0].tensor), vec(b.parameters()[0].tensor));
  EXPECT_NE(vec(a.parameters()[0].tensor), vec(c.parameters()[0].tensor));
  // He-uniform bound sqrt(6 / fan_in), fan_in = 30*3*3.
  const float bound = static_cast<float>(std::sqrt(6.0 / 270.0));
  for (float v : a.parameters()[0].tensor.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(Models, WholeNetworkGradientMatchesFiniteDifferences) {
  // Small-T double network so every parameter can be perturbed cheaply.
  const double kStep = 1e-6;  // larger steps cross ReLU and max kinks somewhere in the net
  auto net = build_model<double>(ModelName::MjNet, {3}, 8);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> xv(3 * 256);
  for (auto& v : xv) v = u(rng);
  const auto x = nn::Tensor<double>::from({1, 3, 16, 16, 1}, xv);
  auto& params = net.parameters();
  // Probe the first-layer kernel, the decoder transpose kernel and the output bias.
  for (std::size_t pi : {std::size_t{0}, std::size_t{14}, params.size() - 1}) {
    auto loss = [&]() { return nn::sum(nn::mul(net.forward(x), net.forward(x))); };
    nn::zero_grad(params);
    nn::backward(loss());
    auto& t = params[pi].tensor;
    const auto grad = t.grad();
    for (std::size_t e = 0; e < std::min<std::size_t>(t.size(), 4); ++e) {
      const double w0 = t.values()[e];
      t.values()[e] = w0 + kStep;
      const double up = loss().item();
      t.values()[e] = w0 - kStep;
      const double down = loss().item();
      t.values()[e] = w0;
      const double numeric = (up - down) / (2 * kStep);
      EXPECT_NEAR(grad[e], numeric, 1e-5 + 1e-4 * std::abs(numeric)) << params[pi].name << "[" << e << "]";
    }
  }
}

TEST(Models, CheckpointRoundTrip) {
  auto net = build_model<float>(ModelName::MjNet, {}, 6);
  const auto bytes = nn::encode_checkpoint(make_checkpoint(net));
  auto back = network_from_checkpoint(nn::decode_checkpoint(bytes), ModelName::MjNet);
  const auto x = random_input(1, 30, 7);
  EXPECT_EQ(vec(net.forward(x)), vec(back.forward(x)));
  try {
    network_from_checkpoint(nn::decode_checkpoint(bytes), ModelName::Arch1);
    FAIL() << "expected a load error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Load);
  }
}

TEST(Models, NamesParse) {
  EXPECT_EQ(model_from_name("mJ-Net"), ModelName::MjNet);
  EXPECT_EQ(model_from_name("ARCH_2"), ModelName::Arch2);
  EXPECT_THROW(model_from_name("resnet"), Error);
}
