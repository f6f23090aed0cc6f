#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "perfuseg/error.hpp"
#include "perfuseg/phantom.hpp"
#include "perfuseg/preprocess.hpp"

using namespace perfuseg;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::Validation;
}

PhantomSpec one_patient(int slices, int frames) {
  PhantomSpec s;
  s.patients = 1;
  s.slices = slices;
  s.frames = frames;
  return s;
}

// Brute-force CDF mapping, counting pixels <= v by rescanning the image.
Image<int> oracle_equalize(const Image<int>& img, int levels) {
  const long n = img.size();
  long cdf_min = n;
  for (Eigen::Index i = 0; i < n; ++i) {
    long c = 0;
    for (Eigen::Index j = 0; j < n; ++j) c += img.data()[j] <= img.data()[i];
    cdf_min = std::min(cdf_min, c);
  }
  if (cdf_min == n) return img;
  Image<int> out(img.rows(), img.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    long c = 0;
    for (Eigen::Index j = 0; j < n; ++j) c += img.data()[j] <= img.data()[i];
    out.data()[i] = static_cast<int>(std::lround(double(c - cdf_min) / double(n - cdf_min) * (levels - 1)));
  }
  return out;
}

}  // namespace

TEST(Registration, ZeroMotionGivesIdentity) {
  auto spec = one_patient(1, 2);
  const auto p = generate_patient(spec, 0);
  const ImageF ref = p.volume.frame(0, 0);
  const ImageF mov = p.volume.frame(1, 0);
  const auto t = register_frame(ref, mov);
  EXPECT_LE(std::abs(t.rotation_deg), 0.25);
  EXPECT_LE(std::abs(t.dx), 0.25);
  EXPECT_LE(std::abs(t.dy), 0.25);
}

TEST(Registration, RecoversInjectedShiftAndRotation) {
  const auto p = generate_patient(one_patient(1, 1), 0);
  const ImageF ref = p.volume.frame(0, 0);
  for (RigidTransform2D injected : {RigidTransform2D{0, 3, -2}, RigidTransform2D{2, 0, 0}, RigidTransform2D{-7.5, -11, 6.5}}) {
    // Scene moved by `injected`: frame(p) = ref(injected^-1 p).
    const ImageF moved = warp(ref, inverse(injected), ref.minCoeff());
    const auto got = register_frame(ref, moved);
    EXPECT_NEAR(got.rotation_deg, injected.rotation_deg, 0.5);
    EXPECT_NEAR(got.dx, injected.dx, 0.5);
    EXPECT_NEAR(got.dy, injected.dy, 0.5);
  }
}

TEST(Registration, PhantomJitterResidualIsSmall) {
  auto spec = one_patient(1, 6);
  spec.jitter_shift = 4.0;
  spec.jitter_rotation = 4.0;
  const auto p = generate_patient(spec, 2);
  const auto r = register_time_series(p.volume);
  for (int t = 0; t < spec.frames; ++t) {
    const auto residual = compose(inverse(r.at(t, 0)), p.motion[t]);
    EXPECT_LE(std::abs(residual.rotation_deg), 0.5) << t;
    EXPECT_LE(std::abs(residual.dx), 0.5) << t;
    EXPECT_LE(std::abs(residual.dy), 0.5) << t;
  }
  EXPECT_EQ(r.at(0, 0), RigidTransform2D{});
}

TEST(Registration, DegenerateInputs) {
  const ImageF flat = ImageF::Constant(32, 32, 5.0f);
  ImageF ramp(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) ramp(y, x) = static_cast<float>(x * y);
  EXPECT_EQ(register_frame(ramp, flat), RigidTransform2D{});
  VolumeGeometry g;
  g.frames = 1;
  g.slices = 1;
  g.height = g.width = 8;
  EXPECT_EQ(kind_of([&] { register_time_series(CtpVolume("x", g)); }), ErrorKind::Usage);
}

TEST(RigidTransform, InverseAndCompose) {
  const RigidTransform2D a{12, 3.5, -1.25}, b{-4, -2, 7};
  const Point2 p{5.0, 9.0};
  const auto back = apply(inverse(a), apply(a, p, 40, 30), 40, 30);
  EXPECT_NEAR(back.x, p.x, 1e-12);
  EXPECT_NEAR(back.y, p.y, 1e-12);
  const auto direct = apply(a, apply(b, p, 40, 30), 40, 30);
  const auto composed = apply(compose(a, b), p, 40, 30);
  EXPECT_NEAR(direct.x, composed.x, 1e-12);
  EXPECT_NEAR(direct.y, composed.y, 1e-12);
}

TEST(SkullStrip, MatchesPhantomInteriorAndIsIdempotent) {
  auto spec = one_patient(4, 30);
  const auto p = generate_patient(spec, 3);
  const auto stripped = strip_skull(p.volume);
  for (int s = 0; s < spec.slices; ++s) {
    const auto& got = stripped.masks[s];
    const auto& want = p.brain_masks[s];
    const auto disagree = (got != want).count();
    EXPECT_LE(static_cast<double>(disagree), 0.02 * static_cast<double>((want > 0).count())) << s;
    for (int t = 0; t < spec.frames; t += 7)
      for (Eigen::Index i = 0; i < got.size(); ++i)
        if (!got.data()[i]) {
          ASSERT_EQ(stripped.volume.frame(t, s).data()[i], 0.0f);
        }
  }
  const auto again = strip_skull(stripped.volume);
  for (int s = 0; s < spec.slices; ++s) EXPECT_TRUE((again.masks[s] == stripped.masks[s]).all()) << s;
  EXPECT_EQ(again.volume, stripped.volume);
}

TEST(SkullStrip, AllZeroSliceFailsNamingIt) {
  auto spec = one_patient(2, 3);
  auto p = generate_patient(spec, 0);
  for (int t = 0; t < spec.frames; ++t) p.volume.frame(t, 1).setZero();
  try {
    strip_skull(p.volume);
    FAIL() << "expected a skull-strip error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SkullStrip);
    EXPECT_NE(std::string(e.what()).find("slice 1"), std::string::npos);
  }
}

TEST(Enhance, EqualizationMatchesCdfOracle) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Image<int> img(12, 9);
    const int spread = 1 + static_cast<int>(rng() % 256);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<int>(rng() % spread);
    EXPECT_TRUE((equalize_histogram(img) == oracle_equalize(img, 256)).all()) << trial;
  }
  // Two levels, 25% / 75%.
  Image<int> two(4, 4);
  two.setConstant(200);
  two.row(0).setConstant(10);
  const auto eq = equalize_histogram(two);
  EXPECT_TRUE((eq == oracle_equalize(two, 256)).all());
  EXPECT_EQ(eq(0, 0), 0);
  EXPECT_EQ(eq(3, 3), 255);
  // One level is left alone.
  const Image<int> flat = Image<int>::Constant(3, 3, 77);
  EXPECT_TRUE((equalize_histogram(flat) == flat).all());
  EXPECT_EQ(kind_of([] { equalize_histogram(Image<int>::Constant(2, 2, 256)); }), ErrorKind::Validation);
}

TEST(Enhance, EqualizationIsMonotone) {
  std::mt19937_64 rng(4);
  Image<int> img(20, 20);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<int>(rng() % 256);
  const auto eq = equalize_histogram(img);
  for (Eigen::Index i = 0; i < img.size(); ++i)
    for (Eigen::Index j = 0; j < img.size(); ++j)
      if (img.data()[i] <= img.data()[j]) {
        ASSERT_LE(eq.data()[i], eq.data()[j]);
      }
}

TEST(Enhance, OutputRangeAndMaskContract) {
  auto spec = one_patient(2, 10);
  const auto p = generate_patient(spec, 1);
  const auto out = enhance_contrast(p.volume, p.brain_masks);
  float lo = 1e9f, hi = -1e9f;
  for (int t = 0; t < spec.frames; ++t)
    for (int s = 0; s < spec.slices; ++s) {
      const auto f = out.frame(t, s);
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        const float v = f.data()[i];
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
        if (!p.brain_masks[s].data()[i]) {
          ASSERT_EQ(v, 0.0f);
        } else {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
    }
  EXPECT_EQ(lo, 0.0f);
  EXPECT_EQ(hi, 1.0f);
}

TEST(Enhance, ConstantFrameStaysConstant) {
  VolumeGeometry g;
  g.frames = 2;
  g.slices = 1;
  g.height = g.width = 6;
  CtpVolume v("c", g);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      v.at(0, 0, y, x) = 42.0f;
      v.at(1, 0, y, x) = static_cast<float>(x + y);
    }
  const auto out = enhance_contrast(v, {Mask::Ones(6, 6)});
  const ImageF f0 = out.frame(0, 0);
  EXPECT_EQ(f0.maxCoeff(), f0.minCoeff());
  EXPECT_EQ(kind_of([&] { enhance_contrast(v, {Mask::Zero(6, 6)}); }), ErrorKind::SkullStrip);
}

TEST(Enhance, PercentileInterpolates) {
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0), 1.0);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 100), 4.0);
  EXPECT_NEAR(percentile({0, 10}, 99), 9.9, 1e-9);
}

TEST(Preprocess, PipelineIsDeterministic) {
  auto spec = one_patient(2, 5);
  spec.jitter_shift = 2.0;
  const auto p = generate_patient(spec, 0);
  const auto a = preprocess(p.volume);
  const auto b = preprocess(p.volume);
  EXPECT_EQ(a.enhanced, b.enhanced);
  EXPECT_EQ(a.stripped, b.stripped);
  EXPECT_EQ(a.transforms.size(), 10u);
}
