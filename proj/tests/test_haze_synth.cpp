#include <gtest/gtest.h>

#include <cmath>

#include "dehaze/haze_synth.hpp"
#include "test_util.hpp"

namespace dehaze {
namespace {

using testing::random_image;

DepthMap depth_of(std::int64_t h, std::int64_t w, float v) {
  return make_depth_map(Image(1, h, w, v), DepthScaling::kRaw);
}

TransmissionMap constant_t(std::int64_t h, std::int64_t w, float v) {
  return TransmissionMap{Image(1, h, w, v)};
}

TEST(Transmission, ZeroDepthIsOne) {
  const auto t = transmission_from_depth(depth_of(4, 5, 0.0f), 1.3);
  for (float v : t.values.pixels.values()) EXPECT_EQ(v, 1.0f);
}

TEST(Transmission, LnTwoHalves) {
  const auto t = transmission_from_depth(depth_of(2, 2, static_cast<float>(std::log(2.0))), 1.0);
  for (float v : t.values.pixels.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Transmission, DenseHazeValue) {
  // exp(−1.8) from an independent evaluation.
  const auto t = transmission_from_depth(depth_of(1, 1, 1.0f), 1.8);
  EXPECT_NEAR(t.values.pixels[0], 0.16529888822158653, 1e-7);
}

TEST(Transmission, MonotoneAndInRange) {
  Image d(1, 1, 50);
  for (int i = 0; i < 50; ++i) d.at(0, 0, i) = 0.1f * static_cast<float>(i);
  const auto t = transmission_from_depth(make_depth_map(d, DepthScaling::kRaw), 0.9);
  for (int i = 1; i < 50; ++i) {
    EXPECT_LE(t.values.at(0, 0, i), t.values.at(0, 0, i - 1));
    EXPECT_GT(t.values.at(0, 0, i), 0.0f);
  }
}

TEST(Transmission, DepthAndBetaScaleInterchange) {
  const Image d = random_image(1, 8, 8, 1, 0.0, 3.0);
  for (double k : {0.25, 0.5, 2.0, 4.0}) {
    Image kd = d;
    for (auto& v : kd.pixels.values()) v *= static_cast<float>(k);
    const auto a = transmission_from_depth(make_depth_map(kd, DepthScaling::kRaw), 1.1);
    const auto b = transmission_from_depth(make_depth_map(d, DepthScaling::kRaw), 1.1 * k);
    EXPECT_EQ(a.values, b.values) << k;
  }
}

TEST(Transmission, Errors) {
  EXPECT_THROW(transmission_from_depth(depth_of(2, 2, 1.0f), 0.0), InvalidArgument);
  EXPECT_THROW(transmission_from_depth(depth_of(2, 2, 1.0f), -1.0), InvalidArgument);
  EXPECT_THROW(make_depth_map(Image(1, 2, 2, -0.1f)), InvalidArgument);
  EXPECT_THROW(make_depth_map(Image(3, 2, 2, 0.5f)), ShapeError);
}

TEST(DepthMap, NormalizesToUnitMax) {
  Image d(1, 1, 3);
  d.at(0, 0, 0) = 2;
  d.at(0, 0, 1) = 4;
  const auto m = make_depth_map(d);
  EXPECT_EQ(m.values.at(0, 0, 0), 0.5f);
  EXPECT_EQ(m.values.at(0, 0, 1), 1.0f);
  EXPECT_EQ(m.values.at(0, 0, 2), 0.0f);
  // All-zero depth stays zero rather than dividing by zero.
  const auto zero = make_depth_map(Image(1, 2, 2));
  for (float v : zero.values.pixels.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Scattering, NoHazeAndFullHaze) {
  const Image j = random_image(3, 5, 6, 2);
  EXPECT_EQ(apply_scattering(j, constant_t(5, 6, 1.0f), {0.8, 0.9, 1.0}), j);
  const Image full = apply_scattering(j, constant_t(5, 6, 0.0f), {0.8, 0.9, 1.0});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 5; ++y) EXPECT_FLOAT_EQ(full.at(c, y, 3), 0.8f + 0.1f * static_cast<float>(c));
  }
}

TEST(Scattering, HandValue) {
  const Image i = apply_scattering(Image(3, 1, 1, 0.2f), constant_t(1, 1, 0.5f), {0.9, 0.9, 0.9});
  for (float v : i.pixels.values()) EXPECT_NEAR(v, 0.55f, 1e-7);
}

TEST(Scattering, ConvexBoundOnThousandPixels) {
  const Image j = random_image(3, 25, 40, 3);
  const TransmissionMap t{random_image(1, 25, 40, 4, 1e-3, 1.0)};
  const std::array<double, 3> a{0.72, 0.95, 0.81};
  const Image i = apply_scattering(j, t, a);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 25; ++y) {
      for (int x = 0; x < 40; ++x) {
        const float jv = j.at(c, y, x), av = static_cast<float>(a[c]);
        EXPECT_GE(i.at(c, y, x), std::min(jv, av));
        EXPECT_LE(i.at(c, y, x), std::max(jv, av));
      }
    }
  }
}

TEST(Scattering, AirlightEqualToSceneIsFixedPoint) {
  const Image j(3, 4, 4, 0.75f);
  const TransmissionMap t{random_image(1, 4, 4, 5)};
  EXPECT_EQ(apply_scattering(j, t, {0.75, 0.75, 0.75}), j);
}

TEST(Scattering, InversionRecoversScene) {
  const Image j = random_image(3, 16, 16, 6);
  const TransmissionMap t{random_image(1, 16, 16, 7, 0.1, 1.0)};
  const std::array<double, 3> a{0.7, 0.85, 1.0};
  const Image back = invert_scattering(apply_scattering(j, t, a), t, a, 0.1);
  for (std::size_t k = 0; k < j.pixels.size(); ++k) EXPECT_NEAR(back.pixels[k], j.pixels[k], 1e-5);
  EXPECT_THROW(invert_scattering(j, constant_t(16, 16, 0.05f), a, 0.1), InvalidArgument);
}

TEST(Scattering, ShapeErrors) {
  const Image j = random_image(3, 4, 4, 8);
  EXPECT_THROW(apply_scattering(j, constant_t(4, 5, 0.5f), {1, 1, 1}), ShapeError);
  EXPECT_THROW(apply_scattering(Image(1, 4, 4), constant_t(4, 4, 0.5f), {1, 1, 1}), ShapeError);
}

TEST(Sampling, TenThousandDrawsStayInOpenRanges) {
  const HazeRanges r;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const HazeParams p = sample_haze_params(seed, r);
    for (double a : p.airlight) {
      ASSERT_GT(a, 0.7);
      ASSERT_LT(a, 1.0);
    }
    ASSERT_GT(p.beta, 0.6);
    ASSERT_LT(p.beta, 1.8);
  }
}

TEST(Sampling, DeterministicAndChannelsIndependent) {
  EXPECT_EQ(sample_haze_params(42), sample_haze_params(42));
  EXPECT_NE(sample_haze_params(42), sample_haze_params(43));
  const HazeParams p = sample_haze_params(7);
  EXPECT_NE(p.airlight[0], p.airlight[1]);
}

TEST(Sampling, InvalidRanges) {
  HazeRanges r;
  r.beta_lo = 2.0;
  EXPECT_THROW(sample_haze_params(0, r), InvalidArgument);
  r = HazeRanges{};
  r.airlight_hi = 1.5;
  EXPECT_THROW(sample_haze_params(0, r), InvalidArgument);
  HazeParams p;
  p.beta = 0;
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(Synthesize, FarthestPixelUsesDenseTransmission) {
  const Image j = random_image(3, 6, 6, 9);
  Image d = random_image(1, 6, 6, 10, 0.0, 0.5);
  d.at(0, 5, 5) = 2.0f;  // normalized to depth 1
  HazeParams p;
  p.beta = 1.8;
  p.airlight = {0.75, 0.8, 0.95};
  const Image i = synthesize_hazy(j, d, p);
  for (int c = 0; c < 3; ++c) {
    const double expect = 0.16529888822158653 * j.at(c, 5, 5) + 0.8347011117784135 * p.airlight[c];
    EXPECT_NEAR(i.at(c, 5, 5), expect, 1e-6);
  }
}

}  // namespace
}  // namespace dehaze
