// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tomofocus/geometry.hpp"

namespace tf = tomofocus;

TEST(Aperture, UniformSpansApertureWithConstantSpacing) {
  const auto b = tf::build_aperture(tf::GeometryConfig::spaceborne());
  ASSERT_EQ(b.size(), 31);
  EXPECT_DOUBLE_EQ(b[0], -150.0);
  EXPECT_DOUBLE_EQ(b[30], 150.0);
  for (int i = 1; i < 31; ++i) EXPECT_NEAR(b[i] - b[i - 1], 10.0, 1e-12);
}

TEST(Aperture, TwoPointsAreTheEndpoints) {
  auto cfg = tf::GeometryConfig::spaceborne();
  cfg.acquisitions = 2;
  const auto b = tf::build_aperture(cfg);
  ASSERT_EQ(b.size(), 2);
  EXPECT_DOUBLE_EQ(b[0], -150.0);
  EXPECT_DOUBLE_EQ(b[1], 150.0);
}

TEST(Aperture, JitteredKeepsSpanAndOrderAndIsSeeded) {
  auto cfg = tf::GeometryConfig::spaceborne();
  cfg.aperture_kind = tf::ApertureKind::jittered;
  cfg.jitter_seed = 7;
  cfg.jitter_fraction = 0.9;
  const auto b = tf::build_aperture(cfg);
  ASSERT_EQ(b.size(), 31);
  EXPECT_NEAR(b.maxCoeff() - b.minCoeff(), 300.0, 1e-12);
  const auto uniform = tf::build_aperture(tf::GeometryConfig::spaceborne());
  double moved = 0;
  for (int i = 1; i < 31; ++i) {
    EXPECT_GT(b[i] - b[i - 1], 0.0);
    EXPECT_LE(std::abs(b[i] - uniform[i]), 0.45 * 10.0 + 1e-12);
    moved += std::abs(b[i] - uniform[i]);
  }
  EXPECT_GT(moved, 0.0);
  EXPECT_EQ(b, tf::build_aperture(cfg));
  cfg.jitter_seed = 8;
  EXPECT_NE(b, tf::build_aperture(cfg));
}

TEST(Aperture, CenteredWithinOneSpacing) {
  auto cfg = tf::GeometryConfig::spaceborne();
  cfg.aperture_kind = tf::ApertureKind::jittered;
  const auto b = tf::build_aperture(cfg);
  EXPECT_LT(std::abs(b.sum()), 10.0);
}

TEST(Aperture, RejectsFewerThanTwoAcquisitions) {
  auto cfg = tf::GeometryConfig::spaceborne();
  cfg.acquisitions = 1;
  try {
    tf::build_aperture(cfg);
    FAIL();
  } catch (const tf::Error& e) {
    EXPECT_EQ(e.kind(), tf::ErrorKind::invalid_config);
  }
}

TEST(Grid, LeftClosedUniform) {
  const auto cfg = tf::GeometryConfig::spaceborne();
  const auto s = tf::build_grid(cfg);
  ASSERT_EQ(s.size(), 78);
  EXPECT_DOUBLE_EQ(s[0], -150.0);
  EXPECT_NEAR(s[1] - s[0], 300.0 / 78.0, 1e-12);
  EXPECT_NEAR(s[1] - s[0], 3.846, 1e-3);
  EXPECT_LT(s[77], 150.0);

  auto two = cfg;
  two.grid_points = 2;
  const auto s2 = tf::build_grid(two);
  EXPECT_DOUBLE_EQ(s2[0], -150.0);
  EXPECT_DOUBLE_EQ(s2[1], 0.0);

  const auto c = tf::build_grid(tf::GeometryConfig::chamber());
  EXPECT_NEAR(c[1] - c[0], 0.01714, 1e-5);
}

TEST(Steering, ShapesAndUnitModulus) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  EXPECT_EQ(model.H.rows(), 31);
  EXPECT_EQ(model.H.cols(), 78);
  EXPECT_EQ(model.H_embed.rows(), 62);
  EXPECT_EQ(model.H_embed.cols(), 156);
  EXPECT_LT((model.H.cwiseAbs().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Steering, EntryFormula) {
  const auto cfg = tf::GeometryConfig::spaceborne();
  const auto model = tf::build_steering(cfg);
  const double kc = 2.0 * std::numbers::pi * cfg.carrier_hz / 299792458.0;
  for (int n : {0, 7, 30})
    for (int m : {0, 40, 77}) {
      const auto expect = std::polar(1.0, 2.0 * kc * model.b[n] * model.s[m] / cfg.range_m);
      EXPECT_LT(std::abs(model.H(n, m) - expect), 1e-12);
    }
}

TEST(Steering, ZeroBaselineRowIsOnes) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  ASSERT_NEAR(model.b[15], 0.0, 1e-12);
  EXPECT_LT((model.H.row(15).array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Steering, ConjugateSymmetryInBaseline) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  for (int m = 0; m < 78; m += 11)
    EXPECT_LT(std::abs(model.steering(-37.5, model.s[m]) - std::conj(model.steering(37.5, model.s[m]))), 1e-15);
}

TEST(Steering, EmbeddingBlockStructure) {
  const auto model = tf::build_steering(tf::testing::tiny_geometry());
  const Eigen::Index n = model.n(), m = model.m();
  const auto& e = model.H_embed;
  EXPECT_EQ(e.topLeftCorner(n, m), model.H.real());
  EXPECT_EQ(e.bottomRightCorner(n, m), model.H.real());
  EXPECT_EQ(e.topRightCorner(n, m), Eigen::MatrixXd(-model.H.imag()));
  EXPECT_EQ(e.bottomLeftCorner(n, m), model.H.imag());
}

TEST(Embedding, RealVectorHasZeroLowerHalf) {
  Eigen::VectorXcd z(3);
  z << 1.0, -2.0, 0.5;
  const auto e = tf::real_embed(z);
  ASSERT_EQ(e.size(), 6);
  EXPECT_EQ(e.tail(3), Eigen::VectorXd::Zero(3));
  EXPECT_EQ(e.head(3), z.real());
}

TEST(Embedding, RoundTripAndOddLength) {
  std::mt19937_64 rng(3);
  const auto z = tf::testing::random_complex(rng, 9);
  EXPECT_EQ(tf::real_extract(tf::real_embed(z)), z);
  try {
    tf::real_extract(Eigen::VectorXd::Zero(5));
    FAIL();
  } catch (const tf::Error& e) {
    EXPECT_EQ(e.kind(), tf::ErrorKind::invalid_shape);
  }
}

// Reference embedding built entry by entry from the complex product.
TEST(Embedding, BruteForceProductOnSmallInstance) {
  std::mt19937_64 rng(11);
  Eigen::MatrixXcd h(4, 6);
  for (auto& x : h.reshaped()) x = std::polar(1.0, std::uniform_real_distribution<>(0, 6.28)(rng));
  const auto g = tf::testing::random_complex(rng, 6);
  const Eigen::VectorXcd y = h * g;
  Eigen::VectorXd lhs(8);
  for (int i = 0; i < 4; ++i) {
    double re = 0, im = 0;
    for (int j = 0; j < 6; ++j) {
      re += h(i, j).real() * g[j].real() - h(i, j).imag() * g[j].imag();
      im += h(i, j).real() * g[j].imag() + h(i, j).imag() * g[j].real();
    }
    lhs[i] = re;
    lhs[4 + i] = im;
  }
  const Eigen::VectorXd rhs = tf::real_embed(h) * tf::real_embed(g);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((tf::real_embed(y) - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Embedding, ModelProductMatchesOnRandomInputs) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto g = tf::testing::random_complex(rng, model.m());
    const Eigen::VectorXd d = tf::real_embed(Eigen::VectorXcd(model.H * g)) - model.H_embed * tf::real_embed(g);
    EXPECT_LT(d.cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Resolution, SpaceborneAndChamber) {
  EXPECT_NEAR(tf::resolution(tf::GeometryConfig::spaceborne()), 40.0, 0.4);
  // lambda r / (2 delta_b) evaluated directly.
  const double lambda = 299792458.0 / 35e9;
  EXPECT_NEAR(tf::resolution(tf::GeometryConfig::chamber()), lambda * 3.3 / (2 * 0.06), 1e-12);
  EXPECT_NEAR(tf::resolution(tf::GeometryConfig::chamber()), 0.2356, 1e-4);
}

TEST(Resolution, ScalingLaws) {
  auto cfg = tf::GeometryConfig::spaceborne();
  const double base = tf::resolution(cfg);
  auto doubled = cfg;
  doubled.aperture_m *= 2;
  EXPECT_NEAR(tf::resolution(doubled), base / 2, 1e-12);
  auto scaled = cfg;
  scaled.aperture_m *= 3.7;
  scaled.range_m *= 3.7;
  EXPECT_NEAR(tf::resolution(scaled), base, 1e-9);
}

TEST(Resolution, ZeroApertureRejected) {
  auto cfg = tf::GeometryConfig::spaceborne();
  cfg.aperture_m = 0;
  EXPECT_THROW(tf::resolution(cfg), tf::Error);
}

TEST(ExtentCheck, SpaceborneValues) {
  const auto r = tf::extent_check(tf::GeometryConfig::spaceborne());
  EXPECT_NEAR(r.range_resolution, 0.75, 1e-3);
  EXPECT_DOUBLE_EQ(r.range_resolution, 299792458.0 / 400e6);
  EXPECT_NEAR(r.bound, 2000.0, 2.0);
  EXPECT_DOUBLE_EQ(r.extent, 300.0);
  EXPECT_TRUE(r.pass);
  EXPECT_NEAR(r.ratio, 0.15, 1e-3);
}

TEST(ExtentCheck, EqualityFailsAndZeroPasses) {
  auto cfg = tf::GeometryConfig::spaceborne();
  cfg.extent_m = tf::extent_check(cfg).bound;
  EXPECT_FALSE(tf::extent_check(cfg).pass);
  cfg.extent_m = 0;
  EXPECT_TRUE(tf::extent_check(cfg).pass);
}

TEST(ExtentCheck, ZeroBandwidthRejected) {
  auto cfg = tf::GeometryConfig::spaceborne();
  cfg.bandwidth_hz = 0;
  try {
    tf::extent_check(cfg);
    FAIL();
  } catch (const tf::Error& e) {
    EXPECT_EQ(e.kind(), tf::ErrorKind::invalid_config);
  }
}

TEST(SuperResolution, SpaceborneFactorAboutTen) {
  EXPECT_NEAR(tf::super_resolution_factor(tf::GeometryConfig::spaceborne()), 10.4, 0.05);
}

TEST(Fingerprint, SensitiveToEveryField) {
  const auto base = tf::GeometryConfig::spaceborne();
  EXPECT_EQ(base.fingerprint(), tf::GeometryConfig::spaceborne().fingerprint());
  auto a = base;
  a.grid_points = 79;
  auto b = base;
  b.aperture_kind = tf::ApertureKind::jittered;
  auto c = base;
  c.carrier_hz *= 1.0000001;
  EXPECT_NE(a.fingerprint(), base.fingerprint());
  EXPECT_NE(b.fingerprint(), base.fingerprint());
  EXPECT_NE(c.fingerprint(), base.fingerprint());
}
