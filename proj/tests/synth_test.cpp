// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tomofocus/synth.hpp"

namespace tf = tomofocus;

namespace {
const tf::SteeringModel& spaceborne() {
  static const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  return model;
}
}  // namespace

TEST(SampleScene, CountAndAmplitudeLaw) {
  std::mt19937_64 rng(1);
  double count = 0, power = 0, scatterers = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto scene = tf::sample_scene(rng, 300.0, {1, 2, 3, 4});
    count += scene.size();
    for (const auto& s : scene) {
      power += std::norm(s.gamma);
      scatterers += 1;
      ASSERT_GE(s.s, -150.0);
      ASSERT_LT(s.s, 150.0);
    }
  }
  EXPECT_NEAR(count / draws, 2.5, 0.05);
  EXPECT_NEAR(power / scatterers, 2.0, 0.05);
}

TEST(SampleScene, SingletonSupportAndEmptySupport) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(tf::sample_scene(rng, 300.0, {1}).size(), 1u);
  try {
    tf::sample_scene(rng, 300.0, {});
    FAIL();
  } catch (const tf::Error& e) {
    EXPECT_EQ(e.kind(), tf::ErrorKind::invalid_spec);
  }
}

TEST(Echo, ScattererAtZeroGivesConstantEcho) {
  const std::complex<double> gamma(0.3, -1.2);
  const auto g = tf::synthesize_echo(spaceborne(), {{0.0, gamma}});
  for (auto x : g) EXPECT_LT(std::abs(x - gamma), 1e-15);
}

TEST(Echo, OppositeAmplitudesCancel) {
  const std::complex<double> gamma(0.7, 0.2);
  const auto g = tf::synthesize_echo(spaceborne(), {{12.3, gamma}, {12.3, -gamma}});
  EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Echo, OnGridSceneEqualsSteeringProduct) {
  const auto& model = spaceborne();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    tf::Scene scene;
    for (int k = 0; k < 4; ++k) {
      const int m = std::uniform_int_distribution<>(0, model.m() - 1)(rng);
      scene.push_back({model.s[m], tf::testing::random_complex(rng, 1)[0]});
    }
    const Eigen::VectorXcd expect = model.H * tf::grid_truth(model, scene);
    EXPECT_LT((tf::synthesize_echo(model, scene) - expect).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GridTruth, NearestBinAndTies) {
  const auto& model = spaceborne();
  const double d = model.config.grid_spacing();
  const std::complex<double> g(1.5, -0.5);
  auto truth = tf::grid_truth(model, {{model.s[10], g}});
  EXPECT_EQ(truth[10], g);
  EXPECT_EQ(truth.cwiseAbs().sum(), std::abs(g));
  EXPECT_EQ(tf::nearest_bin(model, model.s[10] + d / 4), 10);
  EXPECT_EQ(tf::nearest_bin(model, model.s[10] - d / 4), 10);
  EXPECT_EQ(tf::nearest_bin(model, model.s[10] + 0.6 * d), 11);
  // Exact midpoint between grid points 0 and 1 of a dyadic grid.
  auto cfg = tf::GeometryConfig::spaceborne();
  cfg.extent_m = 256;
  cfg.grid_points = 64;
  const auto dyadic = tf::build_steering(cfg);
  EXPECT_EQ(tf::nearest_bin(dyadic, -128.0 + 2.0), 0);
  EXPECT_EQ(tf::nearest_bin(dyadic, -128.0 + 6.0), 1);
}

TEST(GridTruth, SharedBinSumsCoherently) {
  const auto& model = spaceborne();
  const auto truth = tf::grid_truth(model, {{model.s[5], {1.0, 0.0}}, {model.s[5] + 0.1, {0.0, 1.0}}});
  EXPECT_EQ(truth[5], std::complex<double>(1.0, 1.0));
}

TEST(Noise, InfiniteSnrIsIdentityAndZeroEchoThrows) {
  std::mt19937_64 rng(1);
  const auto g = tf::testing::random_complex(rng, 31);
  EXPECT_EQ(tf::add_noise(rng, g, std::numeric_limits<double>::infinity()), g);
  try {
    tf::add_noise(rng, Eigen::VectorXcd::Zero(31), 10.0);
    FAIL();
  } catch (const tf::Error& e) {
    EXPECT_EQ(e.kind(), tf::ErrorKind::degenerate_signal);
  }
}

TEST(Noise, EmpiricalPowerRatio) {
  std::mt19937_64 rng(9);
  for (auto [snr, tol] : {std::pair{0.0, 0.05}, std::pair{10.0, 0.01}}) {
    double noise = 0, signal = 0;
    for (int t = 0; t < 10000; ++t) {
      const auto g = tf::testing::random_complex(rng, 31);
      noise += (tf::add_noise(rng, g, snr) - g).squaredNorm();
      signal += g.squaredNorm();
    }
    EXPECT_NEAR(noise / signal, std::pow(10.0, -snr / 10), tol) << "snr " << snr;
  }
}

TEST(Dataset, ShapesAndDeterminism) {
  const auto& model = spaceborne();
  tf::DatasetSpec spec;
  spec.count = 3;
  spec.seed = 1;
  const auto a = tf::make_dataset(model, spec);
  const auto b = tf::make_dataset(model, spec, 3);
  EXPECT_EQ(a.echoes.rows(), 62);
  EXPECT_EQ(a.truths.rows(), 156);
  EXPECT_EQ(a.size(), 3);
  EXPECT_EQ(std::memcmp(a.echoes.data(), b.echoes.data(), sizeof(double) * a.echoes.size()), 0);
  EXPECT_EQ(std::memcmp(a.truths.data(), b.truths.data(), sizeof(double) * a.truths.size()), 0);
}

TEST(Dataset, SamplesComposeThePipeline) {
  const auto& model = spaceborne();
  tf::DatasetSpec spec;
  spec.count = 5;
  spec.snr_db = {std::numeric_limits<double>::infinity()};
  const auto ds = tf::make_dataset(model, spec, 1, true);
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd echo = tf::real_embed(tf::synthesize_echo(model, ds.scenes[i]));
    const Eigen::VectorXd truth = tf::real_embed(tf::grid_truth(model, ds.scenes[i]));
    EXPECT_EQ(ds.echoes.col(i), echo);
    EXPECT_EQ(ds.truths.col(i), truth);
  }
}

TEST(Dataset, SnrListIsBalanced) {
  const auto& model = spaceborne();
  tf::DatasetSpec spec;
  spec.count = 10000;
  spec.snr_db = {0, 5, 10, 15};
  std::map<double, int> counts;
  for (std::int64_t i = 0; i < spec.count; ++i) counts[tf::make_sample(model, spec, i).snr_db]++;
  ASSERT_EQ(counts.size(), 4u);
  for (auto [snr, c] : counts) EXPECT_NEAR(c, 2500, 150) << snr;
}

TEST(Dataset, EmpiricalSnrMatchesRequest) {
  const auto& model = spaceborne();
  tf::DatasetSpec spec;
  spec.count = 10000;
  spec.snr_db = {10};
  spec.seed = 4;
  double signal = 0, noise = 0;
  for (std::int64_t i = 0; i < spec.count; ++i) {
    auto rng = tf::substream(spec.seed, tf::stream::dataset, std::uint64_t(i));
    // Replays make_sample's draws to recover the clean echo.
    std::uniform_int_distribution<std::size_t>(0, spec.snr_db.size() - 1)(rng);
    tf::Scene scene;
    Eigen::VectorXcd echo;
    do {
      scene = tf::sample_scene(rng, model.config.extent_m, spec.support);
      echo = tf::synthesize_echo(model, scene);
    } while (!(echo.squaredNorm() > 0));
    const auto sample = tf::make_sample(model, spec, std::uint64_t(i));
    signal += echo.squaredNorm();
    noise += (tf::real_extract(sample.g_embed) - echo).squaredNorm();
  }
  EXPECT_NEAR(10 * std::log10(signal / noise), 10.0, 0.2);
}

TEST(Dataset, ExtractOfEmbeddedEchoIsTheNoisyEcho) {
  const auto& model = spaceborne();
  tf::DatasetSpec spec;
  spec.count = 1;
  const auto s = tf::make_sample(model, spec, 0);
  EXPECT_EQ(tf::real_embed(tf::real_extract(s.g_embed)), s.g_embed);
  EXPECT_EQ(s.g_embed.size(), 62);
  EXPECT_EQ(s.gamma_embed.size(), 156);
}

TEST(Dataset, InvalidSpec) {
  tf::DatasetSpec spec;
  spec.count = 0;
  EXPECT_THROW(spec.validate(), tf::Error);
}
