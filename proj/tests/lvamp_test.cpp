// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tomofocus/lvamp.hpp"
#include "tomofocus/synth.hpp"

namespace tf = tomofocus;

namespace {

Eigen::MatrixXd theta_rows(Eigen::Index k, std::initializer_list<double> row) {
  Eigen::MatrixXd t(k, tf::denoiser_params);
  t.rowwise() = Eigen::RowVectorXd{row};
  return t;
}

// Direct transcription of the three-segment map for one element.
double reference_shrink(double v, double chi, const double th[5]) {
  const double sigma = std::sqrt(chi), t1 = th[0] * sigma, t2 = th[1] * sigma, u = std::abs(v);
  const double sign = v < 0 ? -1.0 : 1.0;
  if (u <= t1) return sign * th[2] * u;
  if (u <= t2) return sign * (th[2] * t1 + th[3] * (u - t1));
  return sign * (th[2] * t1 + th[3] * (t2 - t1) + th[4] * (u - t2));
}

}  // namespace

TEST(Eta2, ZeroMapsToZero) {
  const auto r = tf::eta2(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3), theta_rows(3, {1, 2, 0.5, 1, 1}));
  EXPECT_EQ(r.out, Eigen::VectorXd::Zero(3));
}

TEST(Eta2, SoftThresholdStartShiftsFarSegment) {
  Eigen::VectorXd v(1);
  v << 3.0;
  const auto r = tf::eta2(v, Eigen::VectorXd::Ones(1), theta_rows(1, {1, 2, 0, 1, 1}));
  EXPECT_DOUBLE_EQ(r.out[0], 2.0);
  EXPECT_DOUBLE_EQ(r.deriv[0], 1.0);
}

TEST(Eta2, UnitSlopesGiveIdentity) {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd v = tf::testing::random_real(rng, 50, 1, 3.0);
  const Eigen::VectorXd chi = tf::testing::random_real(rng, 50, 1).cwiseAbs().array() + 0.1;
  const auto r = tf::eta2(v, chi, theta_rows(50, {1, 2, 1, 1, 1}));
  EXPECT_LT((r.out - v).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(r.deriv, Eigen::VectorXd::Ones(50));
}

TEST(Eta2, MatchesReferenceFormulaPerElement) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2, 2);
  const int k = 200;
  Eigen::MatrixXd th(k, 5);
  Eigen::VectorXd v(k), chi(k);
  for (int i = 0; i < k; ++i) {
    th(i, 0) = 0.1 + std::abs(u(rng));
    th(i, 1) = th(i, 0) + 0.1 + std::abs(u(rng));
    th(i, 2) = u(rng), th(i, 3) = u(rng), th(i, 4) = u(rng);
    v[i] = 3 * u(rng);
    chi[i] = 0.01 + std::abs(u(rng));
  }
  const auto r = tf::eta2(v, chi, th);
  for (int i = 0; i < k; ++i) {
    const double row[5] = {th(i, 0), th(i, 1), th(i, 2), th(i, 3), th(i, 4)};
    EXPECT_NEAR(r.out[i], reference_shrink(v[i], chi[i], row), 1e-13);
  }
}

TEST(Eta2, OddSymmetryIsExact) {
  std::mt19937_64 rng(3);
  const Eigen::VectorXd v = tf::testing::random_real(rng, 40, 1, 2.0);
  const Eigen::VectorXd chi = Eigen::VectorXd::Constant(40, 0.7);
  const auto th = theta_rows(40, {0.5, 1.5, 0.2, 1.3, 0.9});
  EXPECT_EQ(tf::eta2(-v, chi, th).out, Eigen::VectorXd(-tf::eta2(v, chi, th).out));
}

TEST(Eta2, ContinuousAtKnotsWithLeftSlope) {
  const auto th = theta_rows(1, {0.5, 1.5, 0.2, 1.3, 0.9});
  const double chi = 2.0, sigma = std::sqrt(chi);
  for (double knot : {0.5 * sigma, 1.5 * sigma}) {
    Eigen::VectorXd lo(1), hi(1), at(1);
    lo << knot - 1e-9;
    hi << knot + 1e-9;
    at << knot;
    const Eigen::VectorXd c = Eigen::VectorXd::Constant(1, chi);
    EXPECT_LT(std::abs(tf::eta2(hi, c, th).out[0] - tf::eta2(lo, c, th).out[0]), 1e-6 * knot);
    EXPECT_EQ(tf::eta2(at, c, th).deriv[0], tf::eta2(lo, c, th).deriv[0]);
  }
}

TEST(Eta2, NonPositivePrecisionRejected) {
  Eigen::VectorXd chi(2);
  chi << 1.0, 0.0;
  try {
    tf::eta2(Eigen::VectorXd::Ones(2), chi, theta_rows(2, {1, 2, 0, 1, 1}));
    FAIL();
  } catch (const tf::Error& e) {
    EXPECT_EQ(e.kind(), tf::ErrorKind::invalid_precision);
  }
}

TEST(Eta1, ZeroOperatorsAndIdentity) {
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(6);
  const Eigen::VectorXd g = Eigen::VectorXd::Ones(4);
  auto r = tf::eta1(v, Eigen::MatrixXd::Zero(6, 6), Eigen::MatrixXd::Zero(6, 4), g);
  EXPECT_EQ(r.gamma_tilde, Eigen::VectorXd::Zero(6));
  EXPECT_EQ(r.alpha_raw, 0.0);
  EXPECT_EQ(r.alpha, tf::default_alpha_min);
  r = tf::eta1(v, Eigen::MatrixXd::Identity(6, 6), Eigen::MatrixXd::Zero(6, 4), g);
  EXPECT_EQ(r.alpha_raw, 1.0);
  EXPECT_EQ(r.alpha, 1.0 - tf::default_alpha_min);
}

TEST(Eta1, AlphaIsMeanJacobianDiagonal) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd G = tf::testing::random_real(rng, 6, 6, 0.3);
  const Eigen::MatrixXd R = tf::testing::random_real(rng, 6, 4);
  const Eigen::VectorXd v = tf::testing::random_real(rng, 6, 1);
  const Eigen::VectorXd g = tf::testing::random_real(rng, 4, 1);
  double diag = 0;
  const double h = 1e-6;
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd p = v, m = v;
    p[i] += h;
    m[i] -= h;
    diag += (tf::eta1(p, G, R, g).gamma_tilde[i] - tf::eta1(m, G, R, g).gamma_tilde[i]) / (2 * h);
  }
  EXPECT_NEAR(tf::eta1(v, G, R, g).alpha_raw, diag / 6, 1e-8);
}

TEST(Init, PaperModeUsesIdentity) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  const auto net = tf::init_network(model, 2, tf::InitMode::paper);
  ASSERT_EQ(net.depth(), 2);
  for (const auto& l : net.layers) {
    EXPECT_EQ(l.G, Eigen::MatrixXd::Identity(156, 156));
    EXPECT_EQ(l.beta, Eigen::VectorXd::Ones(156));
    EXPECT_EQ(l.R, Eigen::MatrixXd(model.H_embed.transpose()));
  }
  EXPECT_EQ(net.init.beta0, Eigen::VectorXd::Ones(156));
  EXPECT_EQ(net.init.R0, Eigen::MatrixXd(model.H_embed.transpose()));
}

TEST(Init, LmmseModeTraceStrictlyInside) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  const auto net = tf::init_network(model, 1, tf::InitMode::lmmse);
  const double a = net.layers[0].G.trace() / 156.0;
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 1.0);
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(net.layers[0].G).eigenvalues();
  EXPECT_GT(ev.minCoeff(), -1e-10);
  EXPECT_LT(ev.maxCoeff(), 1.0 + 1e-10);
  EXPECT_EQ(net.layers[0].beta, Eigen::VectorXd::Ones(156));
  // A noiseless echo of v1 is a fixed point of the affine stage.
  const Eigen::MatrixXd fixed = net.layers[0].G + net.layers[0].R * model.H_embed;
  EXPECT_LT((fixed - Eigen::MatrixXd::Identity(156, 156)).cwiseAbs().maxCoeff(), 1e-12);
  // The initial map keeps on-grid amplitudes.
  EXPECT_LT(((net.init.R0 * model.H_embed).diagonal().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_EQ(net.geometry_fingerprint, model.config.fingerprint());
  EXPECT_THROW(tf::init_network(model, 0), tf::Error);
}

TEST(Forward, ZeroEchoGivesZero) {
  const auto model = tf::build_steering(tf::testing::tiny_geometry());
  const auto net = tf::init_network(model, 3);
  EXPECT_EQ(tf::forward(net, Eigen::VectorXd::Zero(8)).gamma_hat, Eigen::VectorXd::Zero(12));
}

TEST(Forward, TraceRespectsClampingAndRecursionIdentity) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  for (auto mode : {tf::InitMode::lmmse, tf::InitMode::paper}) {
    const auto net = tf::init_network(model, 4, mode);
    std::mt19937_64 rng(7);
    const Eigen::VectorXd g = tf::real_embed(tf::synthesize_echo(model, tf::sample_scene(rng, 300.0, {3})));
    const auto r = tf::forward(net, g, true);
    ASSERT_EQ(r.trace.size(), 4u);
    // gamma_hat and alpha2 before each layer
    Eigen::VectorXd prev_gamma = tf::forward(tf::NetworkParams{net.init, {}, net.mode}, g).gamma_hat;
    Eigen::VectorXd prev_v2 = net.init.R0 * g;
    auto den = tf::eta2(prev_v2, net.init.beta0 * (g.squaredNorm() / model.n()), net.init.theta0);
    double prev_alpha2 = tf::clamp_alpha(den.deriv.mean(), net.alpha_min);
    for (const auto& st : r.trace) {
      EXPECT_GT(st.alpha1, 0.0);
      EXPECT_LT(st.alpha1, 1.0);
      EXPECT_GT(st.alpha2, 0.0);
      EXPECT_LT(st.alpha2, 1.0);
      EXPECT_GT(st.chi1.minCoeff(), 0.0);
      EXPECT_GT(st.chi2.minCoeff(), 0.0);
      const Eigen::VectorXd lhs = (1 - prev_alpha2) * st.v1 + prev_alpha2 * prev_v2;
      EXPECT_LT((lhs - prev_gamma).cwiseAbs().maxCoeff(), 1e-10 * (1 + prev_gamma.cwiseAbs().maxCoeff()));
      // alpha2 is the clamped mean of the denoiser derivative at this layer.
      const auto layer_den = tf::eta2(st.v2, st.chi2, net.layers[0].theta);
      EXPECT_EQ(st.alpha2, tf::clamp_alpha(layer_den.deriv.mean(), net.alpha_min));
      prev_gamma = st.gamma_hat;
      prev_v2 = st.v2;
      prev_alpha2 = st.alpha2;
    }
    EXPECT_EQ(r.gamma_hat, r.trace.back().gamma_hat);
  }
}

TEST(Forward, DeterministicAndReentrant) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  const auto net = tf::init_network(model, 8);
  std::mt19937_64 rng(8);
  const Eigen::VectorXd g = tf::testing::random_real(rng, 62, 1);
  const auto a = tf::forward(net, g).gamma_hat;
  const auto b = tf::forward(net, g).gamma_hat;
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
}

TEST(Forward, ShapeMismatchAndDivergence) {
  const auto model = tf::build_steering(tf::testing::tiny_geometry());
  auto net = tf::init_network(model, 2);
  EXPECT_THROW(tf::forward(net, Eigen::VectorXd::Ones(7)), tf::Error);
  net.layers[1].G(0, 0) = std::numeric_limits<double>::infinity();
  try {
    tf::forward(net, Eigen::VectorXd::Ones(8));
    FAIL();
  } catch (const tf::Error& e) {
    EXPECT_EQ(e.kind(), tf::ErrorKind::numerical_divergence);
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos);
  }
}

TEST(Forward, UntrainedLmmseNetLocalizesSingleScatterer) {
  const auto model = tf::build_steering(tf::GeometryConfig::spaceborne());
  const auto net = tf::init_network(model, 1, tf::InitMode::lmmse);
  int hits = 0;
  for (int t = 0; t < 200; ++t) {
    auto rng = tf::substream(21, tf::stream::probe, std::uint64_t(t));
    const int m = std::uniform_int_distribution<>(0, model.m() - 1)(rng);
    const tf::Scene scene{{model.s[m], tf::testing::random_complex(rng, 1)[0]}};
    const auto g = tf::add_noise(rng, tf::synthesize_echo(model, scene), 15.0);
    Eigen::Index best;
    tf::reconstruct(net, g).cwiseAbs().maxCoeff(&best);
    hits += best == m;
  }
  EXPECT_GE(hits, 190);
}
