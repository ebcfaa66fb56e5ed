// SPDX-License-Identifier: Apache-2.0
//
// Unfolded vector approximate message passing: each layer alternates an affine
// estimator (G v + R g) with an element-wise piecewise-linear denoiser, with
// divergence-corrected extrinsic updates between them.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tomofocus/error.hpp"
#include "tomofocus/geometry.hpp"

namespace tomofocus {

/// Columns of a denoiser parameter row: knot multipliers (k1, k2) and slopes
/// of the inner, middle, and outer segments.
inline constexpr int denoiser_params = 5;
inline constexpr double default_alpha_min = 1e-4;
/// Lower bound on the echo power feeding the initial precision.
inline constexpr double power_floor = 1e-30;

enum class InitMode { paper, lmmse };

inline std::string to_string(InitMode mode) { return mode == InitMode::paper ? "paper" : "lmmse"; }

inline InitMode parse_init_mode(const std::string& s) {
  if (s == "paper") return InitMode::paper;
  if (s == "lmmse") return InitMode::lmmse;
  throw Error(ErrorKind::invalid_config, "unknown init mode '" + s + "'");
}

struct LayerParams {
  Eigen::MatrixXd G;      // 2M x 2M
  Eigen::MatrixXd R;      // 2M x 2N
  Eigen::VectorXd beta;   // 2M
  Eigen::MatrixXd theta;  // 2M x 5
};

struct InitParams {
  Eigen::MatrixXd R0;      // 2M x 2N
  Eigen::VectorXd beta0;   // 2M
  Eigen::MatrixXd theta0;  // 2M x 5
};

struct NetworkParams {
  InitParams init;
  std::vector<LayerParams> layers;
  InitMode mode = InitMode::lmmse;
  double alpha_min = default_alpha_min;
  std::uint64_t geometry_fingerprint = 0;

  int depth() const { return static_cast<int>(layers.size()); }
  int signal_dim() const { return static_cast<int>(init.R0.rows()); }
  int echo_dim() const { return static_cast<int>(init.R0.cols()); }
};

struct LayerState {
  Eigen::VectorXd v1, chi1, gamma_tilde, v2, chi2, gamma_hat;
  double alpha1 = 0;
  double alpha2 = 0;
};

inline double clamp_alpha(double raw, double alpha_min) {
  return std::clamp(raw, alpha_min, 1.0 - alpha_min);
}

/// One element of the odd-symmetric three-segment shrinkage.
struct ShrinkPoint {
  double out;
  double slope;
  int segment;  // 0 inner, 1 middle, 2 outer
};

inline ShrinkPoint shrink(double v, double sigma, const Eigen::MatrixXd& theta, Eigen::Index i) {
  const double k1 = theta(i, 0), k2 = theta(i, 1);
  const double s1 = theta(i, 2), s2 = theta(i, 3), s3 = theta(i, 4);
  const double t1 = k1 * sigma, t2 = k2 * sigma;
  const double u = std::abs(v);
  const double sign = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
  if (u <= t1) return {sign * s1 * u, s1, 0};
  if (u <= t2) return {sign * (s1 * t1 + s2 * (u - t1)), s2, 1};
  return {sign * (s1 * t1 + s2 * (t2 - t1) + s3 * (u - t2)), s3, 2};
}

struct Eta2Result {
  Eigen::VectorXd out;
  Eigen::VectorXd deriv;
};

/// Element-wise denoiser. Knots scale with sqrt(chi); deriv is the active
/// slope (left segment at a knot).
inline Eta2Result eta2(const Eigen::VectorXd& v, const Eigen::VectorXd& chi,
                       const Eigen::MatrixXd& theta) {
  if (chi.size() != v.size() || theta.rows() != v.size() || theta.cols() != denoiser_params)
    throw Error(ErrorKind::invalid_shape, "eta2 argument shapes disagree");
  Eta2Result r{Eigen::VectorXd(v.size()), Eigen::VectorXd(v.size())};
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(chi[i] > 0))
      throw Error(ErrorKind::invalid_precision,
                  "non-positive precision at element " + std::to_string(i));
    const auto p = shrink(v[i], std::sqrt(chi[i]), theta, i);
    r.out[i] = p.out;
    r.deriv[i] = p.slope;
  }
  return r;
}

struct Eta1Result {
  Eigen::VectorXd gamma_tilde;
  double alpha;      // clamped
  double alpha_raw;  // tr(G) / 2M
};

inline Eta1Result eta1(const Eigen::VectorXd& v1, const Eigen::MatrixXd& G,
                       const Eigen::MatrixXd& R, const Eigen::VectorXd& g_embed,
                       double alpha_min = default_alpha_min) {
  const double raw = G.trace() / static_cast<double>(G.rows());
  return {G * v1 + R * g_embed, clamp_alpha(raw, alpha_min), raw};
}

/// Parameters of a fresh layer for the given initialization mode. In "lmmse"
/// mode G = I - kappa H^T H and R = kappa H^T with kappa = 1 / ||H||^2, so the
/// affine stage is one consistent gradient step on the data fit.
inline LayerParams init_layer(const SteeringModel& model, InitMode mode) {
  const Eigen::Index k = model.H_embed.cols();
  LayerParams layer;
  layer.R = model.H_embed.transpose();
  layer.beta = Eigen::VectorXd::Ones(k);
  layer.theta.resize(k, denoiser_params);
  layer.theta.rowwise() = Eigen::RowVectorXd{{1.0, 2.0, 0.0, 1.0, 1.0}};
  if (mode == InitMode::paper) {
    layer.G = Eigen::MatrixXd::Identity(k, k);
  } else {
    const Eigen::MatrixXd gram = model.H_embed.transpose() * model.H_embed;
    const double kappa =
        1.0 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    layer.G = Eigen::MatrixXd::Identity(k, k) - kappa * gram;
    layer.R *= kappa;
  }
  return layer;
}

/// Fresh network. The initial linear map is H^T in "paper" mode and the
/// amplitude-preserving matched filter H^T / N in "lmmse" mode.
inline NetworkParams init_network(const SteeringModel& model, int depth,
                                  InitMode mode = InitMode::lmmse) {
  if (depth < 1) throw Error(ErrorKind::invalid_config, "network needs at least one layer");
  NetworkParams net;
  net.mode = mode;
  net.geometry_fingerprint = model.config.fingerprint();
  const auto layer = init_layer(model, mode);
  Eigen::MatrixXd r0 = model.H_embed.transpose();
  if (mode == InitMode::lmmse) r0 /= static_cast<double>(model.n());
  net.init = {std::move(r0), Eigen::VectorXd::Ones(layer.beta.size()), layer.theta};
  net.layers.assign(depth, layer);
  return net;
}

struct ForwardResult {
  Eigen::VectorXd gamma_hat;
  std::vector<LayerState> trace;
};

namespace detail {
inline void require_finite(const Eigen::VectorXd& x, int layer, const char* step) {
  if (!x.allFinite())
    throw Error(ErrorKind::numerical_divergence,
                "non-finite value at layer " + std::to_string(layer) + ", step " + step);
}
}  // namespace detail

/// Runs the initialization line and all layers on one embedded echo.
inline ForwardResult forward(const NetworkParams& net, const Eigen::VectorXd& g_embed,
                             bool record_trace = false) {
  if (g_embed.size() != net.echo_dim())
    throw Error(ErrorKind::invalid_shape, "echo length " + std::to_string(g_embed.size()) +
                                              " does not match network input " +
                                              std::to_string(net.echo_dim()));
  const double amin = net.alpha_min;
  const double n = 0.5 * static_cast<double>(g_embed.size());
  const double power = std::max(g_embed.squaredNorm() / n, power_floor);

  Eigen::VectorXd v2 = net.init.R0 * g_embed;
  Eigen::VectorXd chi2 = net.init.beta0 * power;
  auto den = eta2(v2, chi2, net.init.theta0);
  Eigen::VectorXd gamma_hat = std::move(den.out);
  double alpha2 = clamp_alpha(den.deriv.mean(), amin);
  detail::require_finite(gamma_hat, 0, "init");

  ForwardResult result;
  if (record_trace) result.trace.reserve(net.layers.size());
  for (std::size_t t = 0; t < net.layers.size(); ++t) {
    const auto& p = net.layers[t];
    const int layer = static_cast<int>(t) + 1;
    LayerState st;
    st.v1 = (gamma_hat - alpha2 * v2) / (1.0 - alpha2);
    st.chi1 = alpha2 * chi2 / (1.0 - alpha2);
    detail::require_finite(st.v1, layer, "1");
    auto lin = eta1(st.v1, p.G, p.R, g_embed, amin);
    st.gamma_tilde = std::move(lin.gamma_tilde);
    st.alpha1 = lin.alpha;
    st.v2 = (st.gamma_tilde - st.alpha1 * st.v1) / (1.0 - st.alpha1);
    st.chi2 = (st.alpha1 / (1.0 - st.alpha1)) * st.chi1.cwiseProduct(p.beta);
    detail::require_finite(st.v2, layer, "5");
    detail::require_finite(st.chi2, layer, "6");
    den = eta2(st.v2, st.chi2, p.theta);
    st.gamma_hat = std::move(den.out);
    st.alpha2 = clamp_alpha(den.deriv.mean(), amin);
    detail::require_finite(st.gamma_hat, layer, "7");

    gamma_hat = st.gamma_hat;
    v2 = st.v2;
    chi2 = st.chi2;
    alpha2 = st.alpha2;
    if (record_trace) result.trace.push_back(std::move(st));
  }
  result.gamma_hat = std::move(gamma_hat);
  return result;
}

/// Complex M-vector image from a network run.
inline Eigen::VectorXcd reconstruct(const NetworkParams& net, const Eigen::VectorXcd& g) {
  return real_extract(forward(net, real_embed(g)).gamma_hat);
}

}  // namespace tomofocus
