// SPDX-License-Identifier: Apache-2.0
//
// Reference cross-track reconstructions: back projection, orthogonal matching
// pursuit, sparse Bayesian learning, and fixed-parameter LMMSE-VAMP.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "tomofocus/error.hpp"
#include "tomofocus/geometry.hpp"
#include "tomofocus/lvamp.hpp"

namespace tomofocus {

namespace detail {
inline void check_echo(const SteeringModel& model, const Eigen::VectorXcd& g) {
  if (g.size() != model.n())
    throw Error(ErrorKind::invalid_shape, "echo length " + std::to_string(g.size()) +
                                              " does not match " + std::to_string(model.n()) +
                                              " acquisitions");
}
}  // namespace detail

/// Matched filter H^H g, unnormalized.
inline Eigen::VectorXcd bp(const SteeringModel& model, const Eigen::VectorXcd& g) {
  detail::check_echo(model, g);
  return model.H.adjoint() * g;
}

/// Noise variance implied by a known SNR for an observed (noisy) echo.
inline double noise_var_from_snr(const Eigen::VectorXcd& g, double snr_db) {
  const double observed = g.squaredNorm() / static_cast<double>(g.size());
  return observed / (std::pow(10.0, snr_db / 10.0) + 1.0);
}

// ---------------------------------------------------------------------------

struct OmpConfig {
  int k_max = 8;
  double residual_tol = 1e-3;     // stop when |r| / |g| falls to this
  std::optional<double> noise_var;  // if set, stop when |r|^2 <= N noise_var
};

struct OmpResult {
  Eigen::VectorXcd gamma;
  std::vector<int> support;
  std::vector<double> residual_norms;  // |r| after each selection, starting with |g|
  bool rank_deficient = false;
};

inline OmpResult omp(const SteeringModel& model, const Eigen::VectorXcd& g, const OmpConfig& cfg = {}) {
  detail::check_echo(model, g);
  if (cfg.k_max < 1) throw Error(ErrorKind::invalid_config, "OMP needs k_max >= 1");
  OmpResult res{Eigen::VectorXcd::Zero(model.m()), {}, {g.norm()}, false};
  const double g_norm = g.norm();
  if (!(g_norm > 0)) return res;

  auto done = [&](double r) {
    if (r <= cfg.residual_tol * g_norm) return true;
    return cfg.noise_var && r * r <= model.n() * *cfg.noise_var;
  };
  if (done(g_norm)) return res;

  Eigen::VectorXcd residual = g;
  Eigen::MatrixXcd atoms(model.n(), 0);
  Eigen::VectorXcd coef;
  std::vector<bool> used(model.m(), false);
  const int k_limit = std::min(cfg.k_max, model.m());
  while (static_cast<int>(res.support.size()) < k_limit) {
    const Eigen::VectorXd corr = (model.H.adjoint() * residual).cwiseAbs();
    int best = -1;
    for (int m = 0; m < model.m(); ++m)
      if (!used[m] && (best < 0 || corr[m] > corr[best])) best = m;
    used[best] = true;
    res.support.push_back(best);
    atoms.conservativeResize(Eigen::NoChange, atoms.cols() + 1);
    atoms.col(atoms.cols() - 1) = model.H.col(best);

    // Minimum-norm least squares refit over every selected atom.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(atoms);
    if (cod.rank() < atoms.cols()) res.rank_deficient = true;
    coef = cod.solve(g);
    residual = g - atoms * coef;
    res.residual_norms.push_back(residual.norm());
    if (done(residual.norm())) break;
  }
  for (std::size_t i = 0; i < res.support.size(); ++i) res.gamma[res.support[i]] = coef[Eigen::Index(i)];
  return res;
}

// ---------------------------------------------------------------------------

struct SblConfig {
  int max_iters = 2000;
  double tol = 1e-4;           // relative change of the prior variance vector
  double prune_threshold = 1e-8;  // variance below this fraction of the max is pruned
  std::optional<double> noise_var;
};

struct SblResult {
  Eigen::VectorXcd gamma;
  bool converged = false;
  int iterations = 0;
  double noise_var = 0;
  std::vector<double> log_evidence;  // one entry per EM iteration
};

/// EM evidence maximization with one complex Gaussian prior variance per atom.
inline SblResult sbl(const SteeringModel& model, const Eigen::VectorXcd& g, const SblConfig& cfg = {}) {
  detail::check_echo(model, g);
  const int n = model.n(), m = model.m();
  SblResult res{Eigen::VectorXcd::Zero(m), false, 0, 0.0, {}};
  const double g_power = g.squaredNorm() / n;
  if (!(g_power > 0)) {
    res.converged = true;
    return res;
  }
  if (cfg.noise_var) {
    res.noise_var = *cfg.noise_var;
  } else {
    // Scaled back-projection prefit; its residual power estimates the noise.
    const Eigen::VectorXcd fit = model.H * (model.H.adjoint() * g);
    const std::complex<double> scale = fit.dot(g) / std::max(fit.squaredNorm(), 1e-300);
    res.noise_var = (g - scale * fit).squaredNorm() / n;
  }
  res.noise_var = std::max(res.noise_var, 1e-6 * g_power);
  const double s2 = res.noise_var;

  // Prior variances (reciprocal precisions), started at the BP power.
  std::vector<int> active(m);
  for (int i = 0; i < m; ++i) active[i] = i;
  Eigen::VectorXd var = ((model.H.adjoint() * g).cwiseAbs2() / double(n * n)).array() + 1e-12 * g_power;
  Eigen::VectorXcd mu;

  for (int it = 0; it < cfg.max_iters; ++it) {
    const int a = static_cast<int>(active.size());
    Eigen::MatrixXcd ha(n, a);
    Eigen::VectorXd va(a);
    for (int j = 0; j < a; ++j) {
      ha.col(j) = model.H.col(active[j]);
      va[j] = var[active[j]];
    }
    Eigen::MatrixXcd cov = ha * va.asDiagonal() * ha.adjoint();
    cov.diagonal().array() += s2;
    Eigen::LLT<Eigen::MatrixXcd> llt(cov);
    const Eigen::MatrixXcd w = llt.matrixL().solve(ha);          // L^-1 H_A
    const Eigen::VectorXcd z = llt.matrixL().solve(g);           // L^-1 g
    const double logdet = 2.0 * llt.matrixLLT().diagonal().real().array().log().sum();
    res.log_evidence.push_back(-n * std::log(std::numbers::pi) - logdet - z.squaredNorm());

    mu = va.asDiagonal() * (w.adjoint() * z);
    const Eigen::VectorXd quad = w.colwise().squaredNorm().transpose();
    const Eigen::VectorXd post_var = va - va.cwiseAbs2().cwiseProduct(quad);
    const Eigen::VectorXd updated = mu.cwiseAbs2() + post_var.cwiseMax(0.0);

    const double change = (updated - va).norm() / std::max(updated.norm(), 1e-300);
    for (int j = 0; j < a; ++j) var[active[j]] = updated[j];
    res.iterations = it + 1;

    const double top = updated.maxCoeff();
    std::vector<int> kept;
    for (int j = 0; j < a; ++j)
      if (updated[j] >= cfg.prune_threshold * top) kept.push_back(active[j]);
    if (kept.empty()) kept.push_back(active[0]);

    if (change < cfg.tol) {
      res.converged = true;
      break;
    }
    active.swap(kept);
  }

  // Posterior mean for the final hyperparameters.
  const int a = static_cast<int>(active.size());
  Eigen::MatrixXcd ha(n, a);
  Eigen::VectorXd va(a);
  for (int j = 0; j < a; ++j) {
    ha.col(j) = model.H.col(active[j]);
    va[j] = var[active[j]];
  }
  Eigen::MatrixXcd cov = ha * va.asDiagonal() * ha.adjoint();
  cov.diagonal().array() += s2;
  mu = va.asDiagonal() * (ha.adjoint() * Eigen::LLT<Eigen::MatrixXcd>(cov).solve(g));
  for (int j = 0; j < a; ++j) res.gamma[active[j]] = mu[j];
  return res;
}

// ---------------------------------------------------------------------------

struct LmmseVampConfig {
  int iters = 8;
  double threshold = 1.0;  // soft threshold in units of sqrt(chi2)
  double alpha_min = default_alpha_min;
  bool record = false;     // keep the per-iteration linear operators
};

struct LmmseVampResult {
  Eigen::VectorXcd gamma;
  Eigen::VectorXd gamma_embed;
  Eigen::MatrixXd R0;
  std::vector<Eigen::MatrixXd> G;  // per iteration, when recorded
  std::vector<Eigen::MatrixXd> R;
  bool regularized = false;
};

namespace detail {
/// Soft threshold and its mean derivative (0 at the threshold itself).
inline void soft_threshold(const Eigen::VectorXd& v, const Eigen::VectorXd& chi, double lambda,
                           Eigen::VectorXd& out, double& mean_deriv) {
  out.resize(v.size());
  double active = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double thr = lambda * std::sqrt(chi[i]);
    const double u = std::abs(v[i]);
    if (u > thr) {
      out[i] = std::copysign(u - thr, v[i]);
      active += 1;
    } else {
      out[i] = 0;
    }
  }
  mean_deriv = active / static_cast<double>(v.size());
}

/// Inverse of a symmetric positive definite matrix, with a 1e-10 ridge when
/// the factorization fails.
inline Eigen::MatrixXd spd_inverse(Eigen::MatrixXd a, bool& regularized) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    regularized = true;
    a.diagonal().array() += 1e-10;
    llt.compute(a);
  }
  return llt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
}
}  // namespace detail

/// LMMSE operators for prior variances chi and real per-coordinate noise
/// variance: gamma = G v + R g with G = W diag(1/chi), R = W H^T / var and
/// W = (H^T H / var + diag(1/chi))^-1.
struct LmmseOperators {
  Eigen::MatrixXd G, R;
};

inline LmmseOperators lmmse_operators(const Eigen::MatrixXd& h, const Eigen::VectorXd& chi,
                                      double real_var, bool& regularized) {
  Eigen::MatrixXd a = h.transpose() * h / real_var;
  a.diagonal() += chi.cwiseInverse();
  const Eigen::MatrixXd w = detail::spd_inverse(std::move(a), regularized);
  return {w * chi.cwiseInverse().asDiagonal(), w * h.transpose() / real_var};
}

/// VAMP with an LMMSE linear stage and soft-threshold denoiser, run in the
/// real embedding. `noise_var` is the complex per-sample noise variance. The
/// first linear step starts from the matched-filter image under an
/// uninformative prior (identity initial denoiser).
inline LmmseVampResult lmmse_vamp(const SteeringModel& model, const Eigen::VectorXcd& g,
                                  double noise_var, const LmmseVampConfig& cfg = {}) {
  detail::check_echo(model, g);
  if (!(noise_var > 0)) throw Error(ErrorKind::invalid_input, "noise variance must be positive");
  const Eigen::MatrixXd& h = model.H_embed;
  const Eigen::Index k = h.cols();
  const Eigen::VectorXd ge = real_embed(g);
  const double n = model.n();
  const double amin = cfg.alpha_min;

  LmmseVampResult res;
  res.R0 = h.transpose() / n;
  Eigen::VectorXd v2 = res.R0 * ge;
  Eigen::VectorXd chi2 = Eigen::VectorXd::Constant(k, std::max(ge.squaredNorm() / n, power_floor));
  Eigen::VectorXd gamma_hat = v2;
  double alpha2 = clamp_alpha(1.0, amin);
  double mean_deriv = 0;

  for (int it = 0; it < cfg.iters; ++it) {
    const Eigen::VectorXd v1 = (gamma_hat - alpha2 * v2) / (1.0 - alpha2);
    const Eigen::VectorXd chi1 = alpha2 * chi2 / (1.0 - alpha2);
    auto op = lmmse_operators(h, chi1, 0.5 * noise_var, res.regularized);
    const Eigen::VectorXd gamma_tilde = op.G * v1 + op.R * ge;
    const double alpha1 = clamp_alpha(op.G.trace() / static_cast<double>(k), amin);
    v2 = (gamma_tilde - alpha1 * v1) / (1.0 - alpha1);
    chi2 = (alpha1 / (1.0 - alpha1)) * chi1;
    detail::soft_threshold(v2, chi2, cfg.threshold, gamma_hat, mean_deriv);
    alpha2 = clamp_alpha(mean_deriv, amin);
    if (cfg.record) {
      res.G.push_back(std::move(op.G));
      res.R.push_back(std::move(op.R));
    }
  }
  res.gamma_embed = gamma_hat;
  res.gamma = real_extract(gamma_hat);
  return res;
}

/// Network whose layers carry the linear operators of a recorded lmmse_vamp
/// run. The outer denoiser knot sits far enough out that it is never reached.
inline NetworkParams freeze_lmmse_vamp(const SteeringModel& model, const LmmseVampResult& run,
                                       const LmmseVampConfig& cfg = {}) {
  if (run.G.empty() && cfg.iters > 0)
    throw Error(ErrorKind::invalid_input, "lmmse_vamp run was not recorded");
  const Eigen::Index k = model.H_embed.cols();
  Eigen::MatrixXd shrink(k, denoiser_params), identity(k, denoiser_params);
  shrink.rowwise() = Eigen::RowVectorXd{{cfg.threshold, 1e6, 0.0, 1.0, 1.0}};
  identity.rowwise() = Eigen::RowVectorXd{{1.0, 2.0, 1.0, 1.0, 1.0}};

  NetworkParams net;
  net.alpha_min = cfg.alpha_min;
  net.geometry_fingerprint = model.config.fingerprint();
  net.init = {run.R0, Eigen::VectorXd::Ones(k), identity};
  for (std::size_t t = 0; t < run.G.size(); ++t)
    net.layers.push_back({run.G[t], run.R[t], Eigen::VectorXd::Ones(k), shrink});
  return net;
}

}  // namespace tomofocus
