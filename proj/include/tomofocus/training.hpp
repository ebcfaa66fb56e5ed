// SPDX-License-Identifier: Apache-2.0
//
// Loss, reverse-mode gradients through the unfolded network, Adam, and the
// layer-by-layer training schedule.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tomofocus/container.hpp"
#include "tomofocus/error.hpp"
#include "tomofocus/geometry.hpp"
#include "tomofocus/lvamp.hpp"
#include "tomofocus/parallel.hpp"
#include "tomofocus/synth.hpp"

namespace tomofocus {

/// Gradients mirror the parameter layout exactly.
struct GradientSet {
  InitParams init;
  std::vector<LayerParams> layers;

  static GradientSet zeros_like(const NetworkParams& net) {
    GradientSet g;
    g.init = {Eigen::MatrixXd::Zero(net.init.R0.rows(), net.init.R0.cols()),
              Eigen::VectorXd::Zero(net.init.beta0.size()),
              Eigen::MatrixXd::Zero(net.init.theta0.rows(), net.init.theta0.cols())};
    for (const auto& l : net.layers)
      g.layers.push_back({Eigen::MatrixXd::Zero(l.G.rows(), l.G.cols()),
                          Eigen::MatrixXd::Zero(l.R.rows(), l.R.cols()),
                          Eigen::VectorXd::Zero(l.beta.size()),
                          Eigen::MatrixXd::Zero(l.theta.rows(), l.theta.cols())});
    return g;
  }

  GradientSet& operator+=(const GradientSet& o) {
    init.R0 += o.init.R0;
    init.beta0 += o.init.beta0;
    init.theta0 += o.init.theta0;
    for (std::size_t t = 0; t < layers.size(); ++t) {
      layers[t].G += o.layers[t].G;
      layers[t].R += o.layers[t].R;
      layers[t].beta += o.layers[t].beta;
      layers[t].theta += o.layers[t].theta;
    }
    return *this;
  }

  bool all_finite() const {
    bool ok = init.R0.allFinite() && init.beta0.allFinite() && init.theta0.allFinite();
    for (const auto& l : layers)
      ok = ok && l.G.allFinite() && l.R.allFinite() && l.beta.allFinite() && l.theta.allFinite();
    return ok;
  }
};

/// Which tensors receive gradients and updates.
struct TrainableSet {
  bool init = true;
  int first_layer = 0;  // zero-based; layers [first_layer, depth) are trainable

  static TrainableSet all() { return {true, 0}; }
};

/// Visits matching (parameter, other) tensor pairs of the trainable set as
/// flat double ranges.
template <class A, class B, class Fn>
void for_each_tensor(A& a, B& b, const TrainableSet& set, Fn&& fn) {
  auto visit = [&](auto& x, auto& y) { fn(x.data(), y.data(), x.size()); };
  if (set.init) {
    visit(a.init.R0, b.init.R0);
    visit(a.init.beta0, b.init.beta0);
    visit(a.init.theta0, b.init.theta0);
  }
  for (std::size_t t = std::max(set.first_layer, 0); t < a.layers.size(); ++t) {
    visit(a.layers[t].G, b.layers[t].G);
    visit(a.layers[t].R, b.layers[t].R);
    visit(a.layers[t].beta, b.layers[t].beta);
    visit(a.layers[t].theta, b.layers[t].theta);
  }
}

struct Batch {
  Eigen::MatrixXd echoes;  // 2N x Q
  Eigen::MatrixXd truths;  // 2M x Q
};

namespace detail {

using RowVec = Eigen::RowVectorXd;

/// Element-wise denoiser over a K x B block. Writes outputs, segments, and the
/// per-column mean slope.
inline void shrink_block(const Eigen::MatrixXd& v, const Eigen::MatrixXd& chi,
                         const Eigen::MatrixXd& theta, Eigen::MatrixXd& out,
                         Eigen::MatrixXi* seg, RowVec& mean_slope) {
  const auto k = v.rows(), b = v.cols();
  out.resize(k, b);
  if (seg) seg->resize(k, b);
  mean_slope.setZero(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    double slope_sum = 0;
    for (Eigen::Index i = 0; i < k; ++i) {
      if (!(chi(i, j) > 0))
        throw Error(ErrorKind::invalid_precision,
                    "non-positive precision at element " + std::to_string(i));
      const auto p = shrink(v(i, j), std::sqrt(chi(i, j)), theta, i);
      out(i, j) = p.out;
      slope_sum += p.slope;
      if (seg) (*seg)(i, j) = p.segment;
    }
    mean_slope[j] = slope_sum / static_cast<double>(k);
  }
}

/// Adjoint of shrink_block. `g_mean` is the upstream gradient of each
/// column's mean slope (already zeroed where the divergence was clamped).
inline void shrink_block_backward(const Eigen::MatrixXd& g_out, const RowVec& g_mean,
                                  const Eigen::MatrixXd& v, const Eigen::MatrixXd& chi,
                                  const Eigen::MatrixXd& theta, const Eigen::MatrixXi& seg,
                                  Eigen::MatrixXd& g_v, Eigen::MatrixXd& g_chi,
                                  Eigen::MatrixXd* g_theta) {
  const auto k = v.rows(), b = v.cols();
  const double inv_k = 1.0 / static_cast<double>(k);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) {
      const double k1 = theta(i, 0), k2 = theta(i, 1);
      const double s1 = theta(i, 2), s2 = theta(i, 3), s3 = theta(i, 4);
      const double sigma = std::sqrt(chi(i, j));
      const double x = v(i, j);
      const double u = std::abs(x);
      const double sg = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
      const double go = g_out(i, j);
      double d_sigma = 0;
      switch (seg(i, j)) {
        case 0:
          g_v(i, j) += go * s1;
          if (g_theta) (*g_theta)(i, 2) += go * x;
          break;
        case 1:
          g_v(i, j) += go * s2;
          d_sigma = sg * k1 * (s1 - s2);
          if (g_theta) {
            (*g_theta)(i, 0) += go * sg * sigma * (s1 - s2);
            (*g_theta)(i, 2) += go * sg * k1 * sigma;
            (*g_theta)(i, 3) += go * sg * (u - k1 * sigma);
          }
          break;
        default:
          g_v(i, j) += go * s3;
          d_sigma = sg * (k1 * (s1 - s2) + k2 * (s2 - s3));
          if (g_theta) {
            (*g_theta)(i, 0) += go * sg * sigma * (s1 - s2);
            (*g_theta)(i, 1) += go * sg * sigma * (s2 - s3);
            (*g_theta)(i, 2) += go * sg * k1 * sigma;
            (*g_theta)(i, 3) += go * sg * (k2 - k1) * sigma;
            (*g_theta)(i, 4) += go * sg * (u - k2 * sigma);
          }
          break;
      }
      g_chi(i, j) += go * d_sigma / (2.0 * sigma);
      if (g_theta) (*g_theta)(i, 2 + seg(i, j)) += g_mean[j] * inv_k;
    }
  }
}

struct LayerTape {
  Eigen::MatrixXd v1, chi1, gamma_tilde, v2, chi2, gamma_hat;
  Eigen::MatrixXi seg;
  RowVec alpha2;
  RowVec alpha2_live;  // 1 where the divergence was not clamped
  double alpha1 = 0;
  bool alpha1_live = true;
};

struct Tape {
  Eigen::RowVectorXd power;
  LayerTape init;  // v2, chi2, gamma_hat, seg, alpha2 of the initialization line
  std::vector<LayerTape> layers;
};

inline void check_block(const Eigen::MatrixXd& x, int layer, const char* step) {
  if (!x.allFinite())
    throw Error(ErrorKind::numerical_divergence,
                "non-finite value at layer " + std::to_string(layer) + ", step " + step);
}

inline void clamp_row(const RowVec& raw, double amin, RowVec& clamped, RowVec& live) {
  clamped.resize(raw.size());
  live.resize(raw.size());
  for (Eigen::Index j = 0; j < raw.size(); ++j) {
    clamped[j] = clamp_alpha(raw[j], amin);
    live[j] = (raw[j] >= amin && raw[j] <= 1.0 - amin) ? 1.0 : 0.0;
  }
}

/// Batched forward pass; columns are independent samples.
inline Eigen::MatrixXd run_block(const NetworkParams& net, const Eigen::MatrixXd& echoes,
                                 Tape* tape) {
  const double amin = net.alpha_min;
  const double n = 0.5 * static_cast<double>(echoes.rows());
  RowVec power = (echoes.colwise().squaredNorm() / n).cwiseMax(power_floor);

  LayerTape cur;
  cur.v2 = net.init.R0 * echoes;
  cur.chi2 = net.init.beta0 * power;
  RowVec mean;
  shrink_block(cur.v2, cur.chi2, net.init.theta0, cur.gamma_hat, tape ? &cur.seg : nullptr, mean);
  clamp_row(mean, amin, cur.alpha2, cur.alpha2_live);
  check_block(cur.gamma_hat, 0, "init");
  if (tape) {
    tape->power = power;
    tape->layers.clear();
    tape->layers.reserve(net.layers.size());
  }

  for (std::size_t t = 0; t < net.layers.size(); ++t) {
    const auto& p = net.layers[t];
    const int layer = static_cast<int>(t) + 1;
    LayerTape nx;
    const RowVec inv = (1.0 - cur.alpha2.array()).inverse().matrix();
    nx.v1 = (cur.gamma_hat - cur.v2 * cur.alpha2.asDiagonal()) * inv.asDiagonal();
    nx.chi1 = cur.chi2 * (cur.alpha2.cwiseProduct(inv)).asDiagonal();
    check_block(nx.v1, layer, "1");
    const double raw1 = p.G.trace() / static_cast<double>(p.G.rows());
    nx.alpha1 = clamp_alpha(raw1, amin);
    nx.alpha1_live = raw1 >= amin && raw1 <= 1.0 - amin;
    nx.gamma_tilde.noalias() = p.G * nx.v1;
    nx.gamma_tilde.noalias() += p.R * echoes;
    nx.v2 = (nx.gamma_tilde - nx.alpha1 * nx.v1) / (1.0 - nx.alpha1);
    nx.chi2 = (nx.alpha1 / (1.0 - nx.alpha1)) * (p.beta.asDiagonal() * nx.chi1);
    check_block(nx.v2, layer, "5");
    check_block(nx.chi2, layer, "6");
    shrink_block(nx.v2, nx.chi2, p.theta, nx.gamma_hat, tape ? &nx.seg : nullptr, mean);
    clamp_row(mean, amin, nx.alpha2, nx.alpha2_live);
    check_block(nx.gamma_hat, layer, "7");
    if (tape) {
      if (t == 0) tape->init = std::move(cur);
      else tape->layers.push_back(std::move(cur));
    }
    cur = std::move(nx);
  }
  Eigen::MatrixXd out = cur.gamma_hat;
  if (tape) {
    if (net.layers.empty()) tape->init = std::move(cur);
    else tape->layers.push_back(std::move(cur));
  }
  return out;
}

/// Reverse pass for one block. `g_out` is dLoss/dgamma_hat_T for each column.
inline void backward_block(const NetworkParams& net, const Eigen::MatrixXd& echoes,
                           const Tape& tape, const Eigen::MatrixXd& g_out,
                           const TrainableSet& set, GradientSet& grads) {
  const auto k = g_out.rows(), b = g_out.cols();
  Eigen::MatrixXd g_gh = g_out;
  Eigen::MatrixXd g_v2 = Eigen::MatrixXd::Zero(k, b);
  Eigen::MatrixXd g_chi2 = Eigen::MatrixXd::Zero(k, b);
  RowVec g_a2 = RowVec::Zero(b);

  const int depth = net.depth();
  const int stop = set.init ? 0 : std::max(set.first_layer, 0);
  for (int t = depth - 1; t >= stop; --t) {
    const auto& p = net.layers[t];
    const auto& st = tape.layers[t];
    const auto& prev = t == 0 ? tape.init : tape.layers[t - 1];
    auto& gp = grads.layers[t];
    const bool want = t >= set.first_layer;

    // alpha2 = <eta2'>, then gamma_hat = eta2(v2, chi2, theta)
    const RowVec g_mean = g_a2.cwiseProduct(st.alpha2_live);
    shrink_block_backward(g_gh, g_mean, st.v2, st.chi2, p.theta, st.seg, g_v2, g_chi2,
                          want ? &gp.theta : nullptr);

    const double a1 = st.alpha1;
    const double c1 = a1 / (1.0 - a1);
    const double inv1 = 1.0 / (1.0 - a1);
    // chi2 = c1 * chi1 .* beta
    Eigen::MatrixXd g_chi1 = c1 * (p.beta.asDiagonal() * g_chi2);
    if (want) gp.beta += c1 * g_chi2.cwiseProduct(st.chi1).rowwise().sum();
    double g_a1 = (g_chi2.cwiseProduct(st.chi1).transpose() * p.beta).sum() * inv1 * inv1;
    // v2 = (gamma_tilde - a1 v1) / (1 - a1)
    Eigen::MatrixXd g_gt = g_v2 * inv1;
    Eigen::MatrixXd g_v1 = -a1 * inv1 * g_v2;
    g_a1 += g_v2.cwiseProduct(st.gamma_tilde - st.v1).sum() * inv1 * inv1;
    // alpha1 = tr(G) / 2M
    if (want && st.alpha1_live) gp.G.diagonal().array() += g_a1 / static_cast<double>(k);
    // gamma_tilde = G v1 + R g
    if (want) {
      gp.G.noalias() += g_gt * st.v1.transpose();
      gp.R.noalias() += g_gt * echoes.transpose();
    }
    g_v1.noalias() += p.G.transpose() * g_gt;

    if (t == stop && !(t == 0 && set.init)) return;

    // chi1 = a2 chi2_prev / (1 - a2); v1 = (gamma_hat_prev - a2 v2_prev) / (1 - a2)
    const RowVec a2 = prev.alpha2;
    const RowVec inv2 = (1.0 - a2.array()).inverse().matrix();
    const RowVec c2 = a2.cwiseProduct(inv2);
    Eigen::MatrixXd g_chi2_prev = g_chi1 * c2.asDiagonal();
    RowVec g_a2_prev = g_chi1.cwiseProduct(prev.chi2).colwise().sum().cwiseProduct(inv2).cwiseProduct(inv2);
    Eigen::MatrixXd g_gh_prev = g_v1 * inv2.asDiagonal();
    Eigen::MatrixXd g_v2_prev = -(g_v1 * c2.asDiagonal());
    g_a2_prev += g_v1.cwiseProduct(prev.gamma_hat - prev.v2)
                     .colwise()
                     .sum()
                     .cwiseProduct(inv2)
                     .cwiseProduct(inv2);

    g_gh = std::move(g_gh_prev);
    g_v2 = std::move(g_v2_prev);
    g_chi2 = std::move(g_chi2_prev);
    g_a2 = std::move(g_a2_prev);
  }

  if (!set.init) return;
  // Initialization line.
  const auto& st = tape.init;
  const RowVec g_mean = g_a2.cwiseProduct(st.alpha2_live);
  shrink_block_backward(g_gh, g_mean, st.v2, st.chi2, net.init.theta0, st.seg, g_v2, g_chi2,
                        &grads.init.theta0);
  grads.init.beta0.noalias() += g_chi2 * tape.power.transpose();
  grads.init.R0.noalias() += g_v2 * echoes.transpose();
}

inline void check_batch(const NetworkParams& net, const Batch& batch) {
  if (batch.echoes.cols() == 0) throw Error(ErrorKind::invalid_batch, "empty batch");
  if (batch.echoes.rows() != net.echo_dim() || batch.truths.rows() != net.signal_dim() ||
      batch.truths.cols() != batch.echoes.cols())
    throw Error(ErrorKind::invalid_batch, "batch shape does not match the network");
}

/// Fixed column chunking; independent of the worker count.
inline constexpr Eigen::Index chunk_columns = 64;

inline std::size_t chunk_count(Eigen::Index cols) {
  return static_cast<std::size_t>((cols + chunk_columns - 1) / chunk_columns);
}

}  // namespace detail

/// Network outputs for every column of `echoes`.
inline Eigen::MatrixXd forward_batch(const NetworkParams& net, const Eigen::MatrixXd& echoes,
                                     int threads = 1) {
  Eigen::MatrixXd out(net.signal_dim(), echoes.cols());
  const auto chunks = detail::chunk_count(echoes.cols());
  parallel_for(chunks, threads, [&](std::size_t c) {
    const auto begin = Eigen::Index(c) * detail::chunk_columns;
    const auto cols = std::min(detail::chunk_columns, echoes.cols() - begin);
    out.middleCols(begin, cols) = detail::run_block(net, echoes.middleCols(begin, cols), nullptr);
  });
  return out;
}

/// Mean over the batch of the squared distance between output and truth.
inline double loss(const NetworkParams& net, const Batch& batch, int threads = 1) {
  detail::check_batch(net, batch);
  const Eigen::MatrixXd out = forward_batch(net, batch.echoes, threads);
  return (out - batch.truths).colwise().squaredNorm().sum() / static_cast<double>(batch.echoes.cols());
}

struct BackwardResult {
  double loss;
  GradientSet grads;
};

/// Exact reverse-mode gradient of the batch loss. Chunks are reduced in a
/// fixed order, so the result does not depend on `threads`.
inline BackwardResult backward(const NetworkParams& net, const Batch& batch,
                               const TrainableSet& set = TrainableSet::all(), int threads = 1) {
  detail::check_batch(net, batch);
  const auto q = batch.echoes.cols();
  const auto chunks = detail::chunk_count(q);
  std::vector<GradientSet> partial(chunks);
  std::vector<double> partial_loss(chunks, 0.0);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const auto begin = Eigen::Index(c) * detail::chunk_columns;
    const auto cols = std::min(detail::chunk_columns, q - begin);
    const Eigen::MatrixXd echoes = batch.echoes.middleCols(begin, cols);
    detail::Tape tape;
    const Eigen::MatrixXd out = detail::run_block(net, echoes, &tape);
    const Eigen::MatrixXd diff = out - batch.truths.middleCols(begin, cols);
    partial_loss[c] = diff.squaredNorm();
    partial[c] = GradientSet::zeros_like(net);
    detail::backward_block(net, echoes, tape, (2.0 / static_cast<double>(q)) * diff, set,
                           partial[c]);
  });
  BackwardResult r{0.0, std::move(partial[0])};
  r.loss = partial_loss[0];
  for (std::size_t c = 1; c < chunks; ++c) {
    r.grads += partial[c];
    r.loss += partial_loss[c];
  }
  r.loss /= static_cast<double>(q);
  if (!std::isfinite(r.loss) || !r.grads.all_finite())
    throw Error(ErrorKind::numerical_divergence, "non-finite loss or gradient");
  return r;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Knot and precision constraints restored after every update.
inline constexpr double knot_floor = 1e-3;
inline constexpr double knot_gap = 1e-3;
inline constexpr double beta_floor = 1e-6;

inline void project_params(NetworkParams& net) {
  auto fix_theta = [](Eigen::MatrixXd& th) {
    for (Eigen::Index i = 0; i < th.rows(); ++i) {
      th(i, 0) = std::max(th(i, 0), knot_floor);
      th(i, 1) = std::max(th(i, 1), th(i, 0) + knot_gap);
    }
  };
  fix_theta(net.init.theta0);
  net.init.beta0 = net.init.beta0.cwiseMax(beta_floor);
  for (auto& l : net.layers) {
    fix_theta(l.theta);
    l.beta = l.beta.cwiseMax(beta_floor);
  }
}

class Adam {
 public:
  Adam(const NetworkParams& net, AdamConfig cfg = {})
      : cfg_(cfg), m_(GradientSet::zeros_like(net)), v_(GradientSet::zeros_like(net)) {}

  void step(NetworkParams& net, const GradientSet& grads, double lr, const TrainableSet& set) {
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
    // Walk (param, grad), then (m, v) over the same tensor order.
    std::vector<std::pair<double*, const double*>> pg;
    std::vector<std::pair<double*, double*>> mv;
    std::vector<Eigen::Index> sizes;
    for_each_tensor(net, grads, set, [&](double* p, const double* g, Eigen::Index n) {
      pg.emplace_back(p, g);
      sizes.push_back(n);
    });
    for_each_tensor(m_, v_, set, [&](double* m, double* v, Eigen::Index) { mv.emplace_back(m, v); });
    for (std::size_t t = 0; t < pg.size(); ++t) {
      auto [p, g] = pg[t];
      auto [m, v] = mv[t];
      for (Eigen::Index i = 0; i < sizes[t]; ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
    project_params(net);
  }

  long steps() const { return steps_; }

 private:
  AdamConfig cfg_;
  GradientSet m_, v_;
  long steps_ = 0;
};

struct TrainConfig {
  std::int64_t count = 200000;  // P
  int batch = 500;              // Q
  int depth = 8;                // T
  double lr_new = 1e-3;
  double lr_refine = 1e-4;
  int patience = 5;
  std::int64_t val_size = 5000;
  std::uint64_t seed = 1;
  double snr_db = 15.0;
  int eval_every = 200;  // batches between validation rounds
  int max_rounds = 0;    // per phase; 0 = until the plateau rule stops it
  InitMode init_mode = InitMode::lmmse;
  bool warm_start = true;  // new layers copy the previous trained layer
  int threads = 1;

  void validate() const {
    if (batch < 1 || depth < 1 || patience < 1 || eval_every < 1)
      throw Error(ErrorKind::invalid_config, "batch, depth, patience, eval_every must be positive");
    if (!(lr_new >= 0) || !(lr_refine >= 0))
      throw Error(ErrorKind::invalid_config, "step sizes must be non-negative");
  }
};

struct LogRow {
  int layer;
  char phase;  // 'A' new layer only, 'B' joint refinement
  int epoch;
  std::int64_t step;
  double train_loss;
  double val_loss;
  double wallclock_s;
};

inline void write_log_csv(std::ostream& os, const std::vector<LogRow>& log) {
  os << "layer,phase,epoch,step,train_loss,val_loss,wallclock_s\n";
  os.precision(10);
  for (const auto& r : log)
    os << r.layer << ',' << r.phase << ',' << r.epoch << ',' << r.step << ',' << r.train_loss << ','
       << r.val_loss << ',' << r.wallclock_s << '\n';
}

struct TrainResult {
  NetworkParams net;
  std::vector<LogRow> log;
};

/// Raised when validation loss turns non-finite; carries the log so far.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::vector<LogRow> log)
      : Error(ErrorKind::numerical_divergence, what), log_(std::move(log)) {}
  const std::vector<LogRow>& log() const { return log_; }

 private:
  std::vector<LogRow> log_;
};

inline Batch gather(const Dataset& data, const std::vector<std::int64_t>& idx, std::size_t begin,
                    std::size_t count) {
  Batch b{Eigen::MatrixXd(data.echoes.rows(), Eigen::Index(count)),
          Eigen::MatrixXd(data.truths.rows(), Eigen::Index(count))};
  for (std::size_t i = 0; i < count; ++i) {
    b.echoes.col(Eigen::Index(i)) = data.echoes.col(idx[begin + i]);
    b.truths.col(Eigen::Index(i)) = data.truths.col(idx[begin + i]);
  }
  return b;
}

/// Layer-by-layer training. The last `val_size` samples are held out for
/// validation; each phase keeps its best-validation parameters.
inline TrainResult train_layerwise(const SteeringModel& model, const TrainConfig& cfg,
                                   const Dataset& data, std::ostream* progress = nullptr) {
  cfg.validate();
  if (data.echoes.rows() != 2 * model.n() || data.truths.rows() != 2 * model.m())
    throw Error(ErrorKind::invalid_batch, "dataset does not match the steering model");
  const std::int64_t total = data.size();
  const std::int64_t val_size = std::min<std::int64_t>(cfg.val_size, total - 1);
  const std::int64_t train_size = total - val_size;
  if (val_size < 1 || train_size < cfg.batch)
    throw Error(ErrorKind::invalid_config, "dataset too small for the batch and validation sizes");

  Batch val{data.echoes.rightCols(val_size), data.truths.rightCols(val_size)};
  const auto clock_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  };

  NetworkParams net = init_network(model, 1, cfg.init_mode);
  net.layers.clear();
  const LayerParams fresh = init_layer(model, cfg.init_mode);

  TrainResult result;
  std::vector<std::int64_t> order(static_cast<std::size_t>(train_size));
  std::uint64_t shuffle_counter = 0;

  auto run_phase = [&](int layer, char phase, double lr, const TrainableSet& set) {
    double best = loss(net, val, cfg.threads);
    if (!std::isfinite(best))
      throw TrainingAborted("validation loss is not finite before training", result.log);
    result.log.push_back({layer, phase, 0, 0, std::numeric_limits<double>::quiet_NaN(), best, elapsed()});
    NetworkParams best_net = net;
    Adam adam(net);
    const std::size_t per_epoch = static_cast<std::size_t>(train_size / cfg.batch);
    std::size_t cursor = per_epoch;
    int epoch = 0, stale = 0, rounds = 0;
    std::int64_t step = 0;
    while (true) {
      double window = 0;
      for (int i = 0; i < cfg.eval_every; ++i) {
        if (cursor == per_epoch) {
          std::iota(order.begin(), order.end(), std::int64_t{0});
          auto rng = substream(cfg.seed, stream::shuffle, shuffle_counter++);
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
          ++epoch;
        }
        const Batch b = gather(data, order, cursor * cfg.batch, cfg.batch);
        ++cursor;
        BackwardResult br;
        try {
          br = backward(net, b, set, cfg.threads);
        } catch (const Error& e) {
          throw TrainingAborted(std::string("training diverged: ") + e.what(), result.log);
        }
        adam.step(net, br.grads, lr, set);
        window += br.loss;
        ++step;
      }
      double v;
      try {
        v = loss(net, val, cfg.threads);
      } catch (const Error&) {
        v = std::numeric_limits<double>::quiet_NaN();
      }
      ++rounds;
      result.log.push_back({layer, phase, epoch, step, window / cfg.eval_every, v, elapsed()});
      if (progress)
        *progress << "layer " << layer << " phase " << phase << " step " << step << " train "
                  << window / cfg.eval_every << " val " << v << '\n';
      if (!std::isfinite(v)) throw TrainingAborted("validation loss is not finite", result.log);
      if (v < best) {
        best = v;
        best_net = net;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
      if (cfg.max_rounds > 0 && rounds >= cfg.max_rounds) break;
    }
    net = std::move(best_net);
  };

  for (int t = 1; t <= cfg.depth; ++t) {
    net.layers.push_back(t > 1 && cfg.warm_start ? net.layers.back() : fresh);
    run_phase(t, 'A', cfg.lr_new, TrainableSet{t == 1, t - 1});
    run_phase(t, 'B', cfg.lr_refine, TrainableSet::all());
  }
  result.net = std::move(net);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline TensorContainer to_container(const NetworkParams& net) {
  TensorContainer c;
  nlohmann::json h{{"kind", "network"},
                   {"T", net.depth()},
                   {"M", net.signal_dim() / 2},
                   {"N", net.echo_dim() / 2},
                   {"init_mode", to_string(net.mode)},
                   {"alpha_min", net.alpha_min},
                   {"geometry_fingerprint", std::to_string(net.geometry_fingerprint)}};
  c.header = h.dump();
  c.put("init/R0", net.init.R0);
  c.put("init/beta0", net.init.beta0);
  c.put("init/theta0", net.init.theta0);
  for (int t = 0; t < net.depth(); ++t) {
    const auto p = "layer" + std::to_string(t + 1) + "/";
    c.put(p + "G", net.layers[t].G);
    c.put(p + "R", net.layers[t].R);
    c.put(p + "beta", net.layers[t].beta);
    c.put(p + "theta", net.layers[t].theta);
  }
  return c;
}

inline NetworkParams from_container(const TensorContainer& c) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(c.header);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("checkpoint header: ") + e.what());
  }
  if (h.value("kind", "") != "network") throw Error(ErrorKind::parse_error, "not a network checkpoint");
  NetworkParams net;
  try {
    net.mode = parse_init_mode(h.at("init_mode").get<std::string>());
    net.alpha_min = h.at("alpha_min").get<double>();
    net.geometry_fingerprint = std::stoull(h.at("geometry_fingerprint").get<std::string>());
    const int depth = h.at("T").get<int>();
    const int m = h.at("M").get<int>();
    const int n = h.at("N").get<int>();
    net.init = {c.matrix("init/R0"), c.vector("init/beta0"), c.matrix("init/theta0")};
    for (int t = 0; t < depth; ++t) {
      const auto p = "layer" + std::to_string(t + 1) + "/";
      net.layers.push_back({c.matrix(p + "G"), c.matrix(p + "R"), c.vector(p + "beta"), c.matrix(p + "theta")});
    }
    auto shape_ok = [&](const Eigen::MatrixXd& x, int r, int cols) { return x.rows() == r && x.cols() == cols; };
    bool ok = shape_ok(net.init.R0, 2 * m, 2 * n) && net.init.beta0.size() == 2 * m &&
              shape_ok(net.init.theta0, 2 * m, denoiser_params);
    for (const auto& l : net.layers)
      ok = ok && shape_ok(l.G, 2 * m, 2 * m) && shape_ok(l.R, 2 * m, 2 * n) && l.beta.size() == 2 * m &&
           shape_ok(l.theta, 2 * m, denoiser_params);
    if (!ok) throw Error(ErrorKind::parse_error, "checkpoint array shapes disagree with header");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse_error, std::string("checkpoint header: ") + e.what());
  }
  return net;
}

inline void save_checkpoint(const NetworkParams& net, const std::string& path) {
  to_container(net).save(path);
}

/// Loads a checkpoint and verifies it was trained for `expected` geometry and
/// (when `expected_depth` > 0) the expected number of layers.
inline NetworkParams load_checkpoint(const std::string& path, const GeometryConfig& expected,
                                     int expected_depth = 0) {
  auto net = from_container(TensorContainer::load(path));
  if (net.geometry_fingerprint != expected.fingerprint())
    throw Error(ErrorKind::incompatible_checkpoint, "checkpoint '" + path + "' was trained for a different geometry");
  if (expected_depth > 0 && net.depth() != expected_depth)
    throw Error(ErrorKind::incompatible_checkpoint, "checkpoint '" + path + "' has " +
                                                        std::to_string(net.depth()) + " layers, expected " +
                                                        std::to_string(expected_depth));
  return net;
}

}  // namespace tomofocus
