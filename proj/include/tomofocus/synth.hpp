// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "tomofocus/error.hpp"
#include "tomofocus/geometry.hpp"
#include "tomofocus/parallel.hpp"

namespace tomofocus {

struct Scatterer {
  double s;  // continuous cross-track position (m)
  std::complex<double> gamma;
};

using Scene = std::vector<Scatterer>;

struct DatasetSpec {
  std::int64_t count = 200000;
  std::vector<double> snr_db{15.0};
  std::uint64_t seed = 1;
  std::vector<int> support{1, 2, 3, 4};

  void validate() const {
    if (count < 1) throw Error(ErrorKind::invalid_spec, "dataset needs at least one sample");
    if (snr_db.empty()) throw Error(ErrorKind::invalid_spec, "empty SNR list");
    if (support.empty()) throw Error(ErrorKind::invalid_spec, "empty scatterer-count support");
    for (int k : support)
      if (k < 0) throw Error(ErrorKind::invalid_spec, "negative scatterer count in support");
  }
};

struct TrainingSample {
  Eigen::VectorXd g_embed;      // noisy echo, 2N
  Eigen::VectorXd gamma_embed;  // gridded truth, 2M
  double snr_db;
  Scene scene;
};

/// Draws a scene: count uniform over the support, positions uniform over the
/// extent, amplitudes N(0,1) + jN(0,1).
template <class Rng>
Scene sample_scene(Rng& rng, double extent_m, const std::vector<int>& support) {
  if (support.empty()) throw Error(ErrorKind::invalid_spec, "empty scatterer-count support");
  std::uniform_int_distribution<std::size_t> pick(0, support.size() - 1);
  std::uniform_real_distribution<double> position(-0.5 * extent_m, 0.5 * extent_m);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int count = support[pick(rng)];
  Scene scene;
  scene.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double s = position(rng);
    const double re = normal(rng);
    const double im = normal(rng);
    scene.push_back({s, {re, im}});
  }
  return scene;
}

/// Echo from continuous positions (no grid snapping).
inline Eigen::VectorXcd synthesize_echo(const SteeringModel& model, const Scene& scene) {
  Eigen::VectorXcd g = Eigen::VectorXcd::Zero(model.n());
  for (const auto& sc : scene)
    for (int n = 0; n < model.n(); ++n) g[n] += sc.gamma * model.steering(model.b[n], sc.s);
  return g;
}

/// Index of the nearest grid point; exact midpoints go to the lower index.
inline int nearest_bin(const SteeringModel& model, double s) {
  const double x = (s - model.s[0]) / model.config.grid_spacing();
  const int idx = static_cast<int>(std::ceil(x - 0.5));
  return std::clamp(idx, 0, model.m() - 1);
}

inline Eigen::VectorXcd grid_truth(const SteeringModel& model, const Scene& scene) {
  Eigen::VectorXcd gamma = Eigen::VectorXcd::Zero(model.m());
  for (const auto& sc : scene) gamma[nearest_bin(model, sc.s)] += sc.gamma;
  return gamma;
}

/// Circular complex Gaussian noise with variance (|g|^2/N) 10^(-snr/10) per
/// complex sample. Infinite SNR returns g unchanged.
template <class Rng>
Eigen::VectorXcd add_noise(Rng& rng, const Eigen::VectorXcd& g, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return g;
  const double power = g.squaredNorm() / static_cast<double>(g.size());
  if (!(power > 0))
    throw Error(ErrorKind::degenerate_signal, "cannot scale noise to an all-zero echo");
  const double variance = power * std::pow(10.0, -snr_db / 10.0);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5 * variance));
  Eigen::VectorXcd out = g;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double re = normal(rng);
    const double im = normal(rng);
    out[i] += std::complex<double>(re, im);
  }
  return out;
}

namespace stream {
inline constexpr std::uint64_t dataset = 1;
inline constexpr std::uint64_t sweep = 2;
inline constexpr std::uint64_t timing = 3;
inline constexpr std::uint64_t shuffle = 4;
inline constexpr std::uint64_t scene = 5;
inline constexpr std::uint64_t probe = 6;
}  // namespace stream

/// Sample `index` of the dataset described by `spec`; pure in its arguments.
inline TrainingSample make_sample(const SteeringModel& model, const DatasetSpec& spec,
                                  std::uint64_t index) {
  auto rng = substream(spec.seed, stream::dataset, index);
  std::uniform_int_distribution<std::size_t> pick(0, spec.snr_db.size() - 1);
  const double snr = spec.snr_db[pick(rng)];
  Scene scene;
  Eigen::VectorXcd echo;
  // Empty scenes give an all-zero echo that cannot carry a finite SNR; redraw.
  do {
    scene = sample_scene(rng, model.config.extent_m, spec.support);
    echo = synthesize_echo(model, scene);
  } while (!(echo.squaredNorm() > 0) && std::isfinite(snr));
  return {real_embed(add_noise(rng, echo, snr)), real_embed(grid_truth(model, scene)), snr,
          std::move(scene)};
}

/// Materialized dataset, one sample per column.
struct Dataset {
  Eigen::MatrixXd echoes;  // 2N x P
  Eigen::MatrixXd truths;  // 2M x P
  Eigen::VectorXd snr_db;  // P
  std::vector<Scene> scenes;

  std::int64_t size() const { return echoes.cols(); }
};

inline Dataset make_dataset(const SteeringModel& model, const DatasetSpec& spec, int threads = 1,
                            bool keep_scenes = false) {
  spec.validate();
  const auto p = spec.count;
  Dataset ds{Eigen::MatrixXd(2 * model.n(), p), Eigen::MatrixXd(2 * model.m(), p),
             Eigen::VectorXd(p), {}};
  if (keep_scenes) ds.scenes.resize(p);
  parallel_for(static_cast<std::size_t>(p), threads, [&](std::size_t i) {
    auto sample = make_sample(model, spec, i);
    ds.echoes.col(i) = sample.g_embed;
    ds.truths.col(i) = sample.gamma_embed;
    ds.snr_db[i] = sample.snr_db;
    if (keep_scenes) ds.scenes[i] = std::move(sample.scene);
  });
  return ds;
}

}  // namespace tomofocus
