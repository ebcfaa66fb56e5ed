// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tomofocus/baselines.hpp"
#include "tomofocus/error.hpp"
#include "tomofocus/geometry.hpp"
#include "tomofocus/lvamp.hpp"
#include "tomofocus/parallel.hpp"
#include "tomofocus/synth.hpp"

namespace tomofocus {

/// Per-bin mean squared complex error.
inline double mse(const Eigen::VectorXcd& estimate, const Eigen::VectorXcd& truth) {
  if (estimate.size() != truth.size() || truth.size() == 0)
    throw Error(ErrorKind::invalid_input, "mse needs two vectors of equal, nonzero length");
  return (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
}

/// A reconstruction routine under a stable id. The test SNR is passed so
/// solvers that need a noise level can derive it.
struct Solver {
  std::string id;
  std::optional<double> train_snr_db;  // set for trained networks
  std::function<Eigen::VectorXcd(const Eigen::VectorXcd& g, double snr_db)> run;
};

/// Back projection scaled by 1/N so peak amplitudes are comparable with the
/// other estimators.
inline Solver bp_solver(const SteeringModel& model, std::string id = "bp") {
  const double scale = 1.0 / model.n();
  return {std::move(id), std::nullopt,
          [&model, scale](const Eigen::VectorXcd& g, double) -> Eigen::VectorXcd { return scale * bp(model, g); }};
}

inline Solver omp_solver(const SteeringModel& model, OmpConfig cfg = {}, std::string id = "omp") {
  return {std::move(id), std::nullopt, [&model, cfg](const Eigen::VectorXcd& g, double snr) {
            OmpConfig c = cfg;
            if (std::isfinite(snr)) c.noise_var = noise_var_from_snr(g, snr);
            return omp(model, g, c).gamma;
          }};
}

inline Solver sbl_solver(const SteeringModel& model, SblConfig cfg = {}, std::string id = "sbl") {
  return {std::move(id), std::nullopt, [&model, cfg](const Eigen::VectorXcd& g, double snr) {
            SblConfig c = cfg;
            if (std::isfinite(snr)) c.noise_var = noise_var_from_snr(g, snr);
            return sbl(model, g, c).gamma;
          }};
}

inline Solver lmmse_vamp_solver(const SteeringModel& model, LmmseVampConfig cfg = {},
                                std::string id = "lmmse_vamp") {
  return {std::move(id), std::nullopt, [&model, cfg](const Eigen::VectorXcd& g, double snr) {
            const double snr_used = std::isfinite(snr) ? snr : 30.0;
            return lmmse_vamp(model, g, noise_var_from_snr(g, snr_used), cfg).gamma;
          }};
}

/// The network is captured by value so the solver owns its parameters.
inline Solver network_solver(NetworkParams net, std::string id, std::optional<double> train_snr_db) {
  return {std::move(id), train_snr_db,
          [net = std::move(net)](const Eigen::VectorXcd& g, double) { return reconstruct(net, g); }};
}

struct SweepRow {
  std::string algorithm;
  std::optional<double> train_snr_db;
  double test_snr_db;
  int trials;
  double mse;
  double mse_std;
  int failures;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  const SweepRow& find(const std::string& algorithm, double test_snr_db) const {
    for (const auto& r : rows)
      if (r.algorithm == algorithm && r.test_snr_db == test_snr_db) return r;
    throw Error(ErrorKind::invalid_input, "no sweep row for " + algorithm);
  }
};

/// One evaluation input: noisy echo plus its gridded truth.
struct Trial {
  Eigen::VectorXcd echo;
  Eigen::VectorXcd truth;
  double snr_db;
};

inline Trial draw_trial(const SteeringModel& model, std::uint64_t seed, std::uint64_t stream_id,
                        std::uint64_t index, double snr_db,
                        const std::vector<int>& support = {1, 2, 3, 4}) {
  auto rng = substream(seed, stream_id, index);
  Scene scene;
  Eigen::VectorXcd echo;
  do {
    scene = sample_scene(rng, model.config.extent_m, support);
    echo = synthesize_echo(model, scene);
  } while (!(echo.squaredNorm() > 0));
  return {add_noise(rng, echo, snr_db), grid_truth(model, scene), snr_db};
}

/// Monte Carlo MSE for every solver at every test SNR on shared inputs.
inline SweepResult snr_sweep(const SteeringModel& model, const std::vector<Solver>& solvers,
                             const std::vector<double>& test_snrs, int trials, std::uint64_t seed,
                             int threads = 1) {
  if (trials < 1) throw Error(ErrorKind::invalid_input, "sweep needs at least one trial");
  SweepResult result;
  for (std::size_t si = 0; si < test_snrs.size(); ++si) {
    const double snr = test_snrs[si];
    Eigen::MatrixXd errors(trials, static_cast<Eigen::Index>(solvers.size()));
    parallel_for(static_cast<std::size_t>(trials), threads, [&](std::size_t i) {
      const auto trial = draw_trial(model, seed, stream::sweep, (std::uint64_t(si) << 32) | i, snr);
      for (std::size_t a = 0; a < solvers.size(); ++a) {
        double e = std::numeric_limits<double>::quiet_NaN();
        try {
          e = mse(solvers[a].run(trial.echo, snr), trial.truth);
        } catch (const Error&) {
        }
        errors(Eigen::Index(i), Eigen::Index(a)) = e;
      }
    });
    for (std::size_t a = 0; a < solvers.size(); ++a) {
      double sum = 0, sq = 0;
      int ok = 0;
      for (int i = 0; i < trials; ++i) {
        const double e = errors(i, Eigen::Index(a));
        if (!std::isfinite(e)) continue;
        sum += e;
        sq += e * e;
        ++ok;
      }
      const double mean = ok ? sum / ok : std::numeric_limits<double>::quiet_NaN();
      const double var = ok > 1 ? std::max(sq / ok - mean * mean, 0.0) * ok / (ok - 1) : 0.0;
      result.rows.push_back({solvers[a].id, solvers[a].train_snr_db, snr, trials, mean, std::sqrt(var),
                             trials - ok});
    }
  }
  return result;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "algorithm,train_snr_db,test_snr_db,trials,mse,mse_std,failures\n";
  os.precision(10);
  for (const auto& row : r.rows) {
    os << row.algorithm << ',';
    if (row.train_snr_db) os << *row.train_snr_db;
    else os << "n/a";
    os << ',' << row.test_snr_db << ',' << row.trials << ',' << row.mse << ',' << row.mse_std << ','
       << row.failures << '\n';
  }
}

/// Wide table for plotting: one row per SNR, one MSE column per algorithm.
inline void write_series_csv(std::ostream& os, const SweepResult& r) {
  std::vector<std::string> algorithms;
  std::vector<double> snrs;
  for (const auto& row : r.rows) {
    if (std::find(algorithms.begin(), algorithms.end(), row.algorithm) == algorithms.end())
      algorithms.push_back(row.algorithm);
    if (std::find(snrs.begin(), snrs.end(), row.test_snr_db) == snrs.end()) snrs.push_back(row.test_snr_db);
  }
  os << "snr_db";
  for (const auto& a : algorithms) os << ',' << a;
  os << '\n';
  os.precision(10);
  for (double s : snrs) {
    os << s;
    for (const auto& a : algorithms) os << ',' << r.find(a, s).mse;
    os << '\n';
  }
}

struct TimingRow {
  std::string algorithm;
  int trials;
  double total_seconds;
  double seconds_per_trial;
};

struct TimingResult {
  std::vector<TimingRow> rows;

  const TimingRow& find(const std::string& algorithm) const {
    for (const auto& r : rows)
      if (r.algorithm == algorithm) return r;
    throw Error(ErrorKind::invalid_input, "no timing row for " + algorithm);
  }
};

/// Sequential single-input wall-clock per solver. Inputs cycle through
/// `snrs` and are generated before any clock starts; each solver gets one
/// untimed warm-up call.
inline TimingResult timing_bench(const SteeringModel& model, const std::vector<Solver>& solvers,
                                 int trials, std::uint64_t seed,
                                 const std::vector<double>& snrs = {0, 5, 10, 15}) {
  if (trials < 1) throw Error(ErrorKind::invalid_input, "timing needs at least one trial");
  std::vector<Trial> inputs;
  inputs.reserve(trials);
  for (int i = 0; i < trials; ++i)
    inputs.push_back(draw_trial(model, seed, stream::timing, std::uint64_t(i), snrs[i % snrs.size()]));

  TimingResult result;
  for (const auto& s : solvers) {
    volatile double sink = s.run(inputs[0].echo, inputs[0].snr_db).squaredNorm();
    const auto start = std::chrono::steady_clock::now();
    for (const auto& in : inputs) sink = sink + s.run(in.echo, in.snr_db).squaredNorm();
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.rows.push_back({s.id, trials, total, total / trials});
  }
  return result;
}

inline void write_timing_csv(std::ostream& os, const TimingResult& r) {
  os << "algorithm,trials,total_seconds,seconds_per_trial\n";
  os.precision(10);
  for (const auto& row : r.rows)
    os << row.algorithm << ',' << row.trials << ',' << row.total_seconds << ',' << row.seconds_per_trial << '\n';
}

}  // namespace tomofocus
