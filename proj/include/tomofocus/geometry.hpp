// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "tomofocus/error.hpp"

namespace tomofocus {

inline constexpr double speed_of_light = 299792458.0;

enum class ApertureKind { uniform, jittered };

/// Cross-track imaging geometry. Lengths are meters, frequencies Hz.
struct GeometryConfig {
  double carrier_hz = 10e9;
  double bandwidth_hz = 200e6;
  double range_m = 800e3;
  double aperture_m = 300.0;
  int acquisitions = 31;
  double extent_m = 300.0;
  int grid_points = 78;
  ApertureKind aperture_kind = ApertureKind::uniform;
  std::uint64_t jitter_seed = 7;
  double jitter_fraction = 0.9;

  double wavelength() const { return speed_of_light / carrier_hz; }
  double wavenumber() const { return 2.0 * std::numbers::pi * carrier_hz / speed_of_light; }
  double grid_spacing() const { return extent_m / grid_points; }

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::invalid_config, what); };
    if (!(carrier_hz > 0)) fail("carrier frequency must be positive");
    if (!(range_m > 0)) fail("range must be positive");
    if (!(aperture_m > 0)) fail("aperture length must be positive");
    if (!(extent_m > 0)) fail("cross-track extent must be positive");
    if (!(bandwidth_hz >= 0)) fail("bandwidth must be non-negative");
    if (acquisitions < 2) fail("need at least 2 cross-track acquisitions");
    if (grid_points < 2) fail("need at least 2 cross-track grid points");
    if (aperture_kind == ApertureKind::jittered && !(jitter_fraction >= 0 && jitter_fraction < 1))
      fail("jitter fraction must lie in [0, 1)");
  }

  /// Stable 64-bit FNV-1a hash of the canonical textual form.
  std::uint64_t fingerprint() const {
    std::ostringstream os;
    os.precision(17);
    os << carrier_hz << '|' << bandwidth_hz << '|' << range_m << '|' << aperture_m << '|'
       << acquisitions << '|' << extent_m << '|' << grid_points << '|'
       << (aperture_kind == ApertureKind::uniform ? "uniform" : "jittered");
    if (aperture_kind == ApertureKind::jittered) os << '|' << jitter_seed << '|' << jitter_fraction;
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : os.str()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  /// Spaceborne repeat-pass setting used by the simulation studies.
  static GeometryConfig spaceborne() { return {}; }

  /// Short-range anechoic-chamber setting (35 GHz, 3.3 m).
  static GeometryConfig chamber() {
    GeometryConfig c;
    c.carrier_hz = 35e9;
    c.bandwidth_hz = 6e9;
    c.range_m = 3.3;
    c.aperture_m = 0.06;
    c.acquisitions = 31;
    c.extent_m = 0.60;
    c.grid_points = 35;
    return c;
  }
};

/// Aperture positions b_n, centered on zero and spanning exactly `aperture_m`.
/// The jittered kind perturbs interior points by a seeded uniform offset of at
/// most jitter_fraction/2 of the nominal spacing; the endpoints stay fixed.
inline Eigen::VectorXd build_aperture(const GeometryConfig& cfg) {
  cfg.validate();
  const int n = cfg.acquisitions;
  const double spacing = cfg.aperture_m / (n - 1);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b[i] = -0.5 * cfg.aperture_m + i * spacing;
  b[n - 1] = 0.5 * cfg.aperture_m;
  if (cfg.aperture_kind == ApertureKind::jittered) {
    std::mt19937_64 rng(cfg.jitter_seed);
    const double half = 0.5 * cfg.jitter_fraction * spacing;
    std::uniform_real_distribution<double> offset(-half, half);
    for (int i = 1; i < n - 1; ++i) b[i] += offset(rng);
  }
  return b;
}

/// Left-closed uniform grid over [-extent/2, extent/2).
inline Eigen::VectorXd build_grid(const GeometryConfig& cfg) {
  cfg.validate();
  const int m = cfg.grid_points;
  Eigen::VectorXd s(m);
  for (int i = 0; i < m; ++i) s[i] = -0.5 * cfg.extent_m + i * cfg.grid_spacing();
  return s;
}

/// Stacks Re(z) above Im(z).
inline Eigen::VectorXd real_embed(const Eigen::VectorXcd& z) {
  const auto k = z.size();
  Eigen::VectorXd out(2 * k);
  out.head(k) = z.real();
  out.tail(k) = z.imag();
  return out;
}

inline Eigen::VectorXcd real_extract(const Eigen::VectorXd& x) {
  if (x.size() % 2 != 0)
    throw Error(ErrorKind::invalid_shape, "cannot extract complex vector from odd length " +
                                              std::to_string(x.size()));
  const auto k = x.size() / 2;
  Eigen::VectorXcd z(k);
  z.real() = x.head(k);
  z.imag() = x.tail(k);
  return z;
}

/// Real 2N x 2M embedding of a complex N x M operator:
/// [Re -Im; Im Re].
inline Eigen::MatrixXd real_embed(const Eigen::MatrixXcd& h) {
  const auto n = h.rows();
  const auto m = h.cols();
  Eigen::MatrixXd out(2 * n, 2 * m);
  out.topLeftCorner(n, m) = h.real();
  out.topRightCorner(n, m) = -h.imag();
  out.bottomLeftCorner(n, m) = h.imag();
  out.bottomRightCorner(n, m) = h.real();
  return out;
}

struct SteeringModel {
  GeometryConfig config;
  Eigen::VectorXd b;  // aperture positions (m)
  Eigen::VectorXd s;  // grid positions (m)
  Eigen::MatrixXcd H;
  Eigen::MatrixXd H_embed;

  int n() const { return static_cast<int>(b.size()); }
  int m() const { return static_cast<int>(s.size()); }

  /// Phase factor 2 k_c / r of the cross-track exponent.
  double phase_rate() const { return 2.0 * config.wavenumber() / config.range_m; }

  std::complex<double> steering(double b_n, double s_m) const {
    return std::polar(1.0, phase_rate() * b_n * s_m);
  }
};

inline SteeringModel build_steering(const GeometryConfig& cfg, const Eigen::VectorXd& b,
                                    const Eigen::VectorXd& s) {
  SteeringModel model{cfg, b, s, Eigen::MatrixXcd(b.size(), s.size()), {}};
  for (Eigen::Index i = 0; i < b.size(); ++i)
    for (Eigen::Index j = 0; j < s.size(); ++j) model.H(i, j) = model.steering(b[i], s[j]);
  model.H_embed = real_embed(model.H);
  return model;
}

inline SteeringModel build_steering(const GeometryConfig& cfg) {
  return build_steering(cfg, build_aperture(cfg), build_grid(cfg));
}

/// Nonparametric cross-track resolution lambda r / (2 delta_b).
inline double resolution(const GeometryConfig& cfg) {
  if (!(cfg.aperture_m > 0)) throw Error(ErrorKind::invalid_config, "aperture length is zero");
  if (!(cfg.carrier_hz > 0) || !(cfg.range_m > 0))
    throw Error(ErrorKind::invalid_config, "carrier frequency and range must be positive");
  return cfg.wavelength() * cfg.range_m / (2.0 * cfg.aperture_m);
}

/// Margin applied to the "much smaller than" extent condition.
inline constexpr double extent_margin = 0.25;

struct ExtentReport {
  double range_resolution;
  double bound;
  double extent;
  double ratio;
  bool pass;
};

/// Checks that the illuminated extent is well inside rho_r r / delta_b.
inline ExtentReport extent_check(const GeometryConfig& cfg) {
  if (!(cfg.bandwidth_hz > 0)) throw Error(ErrorKind::invalid_config, "bandwidth is zero");
  if (!(cfg.aperture_m > 0)) throw Error(ErrorKind::invalid_config, "aperture length is zero");
  ExtentReport r{};
  r.range_resolution = speed_of_light / (2.0 * cfg.bandwidth_hz);
  r.bound = r.range_resolution * cfg.range_m / cfg.aperture_m;
  r.extent = cfg.extent_m;
  r.ratio = r.extent / r.bound;
  r.pass = r.extent <= extent_margin * r.bound;
  return r;
}

/// Resolution divided by grid spacing.
inline double super_resolution_factor(const GeometryConfig& cfg) {
  return resolution(cfg) / cfg.grid_spacing();
}

}  // namespace tomofocus
