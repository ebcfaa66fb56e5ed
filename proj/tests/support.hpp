// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "tomofocus/geometry.hpp"

namespace tomofocus::testing {

/// Small geometry with the same physics as the spaceborne preset.
inline GeometryConfig tiny_geometry(int n = 4, int m = 6) {
  auto cfg = GeometryConfig::spaceborne();
  cfg.acquisitions = n;
  cfg.grid_points = m;
  return cfg;
}

inline Eigen::VectorXcd random_complex(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> d;
  Eigen::VectorXcd z(n);
  for (auto& x : z) x = {d(rng), d(rng)};
  return z;
}

inline Eigen::MatrixXd random_real(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::MatrixXd x(r, c);
  for (auto& v : x.reshaped()) v = d(rng);
  return x;
}

}  // namespace tomofocus::testing
