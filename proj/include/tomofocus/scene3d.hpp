// SPDX-License-Identifier: Apache-2.0
//
// End-to-end 3D demonstration: a point-scatterer "building", layover into
// range-azimuth pixels, per-pixel cross-track focusing, and projections.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tomofocus/error.hpp"
#include "tomofocus/eval.hpp"
#include "tomofocus/geometry.hpp"
#include "tomofocus/parallel.hpp"
#include "tomofocus/synth.hpp"

namespace tomofocus {

struct SceneConfig {
  double building_height = 84.0;
  double footprint_x = 100.0;
  double footprint_y = 60.0;
  double surface_spacing = 4.0;
  double elevation_deg = 45.0;  // line of sight above horizontal
  double pixel_dx = 2.0;
  double pixel_dr = 0.0;  // 0 selects the range resolution of the geometry
  double snr_db = 15.0;
  double detection_ratio = 0.1;  // detections are voxels above this fraction of the max
  std::uint64_t seed = 1;

  void validate() const {
    if (!(building_height > 0 && footprint_x > 0 && footprint_y > 0 && surface_spacing > 0 &&
          pixel_dx > 0 && pixel_dr >= 0))
      throw Error(ErrorKind::invalid_config, "scene dimensions must be positive");
    if (!(elevation_deg > 0 && elevation_deg < 90))
      throw Error(ErrorKind::invalid_config, "elevation angle must lie in (0, 90) degrees");
  }

  double elevation_rad() const { return elevation_deg * std::numbers::pi / 180.0; }

  double range_bin(const GeometryConfig& geo) const {
    return pixel_dr > 0 ? pixel_dr : speed_of_light / (2.0 * geo.bandwidth_hz);
  }
};

enum class Facet { ground, wall, roof };

struct WorldPoint {
  double x, y, z;
  std::complex<double> gamma;
  Facet facet;
};

/// Ground strip in front of the building (the part that lays over onto the
/// wall), the radar-facing wall, and the roof. The radar looks from -y.
inline std::vector<WorldPoint> build_building(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double d = cfg.surface_spacing;
  const double front = -0.5 * cfg.footprint_y;
  const double back = 0.5 * cfg.footprint_y;
  const double ground_depth = cfg.building_height / std::tan(cfg.elevation_rad());
  auto steps = [d](double a, double b) { return static_cast<int>(std::floor((b - a) / d + 1e-9)); };

  std::vector<WorldPoint> pts;
  const int nx = steps(-0.5 * cfg.footprint_x, 0.5 * cfg.footprint_x);
  for (int ix = 0; ix <= nx; ++ix) {
    const double x = -0.5 * cfg.footprint_x + ix * d;
    auto add = [&](double y, double z, Facet f) { pts.push_back({x, y, z, std::polar(1.0, phase(rng)), f}); };
    const int ng = steps(front - ground_depth, front);
    for (int i = ng; i >= 1; --i) add(front - i * d, 0.0, Facet::ground);
    const int nz = steps(0.0, cfg.building_height);
    for (int i = 0; i <= nz; ++i) add(front, i * d, Facet::wall);
    const int ny = steps(front, back);
    for (int i = 1; i <= ny; ++i) add(front + i * d, cfg.building_height, Facet::roof);
  }
  return pts;
}

struct RadarPoint {
  double x, r, s;
};

/// Rotation about the along-track axis by the elevation angle.
inline RadarPoint world_to_radar(double x, double y, double z, double elevation_deg) {
  const double th = elevation_deg * std::numbers::pi / 180.0;
  return {x, y * std::cos(th) - z * std::sin(th), y * std::sin(th) + z * std::cos(th)};
}

inline Eigen::Vector3d radar_to_world(const RadarPoint& p, double elevation_deg) {
  const double th = elevation_deg * std::numbers::pi / 180.0;
  return {p.x, p.r * std::cos(th) + p.s * std::sin(th), -p.r * std::sin(th) + p.s * std::cos(th)};
}

struct PixelGrid {
  double x0 = 0, r0 = 0;  // lower edges
  double dx = 1, dr = 1;
  int nx = 0, nr = 0;

  double x_center(int ix) const { return x0 + (ix + 0.5) * dx; }
  double r_center(int ir) const { return r0 + (ir + 0.5) * dr; }
};

struct PixelStack {
  int ix = 0, ir = 0;
  Scene scatterers;  // continuous cross-track positions
  Eigen::VectorXcd echo;
  Eigen::VectorXcd gamma_hat;
};

struct Raster {
  PixelGrid grid;
  std::vector<PixelStack> stacks;  // non-empty pixels, ordered by (ix, ir)
};

/// Bins points into range-azimuth pixels and synthesizes each pixel's noisy
/// cross-track echo. Scatterers sharing a pixel are the layover.
inline Raster rasterize(const std::vector<WorldPoint>& points, const SceneConfig& cfg,
                        const SteeringModel& model) {
  cfg.validate();
  Raster out;
  if (points.empty()) return out;
  std::vector<RadarPoint> rp;
  rp.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const auto q = world_to_radar(p.x, p.y, p.z, cfg.elevation_deg);
    if (std::abs(q.s) > 0.5 * model.config.extent_m)
      throw Error(ErrorKind::extent_violation,
                  "point " + std::to_string(i) + " at (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                      ", " + std::to_string(p.z) + ") falls outside the cross-track extent");
    rp.push_back(q);
  }
  auto& g = out.grid;
  g.dx = cfg.pixel_dx;
  g.dr = cfg.range_bin(model.config);
  double xmin = rp[0].x, xmax = rp[0].x, rmin = rp[0].r, rmax = rp[0].r;
  for (const auto& q : rp) {
    xmin = std::min(xmin, q.x), xmax = std::max(xmax, q.x);
    rmin = std::min(rmin, q.r), rmax = std::max(rmax, q.r);
  }
  g.x0 = xmin - 0.5 * g.dx;
  g.r0 = rmin - 0.5 * g.dr;
  g.nx = static_cast<int>(std::floor((xmax - g.x0) / g.dx)) + 1;
  g.nr = static_cast<int>(std::floor((rmax - g.r0) / g.dr)) + 1;

  std::map<std::pair<int, int>, Scene> bins;
  for (std::size_t i = 0; i < rp.size(); ++i) {
    const int ix = std::clamp(static_cast<int>(std::floor((rp[i].x - g.x0) / g.dx)), 0, g.nx - 1);
    const int ir = std::clamp(static_cast<int>(std::floor((rp[i].r - g.r0) / g.dr)), 0, g.nr - 1);
    bins[{ix, ir}].push_back({rp[i].s, points[i].gamma});
  }
  for (auto& [key, scene] : bins) {
    PixelStack st;
    st.ix = key.first;
    st.ir = key.second;
    st.scatterers = std::move(scene);
    auto rng = substream(cfg.seed, stream::scene, std::uint64_t(st.ix) * std::uint64_t(g.nr) + std::uint64_t(st.ir));
    const auto clean = synthesize_echo(model, st.scatterers);
    st.echo = clean.squaredNorm() > 0 ? add_noise(rng, clean, cfg.snr_db) : clean;
    out.stacks.push_back(std::move(st));
  }
  return out;
}

struct Volume {
  PixelGrid grid;
  Eigen::VectorXd s;  // cross-track grid
  double elevation_deg = 45.0;
  std::vector<double> magnitude;  // (ix, ir, m) with m fastest
  double focus_seconds = 0;
  std::vector<std::string> failures;

  int m() const { return static_cast<int>(s.size()); }
  double& at(int ix, int ir, int im) { return magnitude[(std::size_t(ix) * grid.nr + ir) * m() + im]; }
  double at(int ix, int ir, int im) const { return magnitude[(std::size_t(ix) * grid.nr + ir) * m() + im]; }
  bool empty() const {
    return magnitude.empty() || *std::max_element(magnitude.begin(), magnitude.end()) <= 0;
  }
};

/// Focuses every pixel independently with `solver` and assembles the volume.
/// Pixel results are keyed by index, so worker scheduling does not matter.
inline Volume focus_stack(Raster& raster, const SteeringModel& model, const Solver& solver, double snr_db,
                          int threads = 1) {
  Volume vol;
  vol.grid = raster.grid;
  vol.s = model.s;
  vol.magnitude.assign(std::size_t(vol.grid.nx) * vol.grid.nr * model.m(), 0.0);
  std::vector<std::string> errors(raster.stacks.size());
  const auto start = std::chrono::steady_clock::now();
  parallel_for(raster.stacks.size(), threads, [&](std::size_t i) {
    auto& st = raster.stacks[i];
    try {
      st.gamma_hat = solver.run(st.echo, snr_db);
    } catch (const Error& e) {
      st.gamma_hat = Eigen::VectorXcd::Zero(model.m());
      errors[i] = "pixel (" + std::to_string(st.ix) + ", " + std::to_string(st.ir) + "): " + e.what();
    }
  });
  vol.focus_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& st : raster.stacks)
    for (int im = 0; im < model.m(); ++im) vol.at(st.ix, st.ir, im) = std::abs(st.gamma_hat[im]);
  for (auto& e : errors)
    if (!e.empty()) vol.failures.push_back(std::move(e));
  return vol;
}

struct CartesianPoint {
  double x, y, z, magnitude;
};

/// Voxels at or above `ratio` times the volume maximum, in world coordinates.
inline std::vector<CartesianPoint> detections(const Volume& vol, double ratio) {
  std::vector<CartesianPoint> pts;
  if (vol.empty()) return pts;
  const double thr = ratio * *std::max_element(vol.magnitude.begin(), vol.magnitude.end());
  for (int ix = 0; ix < vol.grid.nx; ++ix)
    for (int ir = 0; ir < vol.grid.nr; ++ir)
      for (int im = 0; im < vol.m(); ++im) {
        const double mag = vol.at(ix, ir, im);
        if (mag <= 0 || mag < thr) continue;
        const auto w = radar_to_world({vol.grid.x_center(ix), vol.grid.r_center(ir), vol.s[im]}, vol.elevation_deg);
        pts.push_back({w.x(), w.y(), w.z(), mag});
      }
  return pts;
}

/// Per-(x, s) maximum over range.
inline Eigen::MatrixXd project_max_xs(const Volume& vol) {
  Eigen::MatrixXd img = Eigen::MatrixXd::Zero(vol.grid.nx, vol.m());
  for (int ix = 0; ix < vol.grid.nx; ++ix)
    for (int ir = 0; ir < vol.grid.nr; ++ir)
      for (int im = 0; im < vol.m(); ++im) img(ix, im) = std::max(img(ix, im), vol.at(ix, ir, im));
  return img;
}

struct Histogram1D {
  double origin = 0;  // center of bin 0
  double width = 1;
  Eigen::VectorXd weights;

  double center(Eigen::Index i) const { return origin + double(i) * width; }
};

struct Histogram2D {
  double x0 = 0, y0 = 0;  // centers of bin (0, 0)
  double dx = 1, dy = 1;
  Eigen::MatrixXd weights;  // x rows, y columns
};

/// Magnitude-weighted detections accumulated onto x-y bins.
inline Histogram2D project_hotmap_xy(const Volume& vol, double ratio) {
  Histogram2D h;
  const auto pts = detections(vol, ratio);
  if (pts.empty()) return h;
  const double th = vol.elevation_deg * std::numbers::pi / 180.0;
  h.dx = vol.grid.dx;
  h.dy = (vol.s[1] - vol.s[0]) * std::sin(th);
  double xmin = pts[0].x, xmax = xmin, ymin = pts[0].y, ymax = ymin;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.x), xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y), ymax = std::max(ymax, p.y);
  }
  h.x0 = std::round(xmin / h.dx) * h.dx;
  h.y0 = std::round(ymin / h.dy) * h.dy;
  const auto nx = static_cast<Eigen::Index>(std::round((xmax - h.x0) / h.dx)) + 1;
  const auto ny = static_cast<Eigen::Index>(std::round((ymax - h.y0) / h.dy)) + 1;
  h.weights = Eigen::MatrixXd::Zero(nx, ny);
  for (const auto& p : pts) {
    const auto i = std::clamp<Eigen::Index>(Eigen::Index(std::round((p.x - h.x0) / h.dx)), 0, nx - 1);
    const auto j = std::clamp<Eigen::Index>(Eigen::Index(std::round((p.y - h.y0) / h.dy)), 0, ny - 1);
    h.weights(i, j) += p.magnitude;
  }
  return h;
}

/// Normalized magnitude-weighted histogram of detected heights. Bins are
/// centered on multiples of (grid spacing) cos(elevation).
inline Histogram1D project_hist_z(const Volume& vol, double ratio) {
  Histogram1D h;
  const auto pts = detections(vol, ratio);
  if (pts.empty()) return h;
  const double th = vol.elevation_deg * std::numbers::pi / 180.0;
  h.width = (vol.s[1] - vol.s[0]) * std::cos(th);
  double lo = pts[0].z, hi = lo;
  for (const auto& p : pts) lo = std::min(lo, p.z), hi = std::max(hi, p.z);
  const double first = std::round(lo / h.width);
  h.origin = first * h.width;
  const auto n = static_cast<Eigen::Index>(std::round(hi / h.width) - first) + 1;
  h.weights = Eigen::VectorXd::Zero(n);
  double total = 0;
  for (const auto& p : pts) {
    const auto i = std::clamp<Eigen::Index>(Eigen::Index(std::round(p.z / h.width) - first), 0, n - 1);
    h.weights[i] += p.magnitude;
    total += p.magnitude;
  }
  h.weights /= total;
  return h;
}

/// Indices of the `count` highest local maxima, highest first.
inline std::vector<Eigen::Index> top_peaks(const Eigen::VectorXd& w, int count) {
  std::vector<Eigen::Index> peaks;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const bool left = i == 0 || w[i] >= w[i - 1];
    const bool right = i + 1 == w.size() || w[i] > w[i + 1];
    if (w[i] > 0 && left && right) peaks.push_back(i);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](auto a, auto b) { return w[a] > w[b]; });
  if (peaks.size() > std::size_t(count)) peaks.resize(count);
  return peaks;
}

/// 16-bit binary PGM scaled so the maximum maps to 65535. Rows of `img` are
/// image rows.
inline void write_pgm16(const std::string& path, const Eigen::MatrixXd& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::io_error, "cannot open '" + path + "' for writing");
  f << "P5\n" << img.cols() << ' ' << img.rows() << "\n65535\n";
  const double top = img.size() ? img.maxCoeff() : 0.0;
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const auto v = static_cast<std::uint16_t>(top > 0 ? std::lround(65535.0 * std::max(img(r, c), 0.0) / top) : 0);
      const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
      f.write(bytes, 2);
    }
}

inline void write_hist_csv(std::ostream& os, const Histogram1D& h) {
  os << "z_m,weight\n";
  os.precision(10);
  for (Eigen::Index i = 0; i < h.weights.size(); ++i) os << h.center(i) << ',' << h.weights[i] << '\n';
}

}  // namespace tomofocus
