// SPDX-License-Identifier: Apache-2.0
//
// tomofocus: command-line front end. Exit codes: 0 ok, 1 runtime failure,
// 2 configuration error, 3 incompatible checkpoint or input.
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tomofocus/baselines.hpp"
#include "tomofocus/config.hpp"
#include "tomofocus/container.hpp"
#include "tomofocus/error.hpp"
#include "tomofocus/eval.hpp"
#include "tomofocus/geometry.hpp"
#include "tomofocus/lvamp.hpp"
#include "tomofocus/parallel.hpp"
#include "tomofocus/scene3d.hpp"
#include "tomofocus/synth.hpp"
#include "tomofocus/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tomofocus;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_config:
    case ErrorKind::invalid_spec:
      return 2;
    case ErrorKind::incompatible_checkpoint:
    case ErrorKind::invalid_shape:
    case ErrorKind::invalid_batch:
      return 3;
    default:
      return 1;
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::io_error, "cannot open '" + path + "' for writing");
  return f;
}

void write_text(const std::string& path, const std::string& text) {
  auto f = open_out(path);
  f << text;
  if (!f) throw Error(ErrorKind::io_error, "write to '" + path + "' failed");
}

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::invalid_config, "'" + item + "' is not a number");
    }
  }
  if (out.empty()) throw Error(ErrorKind::invalid_config, "empty number list");
  return out;
}

// Checkpoint plus the training SNR recorded by `train`.
struct LoadedNetwork {
  NetworkParams net;
  std::optional<double> train_snr_db;
  std::string path;
};

LoadedNetwork load_network(const std::string& path, const GeometryConfig& geo) {
  LoadedNetwork out{load_checkpoint(path, geo), std::nullopt, path};
  const auto h = json::parse(TensorContainer::load(path).header);
  if (h.contains("train_snr_db")) out.train_snr_db = h.at("train_snr_db").get<double>();
  return out;
}

std::string network_id(const LoadedNetwork& n) {
  if (!n.train_snr_db) return "network:" + fs::path(n.path).stem().string();
  std::ostringstream os;
  os << "network@" << *n.train_snr_db << "dB";
  return os.str();
}

Solver make_solver(const std::string& algorithm, const SteeringModel& model,
                   const std::optional<LoadedNetwork>& network) {
  if (algorithm == "bp") return bp_solver(model);
  if (algorithm == "omp") return omp_solver(model);
  if (algorithm == "sbl") return sbl_solver(model);
  if (algorithm == "lmmse_vamp") return lmmse_vamp_solver(model);
  if (algorithm == "network") {
    if (!network) throw Error(ErrorKind::invalid_config, "algorithm 'network' needs --checkpoint");
    return network_solver(network->net, "network", network->train_snr_db);
  }
  throw Error(ErrorKind::invalid_config, "unknown algorithm '" + algorithm + "'");
}

// -- check ------------------------------------------------------------------

int cmd_check(const RunConfig& rc, const std::string& json_out) {
  const auto& g = rc.geometry;
  const auto rep = extent_check(g);
  const double rho_s = resolution(g);
  const double factor = super_resolution_factor(g);
  std::cout.precision(6);
  std::cout << "cross-track resolution rho_s  " << rho_s << " m\n"
            << "range resolution rho_r        " << rep.range_resolution << " m\n"
            << "extent bound                  " << rep.bound << " m\n"
            << "cross-track extent            " << rep.extent << " m (" << (rep.pass ? "pass" : "FAIL") << ")\n"
            << "grid spacing                  " << g.grid_spacing() << " m\n"
            << "super-resolution factor       " << factor << '\n';
  json j{{"rho_s_m", rho_s},
         {"rho_r_m", rep.range_resolution},
         {"extent_bound_m", rep.bound},
         {"extent_m", rep.extent},
         {"extent_ratio", rep.ratio},
         {"extent_pass", rep.pass},
         {"grid_spacing_m", g.grid_spacing()},
         {"super_resolution_factor", factor},
         {"geometry_fingerprint", std::to_string(g.fingerprint())}};
  if (!json_out.empty()) write_text(json_out, j.dump(2) + "\n");
  return 0;
}

// -- datagen ----------------------------------------------------------------

json dataset_header(const RunConfig& rc, const DatasetSpec& spec) {
  return {{"kind", "dataset"},
          {"geometry", to_json(rc.geometry)},
          {"geometry_fingerprint", std::to_string(rc.geometry.fingerprint())},
          {"count", spec.count},
          {"snr_db", spec.snr_db},
          {"seed", spec.seed},
          {"support", spec.support}};
}

int cmd_datagen(const RunConfig& rc, const std::string& out, int threads) {
  const auto model = build_steering(rc.geometry);
  const auto data = make_dataset(model, rc.dataset, threads);
  TensorContainer c;
  const auto header = dataset_header(rc, rc.dataset);
  c.header = header.dump();
  c.put("g_embed", Eigen::MatrixXd(data.echoes.transpose()));
  c.put("gamma_embed", Eigen::MatrixXd(data.truths.transpose()));
  c.put("snr_db", data.snr_db);
  c.save(out);
  write_text(out + ".json", header.dump(2) + "\n");
  std::cerr << "wrote " << data.size() << " samples to " << out << '\n';
  return 0;
}

Dataset load_dataset(const std::string& path, const GeometryConfig& geo) {
  const auto c = TensorContainer::load(path);
  const auto h = json::parse(c.header);
  if (h.value("kind", "") != "dataset") throw Error(ErrorKind::parse_error, "'" + path + "' is not a dataset");
  if (h.value("geometry_fingerprint", "") != std::to_string(geo.fingerprint()))
    throw Error(ErrorKind::incompatible_checkpoint, "dataset '" + path + "' was generated for a different geometry");
  return {c.matrix("g_embed").transpose(), c.matrix("gamma_embed").transpose(), c.vector("snr_db"), {}};
}

// -- train ------------------------------------------------------------------

int cmd_train(const RunConfig& rc, const std::string& data_path, const std::string& out,
              const std::string& log_path, int threads) {
  const auto model = build_steering(rc.geometry);
  auto cfg = rc.train;
  cfg.threads = threads;
  Dataset data;
  if (data_path.empty()) {
    DatasetSpec spec = rc.dataset;
    spec.count = cfg.count;
    spec.seed = cfg.seed;
    spec.snr_db = {cfg.snr_db};
    data = make_dataset(model, spec, threads);
  } else {
    data = load_dataset(data_path, rc.geometry);
  }
  TrainResult res;
  try {
    res = train_layerwise(model, cfg, data, &std::cerr);
  } catch (const TrainingAborted& e) {
    if (!log_path.empty()) {
      auto f = open_out(log_path);
      write_log_csv(f, e.log());
    }
    throw;
  }
  auto c = to_container(res.net);
  auto h = json::parse(c.header);
  h["train_snr_db"] = cfg.snr_db;
  c.header = h.dump();
  c.save(out);
  if (!log_path.empty()) {
    auto f = open_out(log_path);
    write_log_csv(f, res.log);
  }
  return 0;
}

// -- infer ------------------------------------------------------------------

int cmd_infer(const RunConfig& rc, const std::string& algorithm, const std::string& checkpoint,
              const std::string& input, const std::string& out, double snr_db, int threads) {
  const auto model = build_steering(rc.geometry);
  std::optional<LoadedNetwork> net;
  if (!checkpoint.empty()) net = load_network(checkpoint, rc.geometry);
  const auto solver = make_solver(algorithm, model, net);

  const auto in = TensorContainer::load(input);
  Eigen::MatrixXcd echoes;
  if (in.contains("echo")) {
    echoes = in.complex_matrix("echo");
  } else if (in.contains("g_embed")) {
    const Eigen::MatrixXd e = in.matrix("g_embed").transpose();
    if (e.rows() % 2) throw Error(ErrorKind::invalid_shape, "embedded echoes need an even length");
    echoes.resize(e.rows() / 2, e.cols());
    for (Eigen::Index j = 0; j < e.cols(); ++j) echoes.col(j) = real_extract(e.col(j));
  } else {
    throw Error(ErrorKind::parse_error, "input has neither 'echo' nor 'g_embed'");
  }
  if (echoes.rows() != model.n())
    throw Error(ErrorKind::invalid_shape, "input echoes have " + std::to_string(echoes.rows()) +
                                              " rows, geometry needs " + std::to_string(model.n()));

  Eigen::MatrixXcd gamma(model.m(), echoes.cols());
  parallel_for(static_cast<std::size_t>(echoes.cols()), threads, [&](std::size_t j) {
    gamma.col(Eigen::Index(j)) = solver.run(echoes.col(Eigen::Index(j)), snr_db);
  });
  TensorContainer c;
  c.header = json{{"kind", "reconstruction"}, {"algorithm", algorithm}}.dump();
  c.put("gamma", gamma);
  c.save(out);
  return 0;
}

// -- benchmarks -------------------------------------------------------------

std::vector<Solver> bench_solvers(const SteeringModel& model, const std::vector<std::string>& checkpoints,
                                  const GeometryConfig& geo, bool with_lmmse, bool with_sbl) {
  std::vector<Solver> solvers;
  for (const auto& p : checkpoints) {
    const auto n = load_network(p, geo);
    solvers.push_back(network_solver(n.net, network_id(n), n.train_snr_db));
  }
  solvers.push_back(bp_solver(model));
  solvers.push_back(omp_solver(model));
  if (with_sbl) solvers.push_back(sbl_solver(model));
  if (with_lmmse) solvers.push_back(lmmse_vamp_solver(model));
  return solvers;
}

int cmd_bench_mse(const RunConfig& rc, const std::vector<std::string>& checkpoints, const std::string& snrs,
                  int trials, bool with_lmmse, bool with_sbl, const std::string& out, const std::string& series,
                  int threads) {
  const auto model = build_steering(rc.geometry);
  const auto solvers = bench_solvers(model, checkpoints, rc.geometry, with_lmmse, with_sbl);
  const auto res = snr_sweep(model, solvers, parse_list(snrs), trials, rc.dataset.seed, threads);
  {
    auto f = open_out(out);
    write_sweep_csv(f, res);
  }
  if (!series.empty()) {
    auto f = open_out(series);
    write_series_csv(f, res);
  }
  return 0;
}

int cmd_bench_time(const RunConfig& rc, const std::vector<std::string>& checkpoints, int trials,
                   bool with_lmmse, bool with_sbl, const std::string& out) {
  const auto model = build_steering(rc.geometry);
  const auto solvers = bench_solvers(model, checkpoints, rc.geometry, with_lmmse, with_sbl);
  const auto res = timing_bench(model, solvers, trials, rc.dataset.seed);
  auto f = open_out(out);
  write_timing_csv(f, res);
  write_timing_csv(std::cout, res);
  return 0;
}

// -- scene ------------------------------------------------------------------

int cmd_scene(const RunConfig& rc, const std::string& algorithm, const std::string& checkpoint,
              const std::string& out_dir, int every, int threads) {
  if (algorithm == "network" && checkpoint.empty())
    throw Error(ErrorKind::invalid_config, "scene with algorithm 'network' needs --checkpoint");
  if (every < 1) throw Error(ErrorKind::invalid_config, "--every must be at least 1");
  const auto model = build_steering(rc.geometry);
  std::optional<LoadedNetwork> net;
  if (!checkpoint.empty()) net = load_network(checkpoint, rc.geometry);
  const auto solver = make_solver(algorithm, model, net);

  const auto points = build_building(rc.scene);
  auto raster = rasterize(points, rc.scene, model);
  if (every > 1) {
    std::vector<PixelStack> kept;
    for (std::size_t i = 0; i < raster.stacks.size(); i += std::size_t(every)) kept.push_back(raster.stacks[i]);
    raster.stacks = std::move(kept);
  }
  auto vol = focus_stack(raster, model, solver, rc.scene.snr_db, threads);
  vol.elevation_deg = rc.scene.elevation_deg;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  TensorContainer c;
  c.header = json{{"kind", "volume"},
                  {"algorithm", algorithm},
                  {"x0", vol.grid.x0},
                  {"r0", vol.grid.r0},
                  {"dx", vol.grid.dx},
                  {"dr", vol.grid.dr},
                  {"elevation_deg", vol.elevation_deg}}
                 .dump();
  c.put(TensorArray{"magnitude",
                    DType::f64,
                    {std::uint64_t(vol.grid.nx), std::uint64_t(vol.grid.nr), std::uint64_t(vol.m())},
                    vol.magnitude});
  c.put("s", model.s);
  const auto max_xs = project_max_xs(vol);
  const auto hot = project_hotmap_xy(vol, rc.scene.detection_ratio);
  const auto hist = project_hist_z(vol, rc.scene.detection_ratio);
  c.put("max_xs", max_xs);
  if (hot.weights.size()) c.put("hotmap_xy", hot.weights);
  if (hist.weights.size()) c.put("hist_z", hist.weights);
  c.save((dir / "volume.tfc").string());

  if (vol.empty()) std::cerr << "warning: focused volume is empty; projections are empty\n";
  // Images are written with s (or y) increasing upward.
  write_pgm16((dir / "max_xs.pgm").string(), max_xs.transpose().colwise().reverse());
  if (hot.weights.size()) write_pgm16((dir / "hotmap_xy.pgm").string(), hot.weights.transpose().colwise().reverse());
  {
    auto f = open_out((dir / "hist_z.csv").string());
    write_hist_csv(f, hist);
  }
  json summary{{"algorithm", algorithm},
               {"points", points.size()},
               {"pixels", raster.stacks.size()},
               {"failures", vol.failures}};
  if (hist.weights.size()) {
    json peaks = json::array();
    for (auto i : top_peaks(hist.weights, 2)) peaks.push_back({{"z_m", hist.center(i)}, {"weight", hist.weights[i]}});
    summary["hist_z_peaks"] = peaks;
  }
  write_text((dir / "summary.json").string(), summary.dump(2) + "\n");
  // Wall-clock lives in its own file so every other output is reproducible.
  write_text((dir / "timing.json").string(),
             json{{"algorithm", algorithm}, {"pixels", raster.stacks.size()}, {"focus_seconds", vol.focus_seconds}}
                     .dump(2) +
                 "\n");
  std::cout << algorithm << ": focused " << raster.stacks.size() << " pixels in " << vol.focus_seconds << " s, "
            << vol.failures.size() << " failures\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Super-resolution cross-track focusing for 3D SAR"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: TOMOFOCUS_THREADS or 1)");

  std::string config, out, json_out, data, log, algorithm, checkpoint, input, snrs = "0,5,10,15", series;
  std::vector<std::string> checkpoints;
  double snr_db = std::numeric_limits<double>::infinity();
  int trials = 1000, every = 1;
  bool with_lmmse = false, no_sbl = false;

  auto* check = app.add_subcommand("check", "report resolution and extent checks for a geometry");
  check->add_option("-c,--config", config)->required();
  check->add_option("--json", json_out, "also write the report as JSON");

  auto* datagen = app.add_subcommand("datagen", "generate a synthetic training set");
  datagen->add_option("-c,--config", config)->required();
  datagen->add_option("-o,--out", out)->required();

  auto* train = app.add_subcommand("train", "train the unfolded network layer by layer");
  train->add_option("-c,--config", config)->required();
  train->add_option("-d,--data", data, "dataset container (default: generate from config)");
  train->add_option("-o,--out", out)->required();
  train->add_option("--log", log, "training log CSV");

  auto* infer = app.add_subcommand("infer", "focus echoes stored in a container");
  infer->add_option("-c,--config", config)->required();
  infer->add_option("-a,--algorithm", algorithm)->required();
  infer->add_option("--checkpoint", checkpoint);
  infer->add_option("-i,--input", input)->required();
  infer->add_option("-o,--out", out)->required();
  infer->add_option("--snr-db", snr_db, "test SNR handed to OMP and SBL (default: unknown)");

  auto* bench_mse = app.add_subcommand("bench-mse", "Monte Carlo MSE versus test SNR");
  bench_mse->add_option("-c,--config", config)->required();
  bench_mse->add_option("--checkpoint", checkpoints, "trained network (repeatable)");
  bench_mse->add_option("--snrs", snrs, "comma-separated test SNRs in dB");
  bench_mse->add_option("--trials", trials);
  bench_mse->add_flag("--with-lmmse", with_lmmse, "include the untrained LMMSE-VAMP reference");
  bench_mse->add_flag("--no-sbl", no_sbl, "skip SBL");
  bench_mse->add_option("-o,--out", out)->required();
  bench_mse->add_option("--series", series, "wide per-SNR table for plotting");

  auto* bench_time = app.add_subcommand("bench-time", "single-threaded per-trial timing");
  bench_time->add_option("-c,--config", config)->required();
  bench_time->add_option("--checkpoint", checkpoints, "trained network (repeatable)");
  bench_time->add_option("--trials", trials);
  bench_time->add_flag("--with-lmmse", with_lmmse, "include the untrained LMMSE-VAMP reference");
  bench_time->add_flag("--no-sbl", no_sbl, "skip SBL");
  bench_time->add_option("-o,--out", out)->required();

  auto* scene = app.add_subcommand("scene", "focus the synthetic building scene");
  scene->add_option("-c,--config", config)->required();
  scene->add_option("-a,--algorithm", algorithm)->required();
  scene->add_option("--checkpoint", checkpoint);
  scene->add_option("-o,--out-dir", out)->required();
  scene->add_option("--every", every, "focus every k-th non-empty pixel only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const int workers = resolve_threads(threads);
    const auto rc = load_run_config(config);
    if (check->parsed()) return cmd_check(rc, json_out);
    if (datagen->parsed()) return cmd_datagen(rc, out, workers);
    if (train->parsed()) return cmd_train(rc, data, out, log, workers);
    if (infer->parsed()) return cmd_infer(rc, algorithm, checkpoint, input, out, snr_db, workers);
    if (bench_mse->parsed())
      return cmd_bench_mse(rc, checkpoints, snrs, trials, with_lmmse, !no_sbl, out, series, workers);
    if (bench_time->parsed()) return cmd_bench_time(rc, checkpoints, trials, with_lmmse, !no_sbl, out);
    if (scene->parsed()) return cmd_scene(rc, algorithm, checkpoint, out, every, workers);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "error (parse_error): " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
