// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration. Geometry keys are required; every other section
// and key falls back to its default. Unknown keys are rejected.
#pragma once

#include <fstream>
#include <initializer_list>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "tomofocus/error.hpp"
#include "tomofocus/geometry.hpp"
#include "tomofocus/lvamp.hpp"
#include "tomofocus/scene3d.hpp"
#include "tomofocus/synth.hpp"
#include "tomofocus/training.hpp"

namespace tomofocus {

struct RunConfig {
  GeometryConfig geometry;
  DatasetSpec dataset;
  TrainConfig train;
  SceneConfig scene;
  std::map<std::string, std::string> paths;  // free-form named files

  void validate() const {
    geometry.validate();
    dataset.validate();
    train.validate();
    scene.validate();
    if (train.batch > train.count)
      throw Error(ErrorKind::invalid_config, "train.batch exceeds train.count");
    if (train.val_size >= train.count)
      throw Error(ErrorKind::invalid_config, "train.val_size must be smaller than train.count");
  }
};

namespace detail {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string prefix, std::initializer_list<const char*> allowed)
      : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw Error(ErrorKind::invalid_config, "'" + prefix_ + "' must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!ok.count(it.key())) throw Error(ErrorKind::invalid_config, "unknown field '" + name(it.key()) + "'");
  }

  template <class T>
  void required(const char* key, T& out) const {
    if (!j_.contains(key)) throw Error(ErrorKind::invalid_config, "missing required field '" + name(key) + "'");
    read(key, out);
  }

  template <class T>
  void optional(const char* key, T& out) const {
    if (j_.contains(key)) read(key, out);
  }

 private:
  const json& j_;
  std::string prefix_;

  std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  template <class T>
  void read(const char* key, T& out) const {
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::invalid_config, "field '" + name(key) + "' has the wrong type");
    }
  }
};

inline const json& section_or_empty(const json& root, const char* key) {
  static const json empty = json::object();
  return root.contains(key) ? root.at(key) : empty;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
  using detail::Section;
  if (!root.is_object()) throw Error(ErrorKind::invalid_config, "configuration must be a JSON object");
  Section top(root, "", {"geometry", "dataset", "train", "scene", "paths"});
  if (!root.contains("geometry")) throw Error(ErrorKind::invalid_config, "missing required field 'geometry'");

  RunConfig rc;
  {
    auto& g = rc.geometry;
    Section s(root.at("geometry"), "geometry",
              {"carrier_hz", "bandwidth_hz", "range_m", "aperture_m", "acquisitions", "extent_m", "grid_points",
               "aperture", "jitter_seed", "jitter_fraction"});
    s.required("carrier_hz", g.carrier_hz);
    s.required("bandwidth_hz", g.bandwidth_hz);
    s.required("range_m", g.range_m);
    s.required("aperture_m", g.aperture_m);
    s.required("acquisitions", g.acquisitions);
    s.required("extent_m", g.extent_m);
    s.required("grid_points", g.grid_points);
    std::string kind = "uniform";
    s.optional("aperture", kind);
    if (kind == "uniform") g.aperture_kind = ApertureKind::uniform;
    else if (kind == "jittered") g.aperture_kind = ApertureKind::jittered;
    else throw Error(ErrorKind::invalid_config, "geometry.aperture must be 'uniform' or 'jittered'");
    s.optional("jitter_seed", g.jitter_seed);
    s.optional("jitter_fraction", g.jitter_fraction);
  }
  {
    auto& d = rc.dataset;
    Section s(detail::section_or_empty(root, "dataset"), "dataset", {"count", "snr_db", "seed", "support"});
    s.optional("count", d.count);
    s.optional("snr_db", d.snr_db);
    s.optional("seed", d.seed);
    s.optional("support", d.support);
  }
  {
    auto& t = rc.train;
    Section s(detail::section_or_empty(root, "train"), "train",
              {"count", "batch", "depth", "lr_new", "lr_refine", "patience", "val_size", "seed", "snr_db",
               "eval_every", "max_rounds", "init_mode", "warm_start"});
    t.count = rc.dataset.count;
    t.seed = rc.dataset.seed;
    t.snr_db = rc.dataset.snr_db.front();
    s.optional("count", t.count);
    s.optional("batch", t.batch);
    s.optional("depth", t.depth);
    s.optional("lr_new", t.lr_new);
    s.optional("lr_refine", t.lr_refine);
    s.optional("patience", t.patience);
    s.optional("val_size", t.val_size);
    s.optional("seed", t.seed);
    s.optional("snr_db", t.snr_db);
    s.optional("eval_every", t.eval_every);
    s.optional("max_rounds", t.max_rounds);
    s.optional("warm_start", t.warm_start);
    std::string mode = to_string(t.init_mode);
    s.optional("init_mode", mode);
    try {
      t.init_mode = parse_init_mode(mode);
    } catch (const Error&) {
      throw Error(ErrorKind::invalid_config, "train.init_mode must be 'paper' or 'lmmse'");
    }
  }
  {
    auto& c = rc.scene;
    Section s(detail::section_or_empty(root, "scene"), "scene",
              {"building_height", "footprint_x", "footprint_y", "surface_spacing", "elevation_deg", "pixel_dx",
               "pixel_dr", "snr_db", "detection_ratio", "seed"});
    s.optional("building_height", c.building_height);
    s.optional("footprint_x", c.footprint_x);
    s.optional("footprint_y", c.footprint_y);
    s.optional("surface_spacing", c.surface_spacing);
    s.optional("elevation_deg", c.elevation_deg);
    s.optional("pixel_dx", c.pixel_dx);
    s.optional("pixel_dr", c.pixel_dr);
    s.optional("snr_db", c.snr_db);
    s.optional("detection_ratio", c.detection_ratio);
    s.optional("seed", c.seed);
  }
  if (root.contains("paths")) {
    const auto& p = root.at("paths");
    if (!p.is_object()) throw Error(ErrorKind::invalid_config, "'paths' must be an object");
    for (auto it = p.begin(); it != p.end(); ++it) {
      if (!it.value().is_string())
        throw Error(ErrorKind::invalid_config, "field 'paths." + it.key() + "' has the wrong type");
      rc.paths[it.key()] = it.value().get<std::string>();
    }
  }
  rc.validate();
  return rc;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::invalid_config, std::string("configuration is not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::invalid_config, "cannot read configuration '" + path + "'");
  return parse_run_config(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
}

inline nlohmann::json to_json(const GeometryConfig& g) {
  nlohmann::json j = {{"carrier_hz", g.carrier_hz},     {"bandwidth_hz", g.bandwidth_hz},
                      {"range_m", g.range_m},           {"aperture_m", g.aperture_m},
                      {"acquisitions", g.acquisitions}, {"extent_m", g.extent_m},
                      {"grid_points", g.grid_points},
                      {"aperture", g.aperture_kind == ApertureKind::uniform ? "uniform" : "jittered"}};
  if (g.aperture_kind == ApertureKind::jittered) {
    j["jitter_seed"] = g.jitter_seed;
    j["jitter_fraction"] = g.jitter_fraction;
  }
  return j;
}

}  // namespace tomofocus
