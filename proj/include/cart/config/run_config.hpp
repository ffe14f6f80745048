// Copyright 2026 The CART Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cart/metrics/metrics.hpp"
#include "cart/objective/dataset.hpp"
#include "cart/objective/policy.hpp"
#include "cart/objective/train.hpp"
#include "cart/sim/rollout.hpp"
#include "cart/tss/head_training.hpp"
#include "cart/tss/library.hpp"
#include "cart/util/csv.hpp"

namespace cart::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Which parameters the segment library covers.
enum class LibraryRegion { output_layer, all };

struct TssConfig {
  tss::LibraryParams library;
  LibraryRegion region = LibraryRegion::output_layer;
  tss::HeadTrainConfig head;
  int head_contexts = 200;  // dataset samples used for head training, each in both views
  nn::Index embed_hidden = 32;
  std::uint64_t embed_seed = 2024;
};

struct RunConfig {
  std::uint64_t seed = 1;
  sim::TerrainSpec terrain;
  Eigen::Vector2d goal = {10.0, 0.0};
  ObjectiveConfig objective;
  TrainConfig train;
  int finetune_epochs = 10;  // epochs when training starts from an existing checkpoint
  PolicyConfig policy;
  Modality modality = Modality::full;
  TssConfig tss;
  sim::GaitParams gait;
  sim::RobotModel robot;
  sim::RolloutConfig rollout;
  sim::SensorParams sensors;
  CollectConfig collect;
  sim::SweepConfig sweep;
  std::string cart_label = "cart";
  metrics::Pooling pooling = metrics::Pooling::concatenate;
  std::filesystem::path out = "out";

  RunConfig() {
    terrain.kind = sim::TerrainKind::rough;
    terrain.difficulty = 0.7;
    train.learning_rate = 3e-3;
    train.epochs = 20;
    sync();
  }

  // Copies the shared sensor and simulator settings into dependent configs.
  void sync() {
    policy.encoder.image_height = sensors.image_height;
    policy.encoder.image_width = sensors.image_width;
    policy.encoder.depth_max_range = sensors.max_range;
    policy.encoder.mesh_dim = sensors.mesh_dim();
    policy.encoder.proprio_window = sensors.proprio_window;
    train.robot = robot;
    train.gait = gait;
  }

  void validate() const {
    try {
      terrain.validate();
      objective.validate();
      train.validate();
      policy.validate();
      tss.library.validate();
      tss.head.validate();
      gait.validate();
      robot.validate();
      rollout.validate();
      collect.validate();
      sweep.validate();
      if (finetune_epochs < 1) throw std::invalid_argument("train: finetune_epochs must be >= 1");
      if (tss.head_contexts < 1) throw std::invalid_argument("tss: head_contexts must be >= 1");
      if (tss.embed_hidden < 1) throw std::invalid_argument("tss: embed_hidden must be >= 1");
      if (sensors.image_height < 1 || sensors.image_width < 1 || sensors.mesh_rows < 1 || sensors.mesh_cols < 1 ||
          sensors.proprio_window < 1) {
        throw std::invalid_argument("sensors: sizes must be >= 1");
      }
      if (!(sensors.max_range > 0.0)) throw std::invalid_argument("sensors: max_range must be > 0");
      if (!(rollout.timeout > 0.0)) throw std::invalid_argument("rollout: timeout must be > 0");
      if (cart_label.empty()) throw std::invalid_argument("eval: cart_label must be non-empty");
      if (!terrain_contains(goal)) throw std::invalid_argument("rollout: goal lies outside the terrain extent");
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  bool terrain_contains(const Eigen::Vector2d& p) const {
    return std::abs(p.x()) < 0.5 * terrain.extent_x && std::abs(p.y()) < 0.5 * terrain.extent_y;
  }

  tss::EmbedderConfig embedder() const {
    tss::EmbedderConfig e;
    e.hidden = tss.embed_hidden;
    e.seed = tss.embed_seed;
    return e;
  }

  nlohmann::json to_json() const {
    std::vector<std::string> kinds;
    for (auto k : collect.kinds) kinds.push_back(sim::to_string(k));
    return {{"seed", seed},
            {"terrain", terrain.to_json()},
            {"goal", {goal.x(), goal.y()}},
            {"objective", objective.to_json()},
            {"train", train.to_json()},
            {"finetune_epochs", finetune_epochs},
            {"policy", policy.to_json()},
            {"modality", to_string(modality)},
            {"tss",
             {{"library", tss.library.to_json()},
              {"region", tss.region == LibraryRegion::output_layer ? "output" : "all"},
              {"head", tss.head.to_json()},
              {"head_contexts", tss.head_contexts},
              {"embed_hidden", tss.embed_hidden},
              {"embed_seed", tss.embed_seed}}},
            {"gait", gait.to_json()},
            {"robot", robot.to_json()},
            {"rollout", rollout.to_json()},
            {"sensors", sensors.to_json()},
            {"collect",
             {{"runs", collect.runs},
              {"seed", collect.seed},
              {"run_duration", collect.run_duration},
              {"goal_distance", collect.goal_distance},
              {"kinds", kinds},
              {"difficulty_min", collect.difficulty_min},
              {"difficulty_max", collect.difficulty_max},
              {"v_x_min", collect.v_x_min},
              {"v_x_max", collect.v_x_max},
              {"v_y_std", collect.v_y_std},
              {"v_z_std", collect.v_z_std},
              {"h_min", collect.h_min},
              {"h_max", collect.h_max}}},
            {"sweep",
             {{"speeds", sweep.speeds},
              {"deltaq", sweep.deltaq},
              {"seeds", sweep.seeds},
              {"duration", sweep.duration}}},
            {"eval",
             {{"cart_label", cart_label},
              {"pooling", pooling == metrics::Pooling::concatenate ? "concatenate" : "mean_of_runs"}}},
            {"paths", {{"out", out.string()}}}};
  }
};

namespace detail {

// Typed accessors over one INI file that remember which keys were consumed.
class Reader {
 public:
  explicit Reader(boost::property_tree::ptree tree) : tree_(std::move(tree)) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    const auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    try {
      out = convert<T>(trim(*v));
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + key + "': cannot parse '" + *v + "' (" + e.what() + ")");
    }
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    used_.insert(key);
    const auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    std::vector<T> parsed;
    try {
      for (const auto& item : util::split(*v, ',')) {
        const std::string s = trim(item);
        if (!s.empty()) parsed.push_back(convert<T>(s));
      }
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + key + "': cannot parse '" + *v + "' (" + e.what() + ")");
    }
    out = std::move(parsed);
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) {
        throw ConfigError("config key '" + section + "' lies outside any section");
      }
      for (const auto& [key, value] : body) {
        const std::string full = section + "." + key;
        if (!used_.count(full)) throw ConfigError("unknown config key '" + full + "'");
      }
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  template <typename T>
  static T convert(const std::string& s) {
    if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_floating_point_v<T>) {
      return util::parse_double(s, "config");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (s.empty() || s[0] == '-') throw std::invalid_argument("expected a non-negative integer");
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
      return static_cast<T>(v);
    } else {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing characters");
      return static_cast<T>(v);
    }
  }

  boost::property_tree::ptree tree_;
  std::set<std::string> used_;
};

}  // namespace detail

inline RunConfig parse_config(std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  detail::Reader r(tree);
  RunConfig c;

  r.get("run.seed", c.seed);
  std::string modality = to_string(c.modality);
  r.get("run.modality", modality);
  std::string out = c.out.string();
  r.get("paths.out", out);
  c.out = out;

  std::string kind = sim::to_string(c.terrain.kind);
  r.get("terrain.kind", kind);
  r.get("terrain.difficulty", c.terrain.difficulty);
  r.get("terrain.extent_x", c.terrain.extent_x);
  r.get("terrain.extent_y", c.terrain.extent_y);
  r.get("terrain.resolution", c.terrain.resolution);

  auto& o = c.objective;
  r.get("objective.beta_v", o.beta_v);
  r.get("objective.sigma_v", o.sigma_v);
  r.get("objective.beta_s", o.beta_s);
  r.get("objective.beta_e", o.beta_e);
  r.get("objective.beta_a", o.beta_a);
  r.get("objective.clip_norm", o.clip_norm);
  r.get("objective.lateral_only", o.lateral_only);

  auto& t = c.train;
  r.get("train.epochs", t.epochs);
  r.get("train.batch_size", t.batch_size);
  r.get("train.learning_rate", t.learning_rate);
  r.get("train.momentum", t.momentum);
  r.get("train.fit_normalizer", t.fit_normalizer);
  r.get("train.finetune_epochs", c.finetune_epochs);

  auto& p = c.policy;
  r.get("policy.latent", p.encoder.latent);
  r.get("policy.mesh_hidden", p.encoder.mesh_hidden);
  r.get("policy.attention_heads", p.encoder.attention_heads);
  r.get_list("policy.conv_channels", p.encoder.conv_channels);
  r.get_list("policy.conv_strides", p.encoder.conv_strides);
  r.get("policy.conv_kernel", p.encoder.conv_kernel);
  r.get("policy.head_hidden", p.head_hidden);
  r.get("policy.v_scale", p.v_scale);
  r.get("policy.h_center", p.h_center);
  r.get("policy.h_half_range", p.h_half_range);

  auto& s = c.tss;
  r.get("tss.l_min", s.library.l_min);
  r.get("tss.l_max", s.library.l_max);
  r.get("tss.overlap", s.library.overlap);
  std::string region = "output";
  r.get("tss.region", region);
  r.get("tss.head_hidden", s.head.hidden);
  r.get("tss.head_epochs", s.head.epochs);
  r.get("tss.head_batch_size", s.head.batch_size);
  r.get("tss.head_learning_rate", s.head.learning_rate);
  r.get("tss.head_temperature", s.head.temperature);
  r.get("tss.head_seed", s.head.seed);
  r.get("tss.head_contexts", s.head_contexts);
  r.get("tss.embed_hidden", s.embed_hidden);
  r.get("tss.embed_seed", s.embed_seed);

  auto& g = c.gait;
  r.get("gait.control_rate", g.control_rate);
  r.get("gait.cycle", g.cycle);
  r.get("gait.duty", g.duty);
  r.get("gait.swing_height", g.swing_height);
  r.get("gait.natural_frequency", g.natural_frequency);
  r.get("gait.damping", g.damping);
  r.get("gait.terrain_slip_gain", g.terrain_slip_gain);
  r.get("gait.slip_height_exponent", g.slip_height_exponent);
  r.get("gait.slip_sag", g.slip_sag);
  r.get("gait.asymmetry_gain", g.asymmetry_gain);
  r.get("gait.gravity", g.gravity);

  auto& m = c.robot;
  r.get("robot.length", m.length);
  r.get("robot.width", m.width);
  r.get("robot.upper", m.upper);
  r.get("robot.lower", m.lower);
  r.get("robot.mass", m.mass);
  r.get("robot.nominal_height", m.nominal_height);
  r.get("robot.swing_leg_torque", m.swing_leg_torque);

  auto& ro = c.rollout;
  r.get("rollout.timeout", ro.timeout);
  r.get("rollout.goal_tolerance", ro.goal_tolerance);
  r.get("rollout.tip_limit", ro.tip_limit);
  r.get("rollout.policy_rate", ro.policy_rate);
  r.get("rollout.nominal_speed", ro.nominal_speed);
  r.get("rollout.perturbation", ro.perturbation);
  r.get("rollout.initial_height", ro.initial_height);
  r.get("rollout.goal_x", c.goal.x());
  r.get("rollout.goal_y", c.goal.y());

  auto& se = c.sensors;
  r.get("sensors.image_height", se.image_height);
  r.get("sensors.image_width", se.image_width);
  r.get("sensors.fov_horizontal_deg", se.fov_horizontal_deg);
  r.get("sensors.camera_tilt_deg", se.camera_tilt_deg);
  r.get("sensors.camera_forward", se.camera_forward);
  r.get("sensors.max_range", se.max_range);
  r.get("sensors.mesh_rows", se.mesh_rows);
  r.get("sensors.mesh_cols", se.mesh_cols);
  r.get("sensors.mesh_row_spacing", se.mesh_row_spacing);
  r.get("sensors.mesh_col_spacing", se.mesh_col_spacing);
  r.get("sensors.proprio_window", se.proprio_window);

  auto& co = c.collect;
  r.get("collect.runs", co.runs);
  r.get("collect.seed", co.seed);
  r.get("collect.run_duration", co.run_duration);
  r.get("collect.goal_distance", co.goal_distance);
  std::vector<std::string> kinds;
  r.get_list("collect.kinds", kinds);
  r.get("collect.difficulty_min", co.difficulty_min);
  r.get("collect.difficulty_max", co.difficulty_max);
  r.get("collect.v_x_min", co.v_x_min);
  r.get("collect.v_x_max", co.v_x_max);
  r.get("collect.v_y_std", co.v_y_std);
  r.get("collect.v_z_std", co.v_z_std);
  r.get("collect.h_min", co.h_min);
  r.get("collect.h_max", co.h_max);

  r.get_list("sweep.speeds", c.sweep.speeds);
  r.get_list("sweep.deltaq", c.sweep.deltaq);
  r.get_list("sweep.seeds", c.sweep.seeds);
  r.get("sweep.duration", c.sweep.duration);

  r.get("eval.cart_label", c.cart_label);
  std::string pooling = "concatenate";
  r.get("eval.pooling", pooling);

  r.reject_unknown();

  try {
    c.modality = parse_modality(modality);
    c.terrain.kind = sim::parse_terrain_kind(kind);
    if (!kinds.empty()) {
      co.kinds.clear();
      for (const auto& k : kinds) co.kinds.push_back(sim::parse_terrain_kind(k));
    }
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (region == "output") {
    s.region = LibraryRegion::output_layer;
  } else if (region == "all") {
    s.region = LibraryRegion::all;
  } else {
    throw ConfigError("tss.region must be 'output' or 'all', got '" + region + "'");
  }
  if (pooling == "concatenate") {
    c.pooling = metrics::Pooling::concatenate;
  } else if (pooling == "mean_of_runs") {
    c.pooling = metrics::Pooling::mean_of_runs;
  } else {
    throw ConfigError("eval.pooling must be 'concatenate' or 'mean_of_runs', got '" + pooling + "'");
  }
  c.sync();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  try {
    return parse_config(is);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace cart::config
