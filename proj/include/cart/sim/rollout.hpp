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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cart/sim/sensors.hpp"
#include "cart/util/csv.hpp"

namespace cart::sim {

struct RolloutConfig {
  double timeout = 30.0;         // s
  double goal_tolerance = 0.3;   // m
  double tip_limit = 0.6;        // rad, |roll| and |pitch|
  double policy_rate = 10.0;     // Hz
  double nominal_speed = 1.0;    // m/s, reference velocity magnitude
  double perturbation = 0.0;     // expected per-tick slip sum, m
  Eigen::Vector2d start = Eigen::Vector2d::Zero();
  double initial_height = 0.5;

  void validate() const {
    if (!(timeout >= 0.0) || !(goal_tolerance > 0.0) || !(tip_limit > 0.0)) {
      throw std::invalid_argument("rollout: timeout, tolerance and tip limit must be positive");
    }
    if (!(policy_rate > 0.0)) throw std::invalid_argument("rollout: policy rate must be > 0");
    if (!(perturbation >= 0.0)) throw std::invalid_argument("rollout: perturbation must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"timeout", timeout},       {"goal_tolerance", goal_tolerance},
            {"tip_limit", tip_limit},   {"policy_rate", policy_rate},
            {"nominal_speed", nominal_speed}, {"perturbation", perturbation},
            {"start", {start.x(), start.y()}}, {"initial_height", initial_height}};
  }
};

struct RolloutTrace {
  double dt = 0.01;
  std::vector<double> time;
  std::vector<Vec3> base_position;
  std::vector<Vec3> base_orientation;  // roll, pitch, yaw
  std::vector<Vec3> orientation_rates;
  std::vector<ProprioState> proprio;
  std::vector<BaseCommand> commands;
  bool goal_reached = false;
  bool tipped = false;
  double elapsed = 0.0;

  std::size_t size() const { return time.size(); }
};

struct Decision {
  long tick = 0;
  double time = 0.0;
  const SimState* state = nullptr;
  const Observation* observation = nullptr;  // null when the controller is blind
  Eigen::Vector3d reference = Eigen::Vector3d::Zero();
};

struct Controller {
  std::function<BaseCommand(const Decision&)> decide;
  bool uses_observation = true;
};

inline Controller fixed_command(const BaseCommand& cmd) {
  return {[cmd](const Decision&) { return cmd; }, false};
}

struct World {
  TerrainSpec spec;
  Heightfield terrain;
  RobotModel robot;
  GaitParams gait;
  SensorParams sensors;

  static World make(const TerrainSpec& spec, const RobotModel& robot = {}, const GaitParams& gait = {},
                    const SensorParams& sensors = {}, const TerrainLimits& limits = {}) {
    robot.validate();
    gait.validate();
    return {spec, generate_terrain(spec, limits), robot, gait, sensors};
  }
};

// Optional hook called after each decision with the command taken.
using DecisionObserver = std::function<void(const Decision&, const BaseCommand&)>;

inline RolloutTrace run_rollout(const World& w, const Controller& controller,
                                const Eigen::Vector2d& goal, const RolloutConfig& cfg,
                                std::uint64_t seed, const DecisionObserver& observer = {}) {
  cfg.validate();
  if (!w.terrain.contains(goal.x(), goal.y())) {
    throw std::invalid_argument("rollout: goal lies outside the terrain extent");
  }
  std::mt19937_64 rng(seed);
  const Eigen::Vector2d to_goal = goal - cfg.start;
  const double heading = to_goal.norm() > 1e-9 ? std::atan2(to_goal.y(), to_goal.x()) : 0.0;
  SimState s = initial_state(w.terrain, w.robot, w.gait, cfg.start, heading, cfg.initial_height);
  ProprioHistory history(w.sensors.proprio_window);
  const Eigen::Matrix2d phi = response_transition(w.gait, w.gait.dt());
  const long decimation = std::max(1L, std::lround(w.gait.control_rate / cfg.policy_rate));
  const long max_ticks = std::lround(cfg.timeout * w.gait.control_rate);

  RolloutTrace tr;
  tr.dt = w.gait.dt();
  ProprioState initial;
  for (int l = 0; l < kLegs; ++l) initial.stance[static_cast<std::size_t>(l)] = s.feet[static_cast<std::size_t>(l)].stance;
  auto record = [&](const ProprioState& p) {
    tr.time.push_back(s.time);
    tr.base_position.push_back(s.base);
    tr.base_orientation.push_back(s.orientation.angle);
    tr.orientation_rates.push_back(s.orientation.rate);
    tr.proprio.push_back(p);
    tr.commands.push_back(s.command);
  };
  record(initial);
  history.push(initial);

  auto distance = [&] { return (s.base.head<2>() - goal).norm(); };
  BaseCommand cmd = s.command;
  while (true) {
    if (distance() <= cfg.goal_tolerance) {
      tr.goal_reached = true;
      break;
    }
    if (s.tick >= max_ticks) break;
    if (s.tick % decimation == 0) {
      Decision d;
      d.tick = s.tick;
      d.time = s.time;
      d.state = &s;
      const Eigen::Vector2d dir = rot2(-s.heading) * (goal - s.base.head<2>()).normalized();
      d.reference = Eigen::Vector3d(dir.x(), dir.y(), 0.0) * cfg.nominal_speed;
      Observation obs;
      if (controller.uses_observation || observer) {
        obs = observe(s, w.terrain, w.spec.kind, history, w.sensors);
        d.observation = &obs;
      }
      if (!controller.uses_observation) d.observation = nullptr;
      cmd = controller.decide(d);
      if (observer) {
        d.observation = &obs;
        observer(d, cmd);
      }
    }
    const ProprioState p = step_gait(s, cmd, w.terrain, cfg.perturbation, w.robot, w.gait, rng, &phi);
    history.push(p);
    record(p);
    if (std::abs(s.orientation.angle.x()) >= cfg.tip_limit ||
        std::abs(s.orientation.angle.y()) >= cfg.tip_limit) {
      tr.tipped = true;
      break;
    }
  }
  tr.elapsed = s.time;
  return tr;
}

// ---- vibration -----------------------------------------------------------------

struct VibrationRms {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  double total = 0.0;  // RMS of the 3-D rate magnitude
};

inline VibrationRms vibration_rms(const RolloutTrace& tr) {
  VibrationRms v;
  if (tr.orientation_rates.empty()) return v;
  for (const auto& r : tr.orientation_rates) {
    v.roll += r.x() * r.x();
    v.pitch += r.y() * r.y();
    v.yaw += r.z() * r.z();
  }
  const double n = static_cast<double>(tr.orientation_rates.size());
  v.total = std::sqrt((v.roll + v.pitch + v.yaw) / n);
  v.roll = std::sqrt(v.roll / n);
  v.pitch = std::sqrt(v.pitch / n);
  v.yaw = std::sqrt(v.yaw / n);
  return v;
}

// Mean per-tick stance-foot slip over a trace (current-step stance flags).
inline double mean_trace_deltaq(const RolloutTrace& tr) {
  if (tr.proprio.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 1; t < tr.proprio.size(); ++t) {
    for (int l = 0; l < kLegs; ++l) {
      const auto li = static_cast<std::size_t>(l);
      if (!tr.proprio[t].stance[li]) continue;
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double d = tr.proprio[t].foot_slip[li][static_cast<std::size_t>(k)] -
                         tr.proprio[t - 1].foot_slip[li][static_cast<std::size_t>(k)];
        d2 += d * d;
      }
      sum += std::sqrt(d2);
    }
  }
  return sum / static_cast<double>(tr.proprio.size() - 1);
}

// ---- Δq sweep --------------------------------------------------------------------

struct SweepConfig {
  std::vector<double> speeds = {0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> deltaq = {0.0, 0.0125, 0.025, 0.0375, 0.05};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double duration = 10.0;

  void validate() const {
    if (speeds.empty() || deltaq.empty() || seeds.empty()) {
      throw std::invalid_argument("sweep: grids must be non-empty");
    }
    if (!(duration > 0.0)) throw std::invalid_argument("sweep: duration must be > 0");
  }
};

struct SweepRow {
  double speed = 0.0;
  double deltaq = 0.0;
  double rms_roll = 0.0;
  double rms_pitch = 0.0;
  double rms_yaw = 0.0;
  double rms_total = 0.0;
  double std_total = 0.0;
  double measured_deltaq = 0.0;
};

inline std::vector<SweepRow> deltaq_vibration_sweep(const SweepConfig& sc, const RobotModel& robot = {},
                                                    const GaitParams& gait = {}) {
  sc.validate();
  TerrainSpec spec;
  spec.kind = TerrainKind::flat;
  spec.extent_x = std::max(24.0, sc.duration * 1.7 + 6.0);
  spec.extent_y = 6.0;
  spec.resolution = 0.1;
  const World w = World::make(spec, robot, gait);
  const Eigen::Vector2d goal(w.terrain.x_max() - 0.5, 0.0);
  std::vector<SweepRow> rows;
  for (double v : sc.speeds) {
    for (double dq : sc.deltaq) {
      RolloutConfig rc;
      rc.timeout = sc.duration;
      rc.perturbation = dq;
      rc.initial_height = robot.nominal_height;
      const Controller c = fixed_command({v, 0.0, 0.0, robot.nominal_height});
      std::vector<VibrationRms> per_seed;
      double measured = 0.0;
      for (std::uint64_t seed : sc.seeds) {
        const RolloutTrace tr = run_rollout(w, c, goal, rc, seed);
        per_seed.push_back(vibration_rms(tr));
        measured += mean_trace_deltaq(tr);
      }
      SweepRow row;
      row.speed = v;
      row.deltaq = dq;
      const double n = static_cast<double>(per_seed.size());
      for (const auto& r : per_seed) {
        row.rms_roll += r.roll / n;
        row.rms_pitch += r.pitch / n;
        row.rms_yaw += r.yaw / n;
        row.rms_total += r.total / n;
      }
      double var = 0.0;
      for (const auto& r : per_seed) var += (r.total - row.rms_total) * (r.total - row.rms_total);
      row.std_total = per_seed.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
      row.measured_deltaq = measured / n;
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  util::CsvWriter w(path, {"speed", "deltaq", "rms_roll", "rms_pitch", "rms_yaw", "rms_total", "std_total"});
  for (const auto& r : rows) w.row({r.speed, r.deltaq, r.rms_roll, r.rms_pitch, r.rms_yaw, r.rms_total, r.std_total});
  w.close();
}

inline std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  const util::Table t = util::read_csv(path);
  std::vector<SweepRow> rows;
  const auto c = [&](const char* n) { return t.column(n); };
  for (const auto& r : t.rows) {
    SweepRow s;
    s.speed = r[c("speed")];
    s.deltaq = r[c("deltaq")];
    s.rms_roll = r[c("rms_roll")];
    s.rms_pitch = r[c("rms_pitch")];
    s.rms_yaw = r[c("rms_yaw")];
    s.rms_total = r[c("rms_total")];
    s.std_total = r[c("std_total")];
    rows.push_back(s);
  }
  return rows;
}

// ---- trace files ---------------------------------------------------------------

inline std::vector<std::string> trace_header() {
  std::vector<std::string> h = {"time", "x", "y", "z", "roll", "pitch", "yaw", "roll_rate",
                                "pitch_rate", "yaw_rate", "v_x", "v_y", "v_z", "h"};
  for (const char* leg : kLegNames)
    for (int j = 0; j < 3; ++j) h.push_back(std::string("tau_") + leg + "_" + std::to_string(j));
  for (const char* leg : kLegNames)
    for (int j = 0; j < 3; ++j) h.push_back(std::string("qd_") + leg + "_" + std::to_string(j));
  for (const char* leg : kLegNames)
    for (const char* ax : {"x", "y", "z"}) h.push_back(std::string("slip_") + leg + "_" + ax);
  for (const char* leg : kLegNames) h.push_back(std::string("stance_") + leg);
  return h;
}

// Writes <stem>.csv and <stem>.json.
inline void write_trace(const std::filesystem::path& stem, const RolloutTrace& tr,
                        const nlohmann::json& extra = nlohmann::json::object()) {
  util::CsvWriter w(std::filesystem::path(stem.string() + ".csv"), trace_header());
  for (std::size_t t = 0; t < tr.size(); ++t) {
    std::vector<double> row = {tr.time[t]};
    for (int k = 0; k < 3; ++k) row.push_back(tr.base_position[t](k));
    for (int k = 0; k < 3; ++k) row.push_back(tr.base_orientation[t](k));
    for (int k = 0; k < 3; ++k) row.push_back(tr.orientation_rates[t](k));
    const auto a = tr.commands[t].to_vector();
    for (int k = 0; k < 4; ++k) row.push_back(a(k));
    const nn::Vector p = tr.proprio[t].to_vector();
    for (int k = 0; k < kProprioDim; ++k) row.push_back(p(k));
    w.row(row);
  }
  w.close();
  nlohmann::json j = extra;
  j["dt"] = tr.dt;
  j["samples"] = tr.size();
  j["goal_reached"] = tr.goal_reached;
  j["tipped"] = tr.tipped;
  j["elapsed"] = tr.elapsed;
  const VibrationRms v = vibration_rms(tr);
  j["rms"] = {{"roll", v.roll}, {"pitch", v.pitch}, {"yaw", v.yaw}, {"total", v.total}};
  std::ofstream os(stem.string() + ".json", std::ios::binary);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing " + stem.string() + ".json");
}

inline RolloutTrace read_trace(const std::filesystem::path& csv, nlohmann::json* summary = nullptr) {
  const util::Table t = util::read_csv(csv);
  if (t.header != trace_header()) throw util::DataError(csv.string() + ": not a trace file (header mismatch)");
  RolloutTrace tr;
  for (const auto& r : t.rows) {
    tr.time.push_back(r[0]);
    tr.base_position.emplace_back(r[1], r[2], r[3]);
    tr.base_orientation.emplace_back(r[4], r[5], r[6]);
    tr.orientation_rates.emplace_back(r[7], r[8], r[9]);
    tr.commands.push_back({r[10], r[11], r[12], r[13]});
    nn::Vector p(kProprioDim);
    for (int k = 0; k < kProprioDim; ++k) p(k) = r[static_cast<std::size_t>(14 + k)];
    tr.proprio.push_back(ProprioState::from_vector(p));
  }
  std::filesystem::path js = csv;
  js.replace_extension(".json");
  if (std::filesystem::exists(js)) {
    std::ifstream is(js);
    nlohmann::json j = nlohmann::json::parse(is);
    tr.dt = j.value("dt", 0.01);
    tr.goal_reached = j.value("goal_reached", false);
    tr.tipped = j.value("tipped", false);
    tr.elapsed = j.value("elapsed", tr.time.empty() ? 0.0 : tr.time.back());
    if (summary) *summary = j;
  } else {
    if (tr.time.size() >= 2) tr.dt = tr.time[1] - tr.time[0];
    tr.elapsed = tr.time.empty() ? 0.0 : tr.time.back();
  }
  return tr;
}

}  // namespace cart::sim
