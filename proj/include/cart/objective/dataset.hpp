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

// Logged training data: exploratory collection in the simulator and
// conversion of run logs into objective samples.

#pragma once

#include <algorithm>
#include <filesystem>
#include <random>
#include <vector>

#include "cart/context/log_io.hpp"
#include "cart/objective/objective.hpp"
#include "cart/sim/rollout.hpp"

namespace cart {

// Samples pair the observation at decision tick k with the proprio states at
// ticks k + d - 1 and k + d, d = ticks per decision. Decisions whose interval
// is cut short by the end of the run are dropped.
inline std::vector<StepSample> samples_from_log(const RunLog& log) {
  std::vector<StepSample> out;
  std::optional<BaseCommand> previous;
  for (const auto& d : log.decisions) {
    const auto end = static_cast<std::size_t>(d.tick + log.decimation);
    if (end < log.proprio.size()) {
      StepSample s;
      s.observation = log.observation(d);
      s.command = d.command;
      s.reference = d.reference;
      s.prev = log.proprio[end - 1];
      s.curr = log.proprio[end];
      s.previous_command = previous;
      out.push_back(std::move(s));
    }
    previous = d.command;
  }
  return out;
}

// Every run directory below `root` (a directory holding manifest.json counts
// as a run); `root` itself may be a run.
inline std::vector<std::filesystem::path> find_run_logs(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw util::DataError("dataset path does not exist: " + root.string());
  std::vector<fs::path> runs;
  if (fs::exists(root / "manifest.json")) runs.push_back(root);
  if (fs::is_directory(root)) {
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_directory() && fs::exists(e.path() / "manifest.json")) runs.push_back(e.path());
    }
  }
  std::sort(runs.begin(), runs.end());
  if (runs.empty()) throw util::DataError("no run logs (manifest.json) under " + root.string());
  return runs;
}

inline std::vector<StepSample> load_dataset(const std::filesystem::path& root) {
  std::vector<StepSample> all;
  for (const auto& dir : find_run_logs(root)) {
    auto s = samples_from_log(read_run_log(dir));
    all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return all;
}

struct CollectConfig {
  int runs = 16;
  std::uint64_t seed = 1;
  double run_duration = 15.0;  // s
  double goal_distance = 16.0;  // m
  std::vector<sim::TerrainKind> kinds = {sim::TerrainKind::flat, sim::TerrainKind::rough,
                                         sim::TerrainKind::rough, sim::TerrainKind::box,
                                         sim::TerrainKind::slope_up, sim::TerrainKind::slope_down};
  double difficulty_min = 0.3;
  double difficulty_max = 1.0;
  // Exploratory commands.
  double v_x_min = 0.4;
  double v_x_max = 1.4;
  double v_y_std = 0.15;
  double v_z_std = 0.1;
  double h_min = 0.2;
  double h_max = 0.6;

  void validate() const {
    if (runs < 1) throw std::invalid_argument("collect: runs must be >= 1");
    if (kinds.empty()) throw std::invalid_argument("collect: no terrain kinds");
    if (!(run_duration > 0.0) || !(goal_distance > 0.0)) {
      throw std::invalid_argument("collect: duration and goal distance must be > 0");
    }
    if (!(difficulty_min >= 0.0 && difficulty_min <= difficulty_max && difficulty_max <= 1.0)) {
      throw std::invalid_argument("collect: difficulty range must lie in [0, 1]");
    }
    if (!(v_x_min <= v_x_max) || !(h_min < h_max)) throw std::invalid_argument("collect: empty command range");
  }
};

// Runs the simulator with randomly drawn commands held for one decision each.
inline std::vector<RunLog> collect_runs(const CollectConfig& cc, const sim::RobotModel& robot = {},
                                        const sim::GaitParams& gait = {}, const sim::SensorParams& sensors = {},
                                        const sim::RolloutConfig& base = {}) {
  cc.validate();
  std::mt19937_64 meta(cc.seed);
  std::vector<RunLog> logs;
  const CommandBounds bounds;
  for (int r = 0; r < cc.runs; ++r) {
    sim::TerrainSpec spec;
    spec.kind = cc.kinds[static_cast<std::size_t>(r) % cc.kinds.size()];
    spec.difficulty = spec.kind == sim::TerrainKind::flat
                          ? 0.0
                          : std::uniform_real_distribution<double>(cc.difficulty_min, cc.difficulty_max)(meta);
    spec.seed = meta();
    spec.extent_x = cc.goal_distance + 6.0;
    spec.extent_y = 8.0;
    const std::uint64_t run_seed = meta();
    const sim::World w = sim::World::make(spec, robot, gait, sensors);

    std::mt19937_64 rng(run_seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> vx(cc.v_x_min, cc.v_x_max), hh(cc.h_min, cc.h_max);
    std::normal_distribution<double> vy(0.0, cc.v_y_std), vz(0.0, cc.v_z_std);
    auto clampv = [&](double v) { return std::clamp(v, -bounds.v_max, bounds.v_max); };
    sim::Controller explore{[&](const sim::Decision&) {
                              BaseCommand c;
                              c.v_x = vx(rng);
                              c.v_y = clampv(vy(rng));
                              c.v_z = clampv(vz(rng));
                              c.h = hh(rng);
                              return c;
                            },
                            false};

    RunLog log;
    log.dt = gait.dt();
    log.decimation = std::max(1L, std::lround(gait.control_rate / base.policy_rate));
    log.proprio_window = sensors.proprio_window;
    log.info = {{"terrain", spec.to_json()}, {"run_seed", run_seed}, {"source", "exploratory"}};
    sim::RolloutConfig rc = base;
    rc.timeout = cc.run_duration;
    const sim::DecisionObserver obs = [&](const sim::Decision& d, const BaseCommand& cmd) {
      LoggedDecision ld;
      ld.tick = d.tick;
      ld.time = d.time;
      ld.command = cmd;
      ld.reference = d.reference;
      ld.mesh = d.observation->mesh;
      ld.rgbd = round_to_float(d.observation->rgbd);
      log.decisions.push_back(std::move(ld));
    };
    const sim::RolloutTrace tr = sim::run_rollout(w, explore, Eigen::Vector2d(cc.goal_distance, 0.0), rc, run_seed, obs);
    log.time = tr.time;
    log.proprio = tr.proprio;
    logs.push_back(std::move(log));
  }
  return logs;
}

inline std::vector<StepSample> samples_from_logs(const std::vector<RunLog>& logs) {
  std::vector<StepSample> all;
  for (const auto& l : logs) {
    auto s = samples_from_log(l);
    all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return all;
}

}  // namespace cart
