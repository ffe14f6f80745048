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

// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cart/config/pipeline.hpp"
#include "cart/config/run_config.hpp"
#include "cart/metrics/metrics.hpp"
#include "cart/nn/gradient.hpp"
#include "cart/objective/dataset.hpp"
#include "cart/objective/objective.hpp"
#include "cart/objective/train.hpp"
#include "cart/sim/rollout.hpp"
#include "cart/tss/head_training.hpp"
#include "cart/tss/library.hpp"
#include "cart/tss/selection.hpp"
#include "fd_oracle.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using namespace cart;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cart_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- 1: slip/vibration trend ----------------------------------------------------------

Outcome deltaq_trend() {
  Outcome o;
  const auto t0 = Clock::now();
  const sim::SweepConfig sc;  // 5 speeds x 5 slip levels x 5 seeds
  const auto rows = sim::deltaq_vibration_sweep(sc);
  const double secs = seconds_since(t0);
  o.require(rows.size() == 25, "25 sweep rows");
  for (const auto& t : metrics::sweep_trends(rows)) {
    o.detail << " v=" << t.speed << ": rho=" << t.spearman << (t.zero_is_minimum ? " min@0" : " min!=0") << ";";
    o.require(t.spearman >= 0.9, "Spearman >= 0.9 at v=" + std::to_string(t.speed));
    o.require(t.zero_is_minimum, "zero slip is the minimum at v=" + std::to_string(t.speed));
  }
  o.detail << " runtime " << secs << " s";
  o.require(secs <= 120.0, "runtime <= 2 min");
  return o;
}

// ---- 2: selection latency ---------------------------------------------------------------

Outcome selection_latency() {
  Outcome o;
  const config::RunConfig cfg;
  const tss::SegmentLibrary lib = tss::synthetic_library(132775, 5, cfg.tss.library);
  const tss::ScoringHead head =
      tss::ScoringHead::random(cfg.tss.head.hidden, cfg.policy.encoder.context_dim(), cfg.tss.head.seed);
  const tss::LatencyReport r = tss::benchmark_selection(lib, head, 30, 6);
  o.detail << " segments " << r.segments << ", mean " << r.mean_ms << " ms, p95 " << r.p95_ms << " ms";
  o.require(r.segments == 132775, "library size 132775");
  o.require(r.mean_ms <= 400.0, "mean <= 400 ms");
  return o;
}

// ---- 3: gradient check --------------------------------------------------------------------

Outcome gradient_check() {
  Outcome o;
  const auto t0 = Clock::now();
  const PolicyConfig pc = testing::tiny_policy_config();
  PolicyBundle policy = make_policy(pc, 31);
  const auto data = testing::random_samples(4, 32, pc);
  policy.normalizer.fit(proprio_rows(data));
  const ObjectiveConfig c;
  const sim::RobotModel m;
  const sim::GaitParams g;
  const CartPolicy net = policy.policy();
  std::vector<const Observation*> obs;
  std::vector<const StepSample*> batch;
  for (const auto& s : data) {
    obs.push_back(&s.observation);
    batch.push_back(&s);
  }
  auto loss_of = [&](const nn::BoundParams& p) {
    return -nn::mean(counterfactual_objective(net.forward(p, obs, policy.normalizer).command, batch, c, m, g));
  };
  const auto gr = nn::evaluate_gradient(
      [&](const nn::BoundParams& p) { return std::vector<nn::LossTerm>{{"loss", loss_of(p)}}; }, policy.params);
  const testing::ScalarLoss scalar = [&](const nn::ParamVector& pv) {
    return loss_of(nn::BoundParams(pv, false)).item();
  };
  std::mt19937_64 rng(33);
  double worst = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    const auto d = testing::random_unit_direction(policy.params.size(), rng);
    worst = std::max(worst, testing::relative_error(testing::dot(gr.gradient.values, d),
                                                    testing::directional_fd(scalar, policy.params, d)));
  }
  const double secs = seconds_since(t0);
  o.detail << " parameters " << policy.params.size() << ", worst relative error " << worst << " over 20 probes, "
           << secs << " s";
  o.require(policy.params.size() <= 5000, "<= 5000 parameters");
  o.require(worst < 1e-4, "relative error < 1e-4");
  o.require(secs <= 60.0, "runtime <= 1 min");
  return o;
}

// ---- 4: library combinatorics ------------------------------------------------------------

Outcome library_combinatorics() {
  Outcome o;
  const tss::LibraryParams p;  // l in [5, 20], 50% overlap
  std::mt19937_64 rng(41);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::size_t checked = 0;
  for (std::size_t n : {10u, 50u, 200u}) {
    std::vector<double> values(n);
    for (double& v : values) v = gauss(rng);
    const tss::SegmentLibrary lib = tss::build_library({{"src", values}}, p);
    // Brute force: every start i with i divisible by the stride and the window inside the source.
    std::map<int, std::size_t> oracle;
    for (int l = p.l_min; l <= p.l_max; ++l) {
      std::size_t s = 1;
      while (static_cast<double>(s + 1) <= static_cast<double>(l) * (1.0 - p.overlap)) ++s;
      for (std::size_t i = 0; i + static_cast<std::size_t>(l) <= n; ++i) {
        if (i % s == 0) ++oracle[l];
      }
    }
    const auto counts = lib.counts();
    for (int l = p.l_min; l <= p.l_max; ++l) {
      const auto it = counts.find({0, l});
      const std::size_t got = it == counts.end() ? 0 : it->second;
      o.require(got == oracle[l], "count N=" + std::to_string(n) + " l=" + std::to_string(l));
      ++checked;
    }
    o.detail << " N=" << n << ": " << lib.size() << " segments;";
  }

  std::vector<double> params(400);
  for (double& v : params) v = gauss(rng);
  std::vector<double> other(400);
  for (double& v : other) v = gauss(rng);
  const tss::SegmentLibrary lib = tss::build_library({{"live", params}, {"other", other}}, p);
  const std::vector<double> original = params;
  std::uniform_int_distribution<std::size_t> pick(0, lib.size() - 1);
  int exact = 0;
  for (int k = 0; k < 100; ++k) {
    const tss::Segment& seg = lib.segments[pick(rng)];
    const auto saved = tss::apply_segment(params, seg);
    const bool applied = std::memcmp(params.data() + seg.start, seg.values.data(), seg.values.size() * sizeof(double)) == 0;
    tss::restore_segment(params, seg, saved);
    if (applied && std::memcmp(params.data(), original.data(), params.size() * sizeof(double)) == 0) ++exact;
  }
  o.detail << " " << checked << " (N, l) counts checked; " << exact << "/100 bitwise round trips";
  o.require(exact == 100, "100 bitwise apply/restore round trips");
  return o;
}

// ---- 5: objective unit results ---------------------------------------------------------------

Outcome objective_units() {
  Outcome o;
  ObjectiveConfig c;
  c.beta_v = 1.3;
  const BaseCommand a{0.9, -0.2, 0.1, 0.45};
  const double jv = velocity_term(a, a.velocity(), c);
  o.require(jv == c.beta_v, "J_v(v = v*) == beta_v");

  ProprioState prev, curr;
  prev.stance.fill(true);
  curr.stance.fill(true);
  curr.foot_slip[1] = {0.03, 0.04, 0.0};
  const double dq = delta_q(prev, curr);
  o.require(dq == 0.05, "3-4-5 slip == 0.05");

  std::mt19937_64 rng(51);
  ProprioState p1 = testing::random_proprio(rng), p2 = testing::random_proprio(rng);
  p1.stance.fill(true);
  p2.stance.fill(false);
  const double masked = delta_q(p1, p2);
  o.require(masked == 0.0, "all-swing slip == 0");

  double worst = 0.0;
  const ObjectiveConfig d;
  for (int i = 0; i < 200; ++i) {
    const StepSample s = testing::random_sample(rng, testing::tiny_policy_config());
    const double sum = velocity_term(s.command, s.reference, d) + slip_term(s.prev, s.curr, d) +
                       effort_term(s.curr.joint_torques, d);
    const double total = total_objective(s, d);
    worst = std::max(worst, std::abs(total - sum) / std::max(1.0, std::abs(sum)));
  }
  o.require(worst <= 4 * std::numeric_limits<double>::epsilon(), "total equals the sum of its terms");
  o.detail << " J_v=" << jv << " (beta_v " << c.beta_v << "), slip " << dq << ", all-swing " << masked
           << ", worst sum mismatch " << worst;
  return o;
}

// ---- 6: metric oracles --------------------------------------------------------------------------

sim::RolloutTrace path_trace(const std::function<Eigen::Vector3d(double)>& pos, double duration, double dt = 0.01) {
  sim::RolloutTrace tr;
  tr.dt = dt;
  const auto n = static_cast<std::size_t>(std::llround(duration / dt)) + 1;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = dt * static_cast<double>(k);
    tr.time.push_back(t);
    tr.base_position.push_back(pos(t));
    tr.base_orientation.push_back(Eigen::Vector3d::Zero());
    tr.orientation_rates.push_back(Eigen::Vector3d::Zero());
    tr.commands.push_back({});
    tr.proprio.push_back({});
  }
  tr.elapsed = tr.time.back();
  return tr;
}

Outcome metric_oracles() {
  Outcome o;
  const double two_over_pi = 2.0 / std::numbers::pi;
  // Whole number of half periods, where the mean of |cos t| is exactly 2/pi.
  const double duration = std::round(10.0 * std::numbers::pi * 100.0) / 100.0;
  const auto sine = path_trace([](double t) { return Eigen::Vector3d(std::sin(t), 0, 0); }, duration);
  const double j_sin = metrics::mean_jerk(sine);
  o.require(std::abs(j_sin - two_over_pi) / two_over_pi <= 0.01, "sine jerk within 1% of 2/pi");

  const auto line = path_trace([](double t) { return Eigen::Vector3d(0.8 * t, 0.1 * t, 0.5); }, 10.0);
  const double j_line = metrics::mean_jerk(line);
  o.require(j_line <= 1e-6, "constant-velocity jerk is zero");

  const double imp = metrics::avg_improvement(std::vector<double>{180.3, 201.2, 73.3}, 45.5);
  o.require(std::abs(imp - 63.4) <= 0.1, "avg improvement 63.4 +/- 0.1");

  const auto circle = path_trace([](double t) { return Eigen::Vector3d(std::cos(t), std::sin(t), 0.5); }, 10.0);
  const double dist = metrics::distance_within(circle, 10.0);
  o.require(std::abs(dist - 10.0) / 10.0 <= 0.005, "circle distance within 0.5% of 10 m");

  o.detail << " sine jerk " << j_sin << " over " << duration << " s (2/pi = " << two_over_pi
           << "), constant-velocity jerk " << j_line << ", improvement " << imp << "%, circle distance " << dist
           << " m";
  return o;
}

// ---- 7 and 8: trained pipeline ----------------------------------------------------------------

struct Pipeline {
  config::RunConfig cfg;
  PolicyBundle full;
  PolicyBundle proprio;
  tss::SegmentLibrary library;
  tss::ScoringHead head;
  double seconds = 0.0;
};

Pipeline build_pipeline() {
  const auto t0 = Clock::now();
  Pipeline p;
  const auto& cfg = p.cfg;
  const auto data = samples_from_logs(collect_runs(cfg.collect, cfg.robot, cfg.gait, cfg.sensors, cfg.rollout));

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  p.full = train_policy(data, make_policy(cfg.policy, cfg.seed, Modality::full), cfg.objective, tc).policy;

  PolicyBundle start = p.full;
  start.modality = Modality::proprio_only;
  tc.fit_normalizer = false;
  tc.epochs = cfg.finetune_epochs;
  p.proprio = train_policy(data, std::move(start), cfg.objective, tc).policy;

  p.library = config::build_policy_library({p.full, p.proprio}, {"full", "proprio-only"}, cfg);
  p.head = config::fit_selection_head(p.full, p.library, data, cfg).head;
  p.seconds = seconds_since(t0);
  std::cout << "  pipeline: " << data.size() << " samples, library " << p.library.size() << " segments, built in "
            << p.seconds << " s\n";
  return p;
}

double forward_speed(const sim::RolloutTrace& tr) {
  return (tr.base_position.back().head<2>() - tr.base_position.front().head<2>()).norm() / tr.elapsed;
}

Outcome end_to_end(Pipeline& p) {
  Outcome o;
  const auto t0 = Clock::now();
  const auto& cfg = p.cfg;
  const Eigen::Vector2d goal = cfg.goal;
  tss::TssPolicy policy(p.full, p.library, p.head);
  const sim::Controller cart{[&](const sim::Decision& d) { return policy.act(*d.observation); }, true};

  constexpr int kSeeds = 20;
  auto world_for = [&](std::uint64_t seed) {
    sim::TerrainSpec spec = cfg.terrain;  // rough, difficulty 0.7
    spec.seed = seed;
    return sim::World::make(spec, cfg.robot, cfg.gait, cfg.sensors);
  };
  double vib_c = 0, time_c = 0, speed_c = 0;
  int reached_c = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    const auto tr = sim::run_rollout(world_for(s), cart, goal, cfg.rollout, s);
    vib_c += sim::vibration_rms(tr).total;
    time_c += tr.elapsed;
    speed_c += forward_speed(tr);
    reached_c += tr.goal_reached;
  }
  vib_c /= kSeeds;
  time_c /= kSeeds;
  speed_c /= kSeeds;

  BaseCommand fixed;
  fixed.v_x = speed_c;
  fixed.h = cfg.robot.nominal_height;
  double vib_b = 0, time_b = 0, speed_b = 0;
  int reached_b = 0;
  for (int s = 1; s <= kSeeds; ++s) {
    const auto tr = sim::run_rollout(world_for(s), sim::fixed_command(fixed), goal, cfg.rollout, s);
    vib_b += sim::vibration_rms(tr).total;
    time_b += tr.elapsed;
    speed_b += forward_speed(tr);
    reached_b += tr.goal_reached;
  }
  vib_b /= kSeeds;
  time_b /= kSeeds;
  speed_b /= kSeeds;

  const double reduction = 1.0 - vib_c / vib_b;
  const double speed_gap = std::abs(speed_b - speed_c) / speed_c;
  const double time_ratio = time_c / time_b;
  const double secs = p.seconds + seconds_since(t0);
  o.detail << " vibration cart " << vib_c << " vs fixed " << vib_b << " (" << 100.0 * reduction
           << "% lower); speed " << speed_c << " vs " << speed_b << " m/s (gap " << 100.0 * speed_gap
           << "%); time " << time_c << " vs " << time_b << " s (ratio " << time_ratio << "); goals " << reached_c
           << "/" << reached_b << " of " << kSeeds << "; runtime " << secs << " s";
  o.require(reduction >= 0.20, "vibration >= 20% lower");
  o.require(speed_gap <= 0.10, "matched speed within 10%");
  o.require(time_ratio <= 1.10, "time to goal at most 10% worse");
  o.require(secs <= 600.0, "runtime <= 10 min");
  return o;
}

Outcome context_switch(const Pipeline& p) {
  Outcome o;
  config::RunConfig held = p.cfg;
  held.collect.runs = 6;
  held.collect.seed = 999;  // disjoint from the training collection
  const auto samples =
      samples_from_logs(collect_runs(held.collect, held.robot, held.gait, held.sensors, held.rollout));
  const CartPolicy net = p.full.policy();
  int blind = 0, sighted = 0;
  for (const auto& s : samples) {
    const auto cb = net.encoder().build_context_state(p.full.params, without_exteroception(s.observation),
                                                      p.full.normalizer);
    const auto cf = net.encoder().build_context_state(p.full.params, s.observation, p.full.normalizer);
    blind += tss::select_segment(p.library, cb.s_hat, p.head).source_id == 1;
    sighted += tss::select_segment(p.library, cf.s_hat, p.head).source_id == 1;
  }
  const double frac = static_cast<double>(blind) / static_cast<double>(samples.size());
  o.detail << " " << samples.size() << " held-out proprio-only contexts, " << 100.0 * frac
           << "% select the proprio-only source (" << 100.0 * sighted / static_cast<double>(samples.size())
           << "% with exteroception present)";
  o.require(!samples.empty(), "held-out contexts");
  o.require(frac >= 0.80, ">= 80% proprio-only selections");
  return o;
}

// ---- 9: determinism ---------------------------------------------------------------------------------

struct DeterminismRun {
  std::string checkpoint, trace, selections, sweep;
};

DeterminismRun determinism_run(const fs::path& dir) {
  config::RunConfig cfg;
  cfg.sensors.image_height = cfg.sensors.image_width = 8;
  cfg.sensors.mesh_rows = 4;
  cfg.sensors.mesh_cols = 8;
  cfg.sensors.proprio_window = 4;
  cfg.policy = testing::tiny_policy_config();
  cfg.sync();
  cfg.collect.runs = 2;
  cfg.collect.run_duration = 6.0;
  cfg.collect.goal_distance = 8.0;
  cfg.train.epochs = 3;
  cfg.tss.head.epochs = 2;
  cfg.tss.head.hidden = 8;
  cfg.tss.head_contexts = 10;
  cfg.rollout.timeout = 4.0;
  cfg.goal = {2.0, 0.0};

  const auto data = samples_from_logs(collect_runs(cfg.collect, cfg.robot, cfg.gait, cfg.sensors, cfg.rollout));
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  PolicyBundle full = train_policy(data, make_policy(cfg.policy, cfg.seed), cfg.objective, tc).policy;
  PolicyBundle start = full;
  start.modality = Modality::proprio_only;
  tc.fit_normalizer = false;
  const PolicyBundle prop = train_policy(data, std::move(start), cfg.objective, tc).policy;
  save_policy((dir / "full.ckpt").string(), full);

  const auto lib = config::build_policy_library({full, prop}, {"full", "proprio-only"}, cfg);
  const auto head = config::fit_selection_head(full, lib, data, cfg).head;
  tss::TssPolicy policy(full, lib, head);
  std::ostringstream log;
  const sim::Controller c{[&](const sim::Decision& d) {
                            tss::Selection sel;
                            const BaseCommand cmd = policy.act(*d.observation, &sel);
                            log << sel.source_id << ',' << sel.start << ',' << sel.length << ','
                                << util::format_double(sel.score) << '\n';
                            return cmd;
                          },
                          true};
  sim::TerrainSpec spec = cfg.terrain;
  spec.seed = 4;
  const auto tr = sim::run_rollout(sim::World::make(spec, cfg.robot, cfg.gait, cfg.sensors), c, cfg.goal,
                                   cfg.rollout, 4);
  sim::write_trace(dir / "trace", tr);

  sim::SweepConfig sc;
  sc.speeds = {0.4, 0.8};
  sc.deltaq = {0.0, 0.025, 0.05};
  sc.seeds = {1, 2};
  sc.duration = 4.0;
  sim::write_sweep_csv(dir / "sweep.csv", sim::deltaq_vibration_sweep(sc));

  return {read_bytes(dir / "full.ckpt"), read_bytes(dir / "trace.csv"), log.str(), read_bytes(dir / "sweep.csv")};
}

Outcome determinism() {
  Outcome o;
  const DeterminismRun a = determinism_run(scratch("det_a"));
  const DeterminismRun b = determinism_run(scratch("det_b"));
  o.require(!a.checkpoint.empty() && a.checkpoint == b.checkpoint, "checkpoints identical");
  o.require(!a.trace.empty() && a.trace == b.trace, "traces identical");
  o.require(!a.selections.empty() && a.selections == b.selections, "selection logs identical");
  o.require(!a.sweep.empty() && a.sweep == b.sweep, "sweep CSVs identical");
  o.detail << " checkpoint " << a.checkpoint.size() << " B, trace " << a.trace.size() << " B, selection log "
           << a.selections.size() << " B, sweep CSV " << a.sweep.size() << " B compared across two runs";
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "):" << o.detail.str()
              << std::endl;
  };

  report(1, "slip-vibration trend", deltaq_trend);
  report(2, "selection latency", selection_latency);
  report(3, "gradient correctness", gradient_check);
  report(4, "library combinatorics", library_combinatorics);
  report(5, "objective unit results", objective_units);
  report(6, "metric oracles", metric_oracles);

  std::optional<Pipeline> pipeline;
  std::string pipeline_error;
  try {
    pipeline = build_pipeline();
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  auto needs_pipeline = [&](const std::function<Outcome(Pipeline&)>& fn) {
    return [&, fn] {
      if (!pipeline) throw std::runtime_error("pipeline failed: " + pipeline_error);
      return fn(*pipeline);
    };
  };
  report(7, "end-to-end vibration", needs_pipeline(end_to_end));
  report(8, "context switch", needs_pipeline([](Pipeline& p) { return context_switch(p); }));
  report(9, "determinism", determinism);

  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
