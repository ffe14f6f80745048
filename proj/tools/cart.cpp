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

// Command-line driver: collect, train, build-library, infer, bench-tss,
// sweep-deltaq, eval, plot.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cart/config/pipeline.hpp"
#include "cart/config/run_config.hpp"
#include "cart/context/log_io.hpp"
#include "cart/metrics/metrics.hpp"
#include "cart/metrics/report.hpp"
#include "cart/objective/dataset.hpp"
#include "cart/objective/train.hpp"
#include "cart/sim/rollout.hpp"
#include "cart/tss/head_training.hpp"
#include "cart/tss/library.hpp"
#include "cart/tss/selection.hpp"
#include "cart/util/csv.hpp"

namespace fs = std::filesystem;
using namespace cart;
using config::ConfigError;
using config::RunConfig;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig() : config::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c, const RunConfig& cfg, const std::string& fallback) {
  return c.out.empty() ? cfg.out / fallback : fs::path(c.out);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

PolicyBundle load_checkpoint_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw util::DataError("checkpoint not found: " + path);
  return load_policy(path);
}

// Writes through a temporary file so a failure never leaves a partial output.
template <typename Fn>
void write_atomically(const fs::path& path, Fn&& write) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".partial";
  try {
    write(tmp.string());
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

// ---- collect --------------------------------------------------------------------

int cmd_collect(const Common& c) {
  RunConfig cfg = resolve(c);
  if (c.seed) cfg.collect.seed = *c.seed;
  const fs::path dir = out_dir(c, cfg, "dataset");
  const auto logs = collect_runs(cfg.collect, cfg.robot, cfg.gait, cfg.sensors, cfg.rollout);
  std::size_t decisions = 0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "run_%03zu", i);
    write_run_log(dir / name, logs[i]);
    decisions += logs[i].decisions.size();
  }
  write_json(dir / "collect_report.json", {{"runs", logs.size()}, {"decisions", decisions}, {"config", cfg.to_json()}});
  std::cout << "collected " << logs.size() << " runs, " << decisions << " decisions into " << dir.string() << "\n";
  return kOk;
}

// ---- train ----------------------------------------------------------------------

int cmd_train(const Common& c, const std::string& dataset, const std::string& modality, const std::string& init) {
  RunConfig cfg = resolve(c);
  if (!modality.empty()) {
    try {
      cfg.modality = parse_modality(modality);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  const fs::path ckpt = c.out.empty() ? cfg.out / ("policy_" + to_string(cfg.modality) + ".ckpt") : fs::path(c.out);
  const auto data = load_dataset(dataset);
  if (data.empty()) throw util::DataError("dataset " + dataset + " contains no decision samples");

  PolicyBundle start;
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  if (!init.empty()) {
    // Fine-tuning keeps the normalizer so both checkpoints share one context space.
    start = load_checkpoint_file(init);
    const nn::ParamLayout expected = CartPolicy::build(cfg.policy).second;
    if (!(start.params.layout == expected)) {
      throw std::runtime_error("initial checkpoint does not match the configured policy:\n" +
                               expected.diff(start.params.layout));
    }
    start.modality = cfg.modality;
    tc.fit_normalizer = false;
    tc.epochs = cfg.finetune_epochs;
  } else {
    start = make_policy(cfg.policy, cfg.seed, cfg.modality);
  }

  TrainResult r = train_policy(data, std::move(start), cfg.objective, tc);
  if (r.diverged) throw std::runtime_error("training diverged; no checkpoint written");
  r.policy.seed = cfg.seed;
  r.policy.extra = {{"config", cfg.to_json()}, {"init", init}, {"samples", data.size()}};
  write_atomically(ckpt, [&](const std::string& p) { save_policy(p, r.policy); });

  nlohmann::json report = r.report;
  report["checkpoint"] = ckpt.string();
  report["dataset"] = dataset;
  report["samples"] = data.size();
  report["config"] = cfg.to_json();
  write_json(ckpt.string() + ".report.json", report);
  const auto losses = epoch_losses(r.report);
  std::cout << "trained " << to_string(cfg.modality) << " policy on " << data.size() << " samples; final loss "
            << (losses.empty() ? 0.0 : losses.back()) << "; wrote " << ckpt.string() << "\n";
  return kOk;
}

// ---- build-library ----------------------------------------------------------------

int cmd_build_library(const Common& c, const std::vector<std::string>& checkpoints, const std::string& dataset) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = out_dir(c, cfg, "library");
  std::vector<PolicyBundle> policies;
  std::vector<std::string> ids;
  for (const auto& p : checkpoints) {
    policies.push_back(load_checkpoint_file(p));
    ids.push_back(fs::path(p).stem().string());
  }
  const tss::SegmentLibrary lib = config::build_policy_library(policies, ids, cfg);
  const nn::Index context_dim = policies[0].config.encoder.context_dim();

  nlohmann::json head_report = {{"trained", false}};
  tss::ScoringHead head = tss::ScoringHead::random(cfg.tss.head.hidden, context_dim, cfg.tss.head.seed);
  if (!dataset.empty()) {
    const auto data = load_dataset(dataset);
    if (data.empty()) throw util::DataError("dataset " + dataset + " contains no decision samples");
    auto hr = config::fit_selection_head(policies[0], lib, data, cfg);
    head = std::move(hr.head);
    head_report = hr.report;
    head_report["trained"] = true;
    head_report["dataset"] = dataset;
  }

  fs::create_directories(dir);
  tss::write_library(dir, lib);
  tss::save_head(config::head_path(dir).string(), head, {{"live", ids[0]}});
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [key, n] : lib.counts()) counts.push_back({{"source", ids[key.first]}, {"length", key.second}, {"count", n}});
  write_json(dir / "build_report.json", {{"segments", lib.size()},
                                         {"sources", ids},
                                         {"region", {lib.region_begin, lib.region_end}},
                                         {"counts", counts},
                                         {"head", head_report},
                                         {"config", cfg.to_json()}});
  std::cout << "library of " << lib.size() << " segments from " << ids.size() << " checkpoint(s) in " << dir.string()
            << "\n";
  return kOk;
}

// ---- infer ------------------------------------------------------------------------

int cmd_infer(const Common& c, const std::string& checkpoint, const std::string& library, bool no_tss,
              const std::string& method, std::optional<double> fixed_speed) {
  RunConfig cfg = resolve(c);
  cfg.terrain.seed = cfg.seed;
  const fs::path dir = out_dir(c, cfg, "infer");
  const sim::World world = sim::World::make(cfg.terrain, cfg.robot, cfg.gait, cfg.sensors);

  std::optional<PolicyBundle> live;
  std::optional<tss::SegmentLibrary> lib;
  std::optional<tss::ScoringHead> head;
  std::optional<tss::TssPolicy> tss_policy;
  std::vector<std::pair<double, tss::Selection>> selections;
  sim::Controller controller;
  std::string label = method;

  if (fixed_speed) {
    BaseCommand cmd;
    cmd.v_x = *fixed_speed;
    cmd.h = cfg.robot.nominal_height;
    controller = sim::fixed_command(cmd);
    if (label.empty()) label = "fixed";
  } else {
    if (checkpoint.empty()) throw ConfigError("infer needs --checkpoint unless --fixed-speed is given");
    live = load_checkpoint_file(checkpoint);
    const CartPolicy net = live->policy();
    if (no_tss) {
      controller = {[&, net](const sim::Decision& d) {
                      return net.act(live->params, view_for(*d.observation, live->modality), live->normalizer);
                    },
                    true};
      if (label.empty()) label = cfg.cart_label + "_no_tss";
    } else {
      if (library.empty()) throw ConfigError("infer needs --library unless --no-tss is given");
      if (!fs::is_directory(library)) throw util::DataError("library directory not found: " + library);
      lib = tss::read_library(library);
      if (lib->source_sizes.empty() || lib->source_sizes.front() != live->params.size()) {
        throw std::runtime_error("checkpoint " + checkpoint + " has " + std::to_string(live->params.size()) +
                                 " parameters; the library sources have " +
                                 (lib->source_sizes.empty() ? std::string("none")
                                                            : std::to_string(lib->source_sizes.front())));
      }
      head = tss::load_head(config::head_path(library).string());
      tss_policy.emplace(*live, *lib, *head);
      controller = {[&](const sim::Decision& d) {
                      tss::Selection sel;
                      const BaseCommand cmd = tss_policy->act(*d.observation, &sel);
                      selections.emplace_back(d.time, sel);
                      return cmd;
                    },
                    true};
      if (label.empty()) label = cfg.cart_label;
    }
  }

  const sim::RolloutTrace tr = sim::run_rollout(world, controller, cfg.goal, cfg.rollout, cfg.seed);
  fs::create_directories(dir);
  const nlohmann::json meta = {{"method", label},
                               {"terrain", cfg.terrain.to_json()},
                               {"goal", {cfg.goal.x(), cfg.goal.y()}},
                               {"seed", cfg.seed},
                               {"tss", !no_tss && !fixed_speed},
                               {"config", cfg.to_json()}};
  sim::write_trace(dir / "trace", tr, meta);
  const fs::path log = dir / "selections.csv";
  std::error_code ec;
  fs::remove(log, ec);
  if (lib) {
    std::ofstream os(log, std::ios::binary);
    os << "time,source_id,source,start,length,score\n";
    for (const auto& [t, s] : selections) {
      os << util::format_double(t) << ',' << s.source_id << ',' << lib->source_ids[static_cast<std::size_t>(s.source_id)]
         << ',' << s.start << ',' << s.length << ',' << util::format_double(s.score) << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + log.string());
  }
  std::cout << label << ": " << (tr.goal_reached ? "reached goal" : "did not reach goal") << " in " << tr.elapsed
            << " s, total RMS vibration " << sim::vibration_rms(tr).total << "; wrote " << (dir / "trace").string()
            << ".csv\n";
  return kOk;
}

// ---- bench-tss --------------------------------------------------------------------

int cmd_bench(const Common& c, std::size_t segments, int trials) {
  const RunConfig cfg = resolve(c);
  if (segments == 0) throw ConfigError("--segments must be >= 1");
  if (trials < 1) throw ConfigError("--trials must be >= 1");
  const tss::SegmentLibrary lib = tss::synthetic_library(segments, cfg.seed, cfg.tss.library);
  const tss::ScoringHead head =
      tss::ScoringHead::random(cfg.tss.head.hidden, cfg.policy.encoder.context_dim(), cfg.tss.head.seed);
  const tss::LatencyReport r = tss::benchmark_selection(lib, head, trials, cfg.seed);
  nlohmann::json j = r.to_json();
  j["context_dim"] = cfg.policy.encoder.context_dim();
  j["head_hidden"] = cfg.tss.head.hidden;
  j["config"] = cfg.to_json();
  if (c.out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_json(c.out, j);
    std::cout << "mean " << r.mean_ms << " ms, p95 " << r.p95_ms << " ms over " << trials << " trials on "
              << segments << " segments\n";
  }
  return kOk;
}

// ---- sweep-deltaq -----------------------------------------------------------------

int cmd_sweep(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = out_dir(c, cfg, "sweep");
  const auto rows = sim::deltaq_vibration_sweep(cfg.sweep, cfg.robot, cfg.gait);
  fs::create_directories(dir);
  sim::write_sweep_csv(dir / "sweep.csv", rows);
  metrics::write_text(dir / "sweep.svg", metrics::sweep_svg(rows));
  nlohmann::json trends = nlohmann::json::array();
  bool ok = true;
  for (const auto& t : metrics::sweep_trends(rows)) {
    trends.push_back({{"speed", t.speed}, {"spearman", t.spearman}, {"zero_is_minimum", t.zero_is_minimum}});
    ok = ok && t.spearman >= 0.9 && t.zero_is_minimum;
  }
  write_json(dir / "sweep_report.json", {{"rows", rows.size()}, {"trends", trends}, {"monotone", ok}, {"config", cfg.to_json()}});
  std::cout << rows.size() << " sweep rows; monotone trend " << (ok ? "holds" : "does not hold") << "; wrote "
            << (dir / "sweep.csv").string() << "\n";
  return kOk;
}

// ---- eval and plot ------------------------------------------------------------------

metrics::Evaluation evaluate_dir(const RunConfig& cfg, const std::string& traces) {
  if (!fs::is_directory(traces)) throw util::DataError("trace directory not found: " + traces);
  const auto loaded = metrics::load_traces(traces);
  if (loaded.empty()) throw util::DataError("no trace CSV files under " + traces);
  return metrics::evaluate(loaded, cfg.cart_label, cfg.pooling);
}

int cmd_eval(const Common& c, const std::string& traces) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = out_dir(c, cfg, "eval");
  const metrics::Evaluation ev = evaluate_dir(cfg, traces);
  metrics::write_evaluation(dir, ev);
  write_json(dir / "config.json", cfg.to_json());
  std::cout << metrics::performance_markdown(ev);
  return kOk;
}

int cmd_plot(const Common& c, const std::string& sweep_csv, const std::string& traces) {
  const RunConfig cfg = resolve(c);
  if (sweep_csv.empty() && traces.empty()) throw ConfigError("plot needs --sweep and/or --traces");
  const fs::path dir = out_dir(c, cfg, "plots");
  fs::create_directories(dir);
  if (!sweep_csv.empty()) {
    if (!fs::is_regular_file(sweep_csv)) throw util::DataError("sweep CSV not found: " + sweep_csv);
    metrics::write_text(dir / "sweep.svg", metrics::sweep_svg(sim::read_sweep_csv(sweep_csv)));
  }
  if (!traces.empty()) metrics::write_text(dir / "success.svg", metrics::success_svg(evaluate_dir(cfg, traces)));
  std::cout << "wrote plots to " << dir.string() << "\n";
  return kOk;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "INI run configuration");
  app->add_option("--seed", c.seed, "override the run seed");
  app->add_option("--out", c.out, "output path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CART: counterfactual training and trajectory segment selection for legged locomotion"};
  app.require_subcommand(1);

  Common common;
  std::string dataset, modality, init, checkpoint, library, method, sweep_csv, traces;
  std::vector<std::string> checkpoints;
  bool no_tss = false;
  std::optional<double> fixed_speed;
  std::size_t segments = 132775;
  int trials = 100;

  auto* collect = app.add_subcommand("collect", "simulate exploratory runs and write run logs");
  add_common(collect, common);

  auto* train = app.add_subcommand("train", "train a policy on logged runs");
  add_common(train, common);
  train->add_option("--dataset", dataset, "run log directory")->required();
  train->add_option("--modality", modality, "full or proprio-only");
  train->add_option("--init", init, "checkpoint to fine-tune from");

  auto* build = app.add_subcommand("build-library", "build the segment library and scoring head");
  add_common(build, common);
  build->add_option("checkpoints", checkpoints, "source checkpoints; the first is the live policy")->required();
  build->add_option("--dataset", dataset, "run logs for scoring-head training");

  auto* infer = app.add_subcommand("infer", "roll out a policy and write its trace");
  add_common(infer, common);
  infer->add_option("--checkpoint", checkpoint, "live policy checkpoint");
  infer->add_option("--library", library, "library directory from build-library");
  infer->add_flag("--no-tss", no_tss, "run the policy without segment selection");
  infer->add_option("--method", method, "method label stored with the trace");
  infer->add_option("--fixed-speed", fixed_speed, "run a fixed-command baseline at this forward speed");

  auto* bench = app.add_subcommand("bench-tss", "time scoring and argmax over a synthetic library");
  add_common(bench, common);
  bench->add_option("--segments", segments, "library size");
  bench->add_option("--trials", trials, "number of timed selections");

  auto* sweep = app.add_subcommand("sweep-deltaq", "vibration over the speed x slip grid");
  add_common(sweep, common);

  auto* eval = app.add_subcommand("eval", "performance and stability tables from traces");
  add_common(eval, common);
  eval->add_option("traces", traces, "directory of trace CSV files")->required();

  auto* plot = app.add_subcommand("plot", "SVG plots of a sweep and of success rates");
  add_common(plot, common);
  plot->add_option("--sweep", sweep_csv, "sweep CSV");
  plot->add_option("--traces", traces, "directory of trace CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*collect) return cmd_collect(common);
    if (*train) return cmd_train(common, dataset, modality, init);
    if (*build) return cmd_build_library(common, checkpoints, dataset);
    if (*infer) return cmd_infer(common, checkpoint, library, no_tss, method, fixed_speed);
    if (*bench) return cmd_bench(common, segments, trials);
    if (*sweep) return cmd_sweep(common);
    if (*eval) return cmd_eval(common, traces);
    if (*plot) return cmd_plot(common, sweep_csv, traces);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const util::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kRuntimeError;
}
