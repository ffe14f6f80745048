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

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "cart/metrics/metrics.hpp"
#include "cart/metrics/report.hpp"

namespace cart::metrics {
namespace {

namespace fs = std::filesystem;
using sim::Vec3;

using PathFn = std::function<Vec3(double)>;

// Samples t = 0, dt, ..., duration (inclusive) with finite-differenced rates.
RolloutTrace make_trace(const PathFn& pos, double duration, double dt = 0.01, const PathFn& orient = {}) {
  RolloutTrace tr;
  tr.dt = dt;
  const auto n = static_cast<std::size_t>(std::llround(duration / dt)) + 1;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = dt * static_cast<double>(k);
    tr.time.push_back(t);
    tr.base_position.push_back(pos(t));
    tr.base_orientation.push_back(orient ? orient(t) : Vec3::Zero());
    tr.commands.push_back({});
    tr.proprio.push_back({});
  }
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = k == 0 ? 0 : k - 1, b = k + 1 == n ? k : k + 1;
    tr.orientation_rates.push_back((tr.base_orientation[b] - tr.base_orientation[a]) / (tr.time[b] - tr.time[a]));
  }
  tr.elapsed = tr.time.back();
  return tr;
}

// ---- jerk ----

TEST(MeanJerk, ConstantVelocityAndAccelerationAreZero) {
  const auto line = make_trace([](double t) { return Vec3(0.5 * t, -0.2 * t, 0.5); }, 10.0);
  EXPECT_NEAR(mean_jerk(line), 0.0, 1e-6);
  const auto accel = make_trace([](double t) { return Vec3(0.3 * t * t, 0.0, 0.1 * t); }, 10.0);
  EXPECT_NEAR(mean_jerk(accel), 0.0, 1e-4);
}

TEST(MeanJerk, SineOverWholeHalfPeriodsIsTwoOverPi) {
  // Over an integer number of half periods the mean of |cos t| is exactly 2/pi.
  const double duration = std::round(10.0 * std::numbers::pi * 100.0) / 100.0;
  const auto tr = make_trace([](double t) { return Vec3(std::sin(t), 0.0, 0.0); }, duration);
  EXPECT_LT(std::abs(mean_jerk(tr) - 2.0 / std::numbers::pi) / (2.0 / std::numbers::pi), 0.01);
}

TEST(MeanJerk, SineOverTenSecondsMatchesItsExactMean) {
  // Mean of |cos t| over [0, 10] is (6 - sin 10) / 10.
  const auto tr = make_trace([](double t) { return Vec3(std::sin(t), 0.0, 0.0); }, 10.0);
  const double exact = (6.0 - std::sin(10.0)) / 10.0;
  EXPECT_LT(std::abs(mean_jerk(tr) - exact) / exact, 0.01);
}

TEST(MeanJerk, TranslationAndTimeReversalInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.01);
  RolloutTrace tr = make_trace([](double t) { return Vec3(t, std::sin(3 * t), 0.4); }, 3.0);
  for (auto& p : tr.base_position) p += Vec3(g(rng), g(rng), g(rng));
  const double j = mean_jerk(tr);
  RolloutTrace moved = tr;
  for (auto& p : moved.base_position) p += Vec3(12.0, -4.0, 1.0);
  EXPECT_NEAR(mean_jerk(moved), j, 1e-9 * j);
  RolloutTrace rev = tr;
  std::reverse(rev.base_position.begin(), rev.base_position.end());
  EXPECT_NEAR(mean_jerk(rev), j, 1e-9 * j);
}

TEST(MeanJerk, RejectsShortTraces) {
  RolloutTrace tr = make_trace([](double t) { return Vec3(t, 0, 0); }, 0.02);
  ASSERT_EQ(tr.size(), 3u);
  EXPECT_THROW(mean_jerk(tr), std::invalid_argument);
  tr = make_trace([](double t) { return Vec3(t, 0, 0); }, 0.03);
  EXPECT_NO_THROW(mean_jerk(tr));
}

// ---- distance ----

TEST(DistanceWithin, Examples) {
  EXPECT_NEAR(distance_within(make_trace([](double t) { return Vec3(0.5 * t, 0, 0); }, 12.0), 10.0), 5.0, 1e-9);
  EXPECT_EQ(distance_within(make_trace([](double) { return Vec3(1, 2, 0.5); }, 11.0), 10.0), 0.0);
  const auto circle = make_trace([](double t) { return Vec3(std::cos(t), std::sin(t), 0.5); }, 10.0);
  EXPECT_LT(std::abs(distance_within(circle, 10.0) - 10.0) / 10.0, 0.005);
}

TEST(DistanceWithin, InterpolatesInsideAStep) {
  const auto tr = make_trace([](double t) { return Vec3(t, 0, 0); }, 2.0, 0.5);
  EXPECT_NEAR(distance_within(tr, 1.2), 1.2, 1e-12);
}

TEST(DistanceWithin, RejectsShortTrace) {
  EXPECT_THROW(distance_within(make_trace([](double t) { return Vec3(t, 0, 0); }, 5.0), 10.0), std::invalid_argument);
}

TEST(Performance, ReportFields) {
  RolloutTrace tr = make_trace([](double t) { return Vec3(t, 0, 0); }, 12.0);
  tr.goal_reached = true;
  tr.elapsed = 11.5;
  const PerformanceReport r = performance_report(tr);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.time_to_goal.value(), 11.5);
  EXPECT_NEAR(r.distance_10s.value(), 10.0, 1e-9);
  EXPECT_GE(r.mean_jerk, 0.0);
  tr.goal_reached = false;
  EXPECT_FALSE(performance_report(tr).time_to_goal.has_value());
  EXPECT_FALSE(performance_report(make_trace([](double t) { return Vec3(t, 0, 0); }, 4.0)).distance_10s.has_value());
}

// ---- stability ----

TEST(Stability, ZeroTraceIsAllZero) {
  const auto tr = make_trace([](double) { return Vec3::Zero(); }, 5.0);
  const StabilityReport r = stability_report(tr);
  for (const auto& a : r.axes) {
    EXPECT_EQ(a.mean_abs_angle, 0.0);
    EXPECT_EQ(a.angle_variance, 0.0);
    EXPECT_EQ(a.mean_abs_rate, 0.0);
    EXPECT_EQ(a.rate_variance, 0.0);
  }
}

TEST(Stability, ConstantRoll) {
  const auto tr = make_trace([](double) { return Vec3::Zero(); }, 5.0, 0.01, [](double) { return Vec3(0.1, 0, 0); });
  const StabilityReport r = stability_report(tr);
  EXPECT_NEAR(r.roll().mean_abs_angle, 0.1, 1e-15);
  EXPECT_NEAR(r.roll().angle_variance, 0.0, 1e-15);
  EXPECT_EQ(r.roll().mean_abs_rate, 0.0);
}

TEST(Stability, SinusoidalRoll) {
  const auto tr = make_trace([](double) { return Vec3::Zero(); }, 10.0, 0.01,
                             [](double t) { return Vec3(0.1 * std::sin(2 * std::numbers::pi * t), 0, 0); });
  const StabilityReport r = stability_report(tr);
  const double expected = 0.2 / std::numbers::pi;
  EXPECT_LT(std::abs(r.roll().mean_abs_angle - expected) / expected, 0.01);
  EXPECT_NEAR(r.roll().angle_variance, 0.005, 1e-4);  // A^2 / 2
  const double rate = 0.1 * 2 * std::numbers::pi * 2 / std::numbers::pi;  // mean |A w cos|
  EXPECT_LT(std::abs(r.roll().mean_abs_rate - rate) / rate, 0.01);
}

TEST(Stability, PitchOffsetAndHeadingAreRemoved) {
  const auto tr = make_trace([](double) { return Vec3::Zero(); }, 5.0, 0.01,
                             [](double t) { return Vec3(0.0, 0.2 + 0.01 * std::sin(6 * t), 1.3); });
  const StabilityReport r = stability_report(tr);
  EXPECT_LT(r.pitch().mean_abs_angle, 0.011);
  EXPECT_EQ(r.yaw().mean_abs_angle, 0.0);
  EXPECT_NE(r.to_json().at("equilibrium").get<std::string>().find("pitch"), std::string::npos);
}

TEST(Stability, ConcatenatingIdenticalTracesChangesNothing) {
  const auto tr = make_trace([](double) { return Vec3::Zero(); }, 4.0, 0.01, [](double t) {
    return Vec3(0.05 * std::sin(3 * t), 0.1 + 0.02 * std::cos(5 * t), 0.3 * std::sin(t));
  });
  const StabilityReport one = stability_report(tr);
  const std::vector<RolloutTrace> three = {tr, tr, tr};
  for (Pooling p : {Pooling::concatenate, Pooling::mean_of_runs}) {
    const StabilityReport r = stability_report(three, p);
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_NEAR(r.axes[a].mean_abs_angle, one.axes[a].mean_abs_angle, 1e-12);
      EXPECT_NEAR(r.axes[a].angle_variance, one.axes[a].angle_variance, 1e-12);
      EXPECT_NEAR(r.axes[a].mean_abs_rate, one.axes[a].mean_abs_rate, 1e-12);
      EXPECT_NEAR(r.axes[a].rate_variance, one.axes[a].rate_variance, 1e-12);
    }
  }
}

TEST(Stability, PoolingRulesDiffer) {
  const auto a = make_trace([](double) { return Vec3::Zero(); }, 1.0, 0.01, [](double) { return Vec3(0.1, 0, 0); });
  const auto b = make_trace([](double) { return Vec3::Zero(); }, 3.0, 0.01, [](double) { return Vec3(0.3, 0, 0); });
  const std::vector<RolloutTrace> both = {a, b};
  EXPECT_NEAR(stability_report(both, Pooling::mean_of_runs).roll().mean_abs_angle, 0.2, 1e-12);
  EXPECT_NEAR(stability_report(both, Pooling::concatenate).roll().mean_abs_angle, (0.1 * 101 + 0.3 * 301) / 402.0, 1e-12);
  EXPECT_EQ(stability_report(both, Pooling::mean_of_runs).to_json().at("pooling"), "mean_of_runs");
}

TEST(Stability, FiniteOnRandomTraces) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    auto tr = make_trace([&](double) { return Vec3(g(rng), g(rng), g(rng)); }, 1.0, 0.01,
                         [&](double) { return Vec3(g(rng), g(rng), g(rng)); });
    const auto r = stability_report(tr);
    for (const auto& a : r.axes) {
      EXPECT_TRUE(std::isfinite(a.mean_abs_angle) && std::isfinite(a.angle_variance) &&
                  std::isfinite(a.mean_abs_rate) && std::isfinite(a.rate_variance));
      EXPECT_GE(a.angle_variance, 0.0);
      EXPECT_GE(a.rate_variance, 0.0);
    }
    EXPECT_TRUE(std::isfinite(mean_jerk(tr)));
  }
}

// ---- aggregates ----

TEST(SuccessRate, Counts) {
  std::vector<RolloutTrace> runs(100, make_trace([](double t) { return Vec3(t, 0, 0); }, 0.1));
  EXPECT_EQ(success_rate(runs), 0.0);
  std::mt19937_64 rng(5);
  std::vector<std::size_t> idx(100);
  std::iota(idx.begin(), idx.end(), 0u);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (int k = 0; k < 73; ++k) runs[idx[static_cast<std::size_t>(k)]].goal_reached = true;
  int recount = 0;
  for (const auto& r : runs) recount += r.goal_reached ? 1 : 0;
  EXPECT_EQ(success_rate(runs), recount / 100.0);
  EXPECT_EQ(success_rate(runs), 0.73);
  for (auto& r : runs) r.goal_reached = true;
  EXPECT_EQ(success_rate(runs), 1.0);
  EXPECT_THROW(success_rate(std::vector<RolloutTrace>{}), std::invalid_argument);
}

TEST(AvgImprovement, Examples) {
  const std::vector<double> table = {180.3, 201.2, 73.3};
  const double expected = 100.0 / 3.0 * ((180.3 - 45.5) / 180.3 + (201.2 - 45.5) / 201.2 + (73.3 - 45.5) / 73.3);
  EXPECT_NEAR(avg_improvement(table, 45.5), expected, 1e-12);
  EXPECT_NEAR(avg_improvement(table, 45.5), 63.4, 0.1);
  EXPECT_EQ(avg_improvement(std::vector<double>{100.0}, 50.0), 50.0);
  EXPECT_EQ(avg_improvement(std::vector<double>{3.0, 3.0}, 3.0), 0.0);
  EXPECT_THROW(avg_improvement(std::vector<double>{1.0, 0.0}, 1.0), std::invalid_argument);
  EXPECT_THROW(avg_improvement(std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST(AvgImprovement, ScaleInvariant) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(1.0, 100.0);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> b = {u(rng), u(rng), u(rng)};
    const double c = u(rng), k = u(rng);
    std::vector<double> bk = b;
    for (double& x : bk) x *= k;
    EXPECT_NEAR(avg_improvement(bk, c * k), avg_improvement(b, c), 1e-9);
  }
}

TEST(Spearman, Examples) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  EXPECT_NEAR(spearman(x, std::vector<double>{2, 4, 9, 10, 30}), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-15);
  // Classic textbook case: d^2 sum = 2 over n = 5 -> 1 - 6*2/(5*24) = 0.9.
  EXPECT_NEAR(spearman(x, std::vector<double>{1, 3, 2, 4, 5}), 0.9, 1e-12);
  EXPECT_EQ(ranks(std::vector<double>{3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_THROW(spearman(x, std::vector<double>{1, 1, 1, 1, 1}), std::invalid_argument);
}

TEST(SweepTrends, PerSpeedCorrelation) {
  std::vector<sim::SweepRow> rows;
  for (double v : {0.2, 0.4}) {
    for (double dq : {0.0, 0.01, 0.02}) {
      sim::SweepRow r;
      r.speed = v;
      r.deltaq = dq;
      r.rms_total = v == 0.2 ? 1.0 + dq : 1.0 - dq;
      rows.push_back(r);
    }
  }
  const auto t = sweep_trends(rows);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_NEAR(t[0].spearman, 1.0, 1e-12);
  EXPECT_TRUE(t[0].zero_is_minimum);
  EXPECT_NEAR(t[1].spearman, -1.0, 1e-12);
  EXPECT_FALSE(t[1].zero_is_minimum);
}

// ---- evaluation output ----

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cart_metrics_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Evaluation, StationaryTraceGivesZeroStabilityRows) {
  const fs::path dir = scratch("stationary");
  const auto tr = make_trace([](double) { return Vec3(0, 0, 0.5); }, 12.0);
  sim::write_trace(dir / "run", tr, {{"method", "cart"}, {"terrain", "flat"}});
  const auto traces = load_traces(dir);
  ASSERT_EQ(traces.size(), 1u);
  const Evaluation ev = evaluate(traces);
  ASSERT_EQ(ev.stability.size(), 1u);
  for (const auto& a : ev.stability[0].report.axes) {
    EXPECT_EQ(a.mean_abs_angle, 0.0);
    EXPECT_EQ(a.angle_variance, 0.0);
    EXPECT_EQ(a.mean_abs_rate, 0.0);
  }
  EXPECT_TRUE(ev.improvements.empty());
  fs::remove_all(dir);
}

TEST(Evaluation, ImprovementRowsAgainstBaselines) {
  const fs::path dir = scratch("labeled");
  for (int i = 0; i < 2; ++i) {
    RolloutTrace c = make_trace([](double t) { return Vec3(t, 0.01 * std::sin(2 * t), 0.5); }, 12.0, 0.01,
                                [](double t) { return Vec3(0.01 * std::sin(t), 0, 0); });
    c.goal_reached = true;
    sim::write_trace(dir / ("cart_" + std::to_string(i)), c, {{"method", "cart"}, {"terrain", "rough"}});
    RolloutTrace b = make_trace([](double t) { return Vec3(t, 0.05 * std::sin(4 * t), 0.5); }, 12.0, 0.01,
                                [](double t) { return Vec3(0.05 * std::sin(3 * t), 0, 0); });
    b.goal_reached = i == 0;
    sim::write_trace(dir / ("base_" + std::to_string(i)), b, {{"method", "fixed"}, {"terrain", "rough"}});
  }
  const Evaluation ev = evaluate(load_traces(dir));
  ASSERT_EQ(ev.methods.size(), 2u);
  EXPECT_EQ(ev.methods[0].method, "cart");
  EXPECT_EQ(ev.methods[0].success_rate, 1.0);
  EXPECT_EQ(ev.methods[1].success_rate, 0.5);
  std::map<std::string, double> imp;
  for (const auto& r : ev.improvements) imp[r.metric] = r.percent;
  ASSERT_TRUE(imp.count("mean_jerk"));
  EXPECT_GT(imp["mean_jerk"], 0.0);
  EXPECT_GT(imp["rms_vibration"], 0.0);
  EXPECT_NEAR(imp["mean_jerk"], avg_improvement(std::vector<double>{ev.methods[1].mean_jerk}, ev.methods[0].mean_jerk), 1e-12);

  const fs::path out = dir / "report";
  write_evaluation(out, ev);
  for (const char* f : {"performance.md", "performance.csv", "angles.md", "rates.md", "stability.csv", "summary.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  std::ifstream is(out / "summary.json");
  const auto j = nlohmann::json::parse(is);
  EXPECT_EQ(j.at("methods").at("fixed").at("runs"), 2);
  // Report files are not traces and are ignored on reload.
  EXPECT_EQ(load_traces(dir).size(), 4u);
  fs::remove_all(dir);
}

TEST(Evaluation, MixedTimestepsAreRejected) {
  const fs::path dir = scratch("mixed");
  sim::write_trace(dir / "a", make_trace([](double t) { return Vec3(t, 0, 0); }, 1.0, 0.01));
  sim::write_trace(dir / "b", make_trace([](double t) { return Vec3(t, 0, 0); }, 1.0, 0.02));
  EXPECT_THROW(load_traces(dir), util::DataError);
  fs::remove_all(dir);
}

TEST(Plots, SvgIsWellFormedAndDeterministic) {
  std::vector<sim::SweepRow> rows;
  for (double v : {0.2, 0.4})
    for (double dq : {0.0, 0.025, 0.05}) {
      sim::SweepRow r;
      r.speed = v;
      r.deltaq = dq;
      r.rms_total = 0.1 + dq * v;
      rows.push_back(r);
    }
  const std::string a = sweep_svg(rows), b = sweep_svg(rows);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rfind("<svg", 0), 0u);
  EXPECT_NE(a.find("</svg>"), std::string::npos);
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n') > 10, true);
  EXPECT_NE(a.find("v = 0.40 m/s"), std::string::npos);
  const std::string bars = bar_plot_svg({"cart", "fixed <h>"}, {0.9, 0.6}, "Success", "rate");
  EXPECT_NE(bars.find("fixed &lt;h&gt;"), std::string::npos);
  EXPECT_THROW(bar_plot_svg({"a"}, {0.1, 0.2}, "", ""), std::invalid_argument);
}

}  // namespace
}  // namespace cart::metrics
