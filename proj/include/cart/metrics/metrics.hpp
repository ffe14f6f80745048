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

// Trace metrics: jerk, distance, time to goal, orientation statistics,
// success rate, average improvement and rank correlation.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cart/sim/rollout.hpp"

namespace cart::metrics {

using sim::RolloutTrace;

// Mean norm of the third central difference of base position over dt^3.
// The stencil x[k+2] - 3x[k+1] + 3x[k] - x[k-1] is centered half a step
// after k, so four samples give one estimate.
inline double mean_jerk(const RolloutTrace& tr) {
  const auto& p = tr.base_position;
  if (p.size() < 4) throw std::invalid_argument("mean_jerk: need at least 4 samples, got " + std::to_string(p.size()));
  if (!(tr.dt > 0.0)) throw std::invalid_argument("mean_jerk: dt must be > 0");
  const double inv = 1.0 / (tr.dt * tr.dt * tr.dt);
  double sum = 0.0;
  for (std::size_t k = 1; k + 2 < p.size(); ++k) {
    sum += ((p[k + 2] - p[k - 1]) - 3.0 * (p[k + 1] - p[k])).norm() * inv;
  }
  return sum / static_cast<double>(p.size() - 3);
}

// Arc length of the base path over [0, window] (linear interpolation at the
// window end).
inline double distance_within(const RolloutTrace& tr, double window) {
  if (!(window >= 0.0)) throw std::invalid_argument("distance_within: window must be >= 0");
  if (tr.time.empty() || tr.time.back() + 1e-9 < window) {
    throw std::invalid_argument("distance_within: trace lasts " +
                                std::to_string(tr.time.empty() ? 0.0 : tr.time.back()) + " s, shorter than " +
                                std::to_string(window) + " s");
  }
  double d = 0.0;
  for (std::size_t k = 1; k < tr.size(); ++k) {
    if (tr.time[k - 1] >= window) break;
    const auto step = tr.base_position[k] - tr.base_position[k - 1];
    const double span = tr.time[k] - tr.time[k - 1];
    const double frac = tr.time[k] <= window ? 1.0 : (window - tr.time[k - 1]) / span;
    d += frac * step.norm();
  }
  return d;
}

inline std::optional<double> time_to_goal(const RolloutTrace& tr) {
  if (!tr.goal_reached) return std::nullopt;
  return tr.elapsed;
}

struct PerformanceReport {
  double mean_jerk = 0.0;
  std::optional<double> time_to_goal;
  std::optional<double> distance_10s;  // absent when the trace is shorter than 10 s
  bool success = false;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"mean_jerk", mean_jerk}, {"success", success}};
    j["time_to_goal"] = time_to_goal ? nlohmann::json(*time_to_goal) : nlohmann::json(nullptr);
    j["distance_10s"] = distance_10s ? nlohmann::json(*distance_10s) : nlohmann::json(nullptr);
    return j;
  }
};

inline PerformanceReport performance_report(const RolloutTrace& tr, double window = 10.0) {
  PerformanceReport r;
  r.mean_jerk = mean_jerk(tr);
  r.time_to_goal = time_to_goal(tr);
  if (!tr.time.empty() && tr.time.back() + 1e-9 >= window) r.distance_10s = distance_within(tr, window);
  r.success = tr.goal_reached;
  return r;
}

// ---- orientation statistics -------------------------------------------------------

enum class Pooling { concatenate, mean_of_runs };

struct AxisStats {
  double mean_abs_angle = 0.0;  // rad
  double angle_variance = 0.0;  // rad^2, signed de-meaned signal
  double mean_abs_rate = 0.0;   // rad/s
  double rate_variance = 0.0;   // (rad/s)^2
};

struct StabilityReport {
  std::array<AxisStats, 3> axes{};  // roll, pitch, yaw
  std::size_t traces = 0;
  std::size_t samples = 0;
  Pooling pooling = Pooling::concatenate;

  static constexpr const char* kEquilibriumRule =
      "roll about 0; pitch about the per-trace mean pitch (terrain offset); yaw about the initial heading";

  const AxisStats& roll() const { return axes[0]; }
  const AxisStats& pitch() const { return axes[1]; }
  const AxisStats& yaw() const { return axes[2]; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    const char* names[3] = {"roll", "pitch", "yaw"};
    for (int a = 0; a < 3; ++a) {
      const auto& s = axes[static_cast<std::size_t>(a)];
      j[names[a]] = {{"mean_abs_angle", s.mean_abs_angle},
                     {"angle_variance", s.angle_variance},
                     {"mean_abs_rate", s.mean_abs_rate},
                     {"rate_variance", s.rate_variance}};
    }
    j["traces"] = traces;
    j["samples"] = samples;
    j["pooling"] = pooling == Pooling::concatenate ? "concatenate" : "mean_of_runs";
    j["equilibrium"] = kEquilibriumRule;
    j["variance"] = "population variance of the signed, de-meaned signal";
    return j;
  }
};

namespace detail {

struct Moments {
  double n = 0.0, sum_abs = 0.0, sum = 0.0, sum_sq = 0.0;

  void add(double x) {
    n += 1.0;
    sum_abs += std::abs(x);
    sum += x;
    sum_sq += x * x;
  }
  double mean_abs() const { return n > 0.0 ? sum_abs / n : 0.0; }
  double variance() const {
    if (n == 0.0) return 0.0;
    const double m = sum / n;
    return std::max(0.0, sum_sq / n - m * m);
  }
};

// Angles about their equilibrium: roll about 0, pitch about its trace mean,
// yaw about the first sample.
inline std::array<double, 3> equilibrium(const RolloutTrace& tr) {
  std::array<double, 3> eq{0.0, 0.0, 0.0};
  if (tr.base_orientation.empty()) return eq;
  double pitch = 0.0;
  for (const auto& o : tr.base_orientation) pitch += o.y();
  eq[1] = pitch / static_cast<double>(tr.base_orientation.size());
  eq[2] = tr.base_orientation.front().z();
  return eq;
}

inline std::array<AxisStats, 3> stats_of(const std::array<Moments, 3>& ang, const std::array<Moments, 3>& rate) {
  std::array<AxisStats, 3> out{};
  for (std::size_t a = 0; a < 3; ++a) {
    out[a] = {ang[a].mean_abs(), ang[a].variance(), rate[a].mean_abs(), rate[a].variance()};
  }
  return out;
}

inline void accumulate(const RolloutTrace& tr, std::array<Moments, 3>& ang, std::array<Moments, 3>& rate) {
  const auto eq = equilibrium(tr);
  for (std::size_t t = 0; t < tr.base_orientation.size(); ++t) {
    for (int a = 0; a < 3; ++a) {
      const auto ai = static_cast<std::size_t>(a);
      ang[ai].add(tr.base_orientation[t](a) - eq[ai]);
      rate[ai].add(tr.orientation_rates[t](a));
    }
  }
}

}  // namespace detail

inline StabilityReport stability_report(std::span<const RolloutTrace> traces, Pooling pooling = Pooling::concatenate) {
  if (traces.empty()) throw std::invalid_argument("stability_report: no traces");
  StabilityReport r;
  r.traces = traces.size();
  r.pooling = pooling;
  for (const auto& tr : traces) {
    if (tr.orientation_rates.size() != tr.base_orientation.size()) {
      throw std::invalid_argument("stability_report: orientation and rate series differ in length");
    }
    r.samples += tr.base_orientation.size();
  }
  if (pooling == Pooling::concatenate) {
    std::array<detail::Moments, 3> ang{}, rate{};
    for (const auto& tr : traces) detail::accumulate(tr, ang, rate);
    r.axes = detail::stats_of(ang, rate);
    return r;
  }
  for (const auto& tr : traces) {
    std::array<detail::Moments, 3> ang{}, rate{};
    detail::accumulate(tr, ang, rate);
    const auto s = detail::stats_of(ang, rate);
    const double w = 1.0 / static_cast<double>(traces.size());
    for (std::size_t a = 0; a < 3; ++a) {
      r.axes[a].mean_abs_angle += w * s[a].mean_abs_angle;
      r.axes[a].angle_variance += w * s[a].angle_variance;
      r.axes[a].mean_abs_rate += w * s[a].mean_abs_rate;
      r.axes[a].rate_variance += w * s[a].rate_variance;
    }
  }
  return r;
}

inline StabilityReport stability_report(const RolloutTrace& tr) {
  return stability_report(std::span<const RolloutTrace>(&tr, 1));
}

// ---- aggregates -----------------------------------------------------------------

inline double success_rate(std::span<const RolloutTrace> traces) {
  if (traces.empty()) throw std::invalid_argument("success_rate: no traces");
  const auto n = std::count_if(traces.begin(), traces.end(), [](const RolloutTrace& t) { return t.goal_reached; });
  return static_cast<double>(n) / static_cast<double>(traces.size());
}

// Mean relative reduction of CART against each baseline, in percent.
inline double avg_improvement(std::span<const double> baseline_means, double cart_mean) {
  if (baseline_means.empty()) throw std::invalid_argument("avg_improvement: no baselines");
  double sum = 0.0;
  for (double b : baseline_means) {
    if (b == 0.0) throw std::invalid_argument("avg_improvement: baseline mean is zero");
    sum += (b - cart_mean) / b;
  }
  return 100.0 * sum / static_cast<double>(baseline_means.size());
}

inline double mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("mean: empty input");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Ranks starting at 1; tied values share their average rank.
inline std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("correlation: need two equal series of length >= 2");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("correlation: constant series");
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = ranks(a), rb = ranks(b);
  return pearson(ra, rb);
}

// Per-speed Spearman correlation between the Δq grid and total RMS vibration,
// plus whether Δq = 0 is that speed's minimum.
struct SweepTrend {
  double speed = 0.0;
  double spearman = 0.0;
  bool zero_is_minimum = false;
};

inline std::vector<SweepTrend> sweep_trends(const std::vector<sim::SweepRow>& rows) {
  std::vector<double> speeds;
  for (const auto& r : rows) {
    if (std::find(speeds.begin(), speeds.end(), r.speed) == speeds.end()) speeds.push_back(r.speed);
  }
  std::vector<SweepTrend> out;
  for (double v : speeds) {
    std::vector<double> dq, vib;
    double zero = std::nan(""), lowest = INFINITY;
    for (const auto& r : rows) {
      if (r.speed != v) continue;
      dq.push_back(r.deltaq);
      vib.push_back(r.rms_total);
      if (r.deltaq == 0.0) zero = r.rms_total;
      lowest = std::min(lowest, r.rms_total);
    }
    out.push_back({v, spearman(dq, vib), zero == lowest});
  }
  return out;
}

}  // namespace cart::metrics
