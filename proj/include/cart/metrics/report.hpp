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

// Evaluation over labeled trace files: performance and stability tables in
// Markdown/CSV, a JSON summary, and SVG plots.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cart/metrics/metrics.hpp"
#include "cart/util/csv.hpp"

namespace cart::metrics {

struct LabeledTrace {
  std::string method = "unlabeled";
  std::string terrain = "unknown";
  std::string path;
  RolloutTrace trace;
};

// Every <stem>.csv trace below `dir`, labeled from the "method" and "terrain"
// fields of its <stem>.json sidecar. All traces must share one timestep.
inline std::vector<LabeledTrace> load_traces(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw util::DataError("trace directory does not exist: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    std::ifstream is(e.path());
    std::string first;
    std::getline(is, first);
    if (!first.empty() && first.back() == '\r') first.pop_back();
    std::string expected;
    for (const auto& h : sim::trace_header()) expected += (expected.empty() ? "" : ",") + h;
    if (first == expected) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw util::DataError(dir.string() + ": no trace files");
  std::vector<LabeledTrace> out;
  for (const auto& f : files) {
    LabeledTrace lt;
    nlohmann::json meta;
    lt.trace = sim::read_trace(f, &meta);
    lt.method = meta.value("method", lt.method);
    if (meta.contains("terrain")) {
      const auto& t = meta["terrain"];
      if (t.is_string()) lt.terrain = t.get<std::string>();
      else if (t.is_object() && t.contains("kind")) lt.terrain = t["kind"].get<std::string>();
    }
    lt.path = f.string();
    if (!out.empty() && std::abs(lt.trace.dt - out.front().trace.dt) > 1e-12) {
      throw util::DataError(f.string() + ": timestep " + util::format_double(lt.trace.dt) + " differs from " +
                            util::format_double(out.front().trace.dt) + " in " + out.front().path);
    }
    out.push_back(std::move(lt));
  }
  return out;
}

struct MethodSummary {
  std::string method;
  std::size_t runs = 0;
  double mean_jerk = 0.0;
  std::optional<double> time_to_goal;  // mean over successful runs
  std::optional<double> distance_10s;  // mean over runs lasting >= 10 s
  double success_rate = 0.0;
  double rms_vibration = 0.0;  // mean total RMS orientation rate
};

struct StabilityRow {
  std::string terrain;
  std::string method;
  StabilityReport report;
};

struct ImprovementRow {
  std::string metric;
  double percent = 0.0;
  std::vector<std::string> baselines;
};

struct Evaluation {
  std::vector<MethodSummary> methods;
  std::vector<StabilityRow> stability;
  std::vector<ImprovementRow> improvements;
  std::string cart_label;
  Pooling pooling = Pooling::concatenate;
};

inline Evaluation evaluate(const std::vector<LabeledTrace>& traces, const std::string& cart_label = "cart",
                           Pooling pooling = Pooling::concatenate) {
  if (traces.empty()) throw std::invalid_argument("evaluate: no traces");
  Evaluation ev;
  ev.cart_label = cart_label;
  ev.pooling = pooling;
  std::map<std::string, std::vector<const LabeledTrace*>> by_method;
  std::map<std::pair<std::string, std::string>, std::vector<RolloutTrace>> by_cell;
  for (const auto& t : traces) {
    by_method[t.method].push_back(&t);
    by_cell[{t.terrain, t.method}].push_back(t.trace);
  }
  for (const auto& [method, list] : by_method) {
    MethodSummary s;
    s.method = method;
    s.runs = list.size();
    std::vector<double> jerk, ttg, dist, vib;
    std::vector<RolloutTrace> plain;
    for (const auto* t : list) {
      const PerformanceReport p = performance_report(t->trace);
      jerk.push_back(p.mean_jerk);
      if (p.time_to_goal) ttg.push_back(*p.time_to_goal);
      if (p.distance_10s) dist.push_back(*p.distance_10s);
      vib.push_back(sim::vibration_rms(t->trace).total);
      plain.push_back(t->trace);
    }
    s.mean_jerk = mean(jerk);
    if (!ttg.empty()) s.time_to_goal = mean(ttg);
    if (!dist.empty()) s.distance_10s = mean(dist);
    s.success_rate = success_rate(plain);
    s.rms_vibration = mean(vib);
    ev.methods.push_back(s);
  }
  for (const auto& [key, list] : by_cell) ev.stability.push_back({key.first, key.second, stability_report(list, pooling)});

  const auto cart = std::find_if(ev.methods.begin(), ev.methods.end(),
                                 [&](const MethodSummary& m) { return m.method == cart_label; });
  if (cart != ev.methods.end() && ev.methods.size() > 1) {
    auto add = [&](const std::string& name, auto get) {
      std::vector<double> base;
      std::vector<std::string> labels;
      for (const auto& m : ev.methods) {
        const std::optional<double> v = get(m);
        if (m.method == cart_label || !v || *v == 0.0) continue;
        base.push_back(*v);
        labels.push_back(m.method);
      }
      const std::optional<double> c = get(*cart);
      if (!base.empty() && c) ev.improvements.push_back({name, avg_improvement(base, *c), labels});
    };
    add("mean_jerk", [](const MethodSummary& m) { return std::optional<double>(m.mean_jerk); });
    add("time_to_goal", [](const MethodSummary& m) { return m.time_to_goal; });
    add("distance_10s", [](const MethodSummary& m) { return m.distance_10s; });
    add("rms_vibration", [](const MethodSummary& m) { return std::optional<double>(m.rms_vibration); });
  }
  return ev;
}

// ---- text output ------------------------------------------------------------------

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string fixed(const std::optional<double>& v, int digits = 4) { return v ? fixed(*v, digits) : "-"; }

inline std::string performance_markdown(const Evaluation& ev) {
  std::ostringstream os;
  os << "| Method | Runs | Mean jerk (m/s^3) | Time to goal (s) | Distance in 10 s (m) | Success rate | RMS vibration (rad/s) |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& m : ev.methods) {
    os << "| " << m.method << " | " << m.runs << " | " << fixed(m.mean_jerk) << " | " << fixed(m.time_to_goal)
       << " | " << fixed(m.distance_10s) << " | " << fixed(m.success_rate, 3) << " | " << fixed(m.rms_vibration)
       << " |\n";
  }
  if (!ev.improvements.empty()) {
    os << "\n| Metric | Average improvement of " << ev.cart_label << " (%) | Baselines |\n|---|---|---|\n";
    for (const auto& r : ev.improvements) {
      std::string b;
      for (const auto& l : r.baselines) b += (b.empty() ? "" : ", ") + l;
      os << "| " << r.metric << " | " << fixed(r.percent, 2) << " | " << b << " |\n";
    }
  }
  return os.str();
}

// Angle table (rates = false) or rate table (rates = true).
inline std::string stability_markdown(const Evaluation& ev, bool rates) {
  std::ostringstream os;
  const char* unit = rates ? "rad/s" : "rad";
  os << "| Terrain | Method | Roll mean (" << unit << ") | Roll var | Pitch mean (" << unit << ") | Pitch var | Yaw mean ("
     << unit << ") | Yaw var |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : ev.stability) {
    os << "| " << r.terrain << " | " << r.method;
    for (const auto& a : r.report.axes) {
      os << " | " << fixed(rates ? a.mean_abs_rate : a.mean_abs_angle, 5) << " | "
         << fixed(rates ? a.rate_variance : a.angle_variance, 6);
    }
    os << " |\n";
  }
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
  os.close();
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline nlohmann::json evaluation_json(const Evaluation& ev) {
  nlohmann::json j;
  j["cart_label"] = ev.cart_label;
  j["pooling"] = ev.pooling == Pooling::concatenate ? "concatenate" : "mean_of_runs";
  for (const auto& m : ev.methods) {
    j["methods"][m.method] = {{"runs", m.runs},
                              {"mean_jerk", m.mean_jerk},
                              {"time_to_goal", m.time_to_goal ? nlohmann::json(*m.time_to_goal) : nlohmann::json()},
                              {"distance_10s", m.distance_10s ? nlohmann::json(*m.distance_10s) : nlohmann::json()},
                              {"success_rate", m.success_rate},
                              {"rms_vibration", m.rms_vibration}};
  }
  for (const auto& r : ev.stability) {
    nlohmann::json s = r.report.to_json();
    s["terrain"] = r.terrain;
    s["method"] = r.method;
    j["stability"].push_back(s);
  }
  j["improvements"] = nlohmann::json::array();
  for (const auto& r : ev.improvements) {
    j["improvements"].push_back({{"metric", r.metric}, {"percent", r.percent}, {"baselines", r.baselines}});
  }
  return j;
}

// Writes performance.{md,csv}, angles.md, rates.md, stability.csv and summary.json.
inline void write_evaluation(const std::filesystem::path& dir, const Evaluation& ev) {
  std::filesystem::create_directories(dir);
  write_text(dir / "performance.md", performance_markdown(ev));
  write_text(dir / "angles.md", stability_markdown(ev, false));
  write_text(dir / "rates.md", stability_markdown(ev, true));
  {
    std::ostringstream os;
    os << "method,runs,mean_jerk,time_to_goal,distance_10s,success_rate,rms_vibration\n";
    auto opt = [](const std::optional<double>& v) { return v ? util::format_double(*v) : std::string(); };
    for (const auto& m : ev.methods) {
      os << m.method << ',' << m.runs << ',' << util::format_double(m.mean_jerk) << ',' << opt(m.time_to_goal)
         << ',' << opt(m.distance_10s) << ',' << util::format_double(m.success_rate) << ','
         << util::format_double(m.rms_vibration) << '\n';
    }
    write_text(dir / "performance.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "terrain,method";
    for (const char* ax : {"roll", "pitch", "yaw"}) {
      os << ',' << ax << "_mean_abs," << ax << "_var," << ax << "_rate_mean_abs," << ax << "_rate_var";
    }
    os << '\n';
    for (const auto& r : ev.stability) {
      os << r.terrain << ',' << r.method;
      for (const auto& a : r.report.axes) {
        os << ',' << util::format_double(a.mean_abs_angle) << ',' << util::format_double(a.angle_variance) << ','
           << util::format_double(a.mean_abs_rate) << ',' << util::format_double(a.rate_variance);
      }
      os << '\n';
    }
    write_text(dir / "stability.csv", os.str());
  }
  write_text(dir / "summary.json", evaluation_json(ev).dump(2) + "\n");
}

// ---- SVG plots ------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

struct Frame {
  double w = 640, h = 420, left = 70, right = 150, top = 40, bottom = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
  double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

inline std::string header(const Frame& f, const std::string& title, const std::string& xlabel,
                          const std::string& ylabel) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.w << "\" height=\"" << f.h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << f.w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  os << "<line x1=\"" << f.left << "\" y1=\"" << f.h - f.bottom << "\" x2=\"" << f.w - f.right << "\" y2=\""
     << f.h - f.bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\"" << f.h - f.bottom
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = f.y0 + (f.y1 - f.y0) * k / 4.0;
    os << "<text x=\"" << f.left - 6 << "\" y=\"" << fixed(f.py(yv) + 4, 1) << "\" text-anchor=\"end\">"
       << fixed(yv, 3) << "</text>\n";
  }
  os << "<text x=\"" << (f.left + f.w - f.right) / 2 << "\" y=\"" << f.h - 15 << "\" text-anchor=\"middle\">"
     << escape(xlabel) << "</text>\n";
  os << "<text transform=\"translate(16," << (f.top + f.h - f.bottom) / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
  return os.str();
}

}  // namespace detail

inline std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                                 const std::string& ylabel) {
  detail::Frame f;
  double xmin = INFINITY, xmax = -INFINITY, ymax = 0.0, ymin = 0.0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("line plot: x and y lengths differ");
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymax = std::max(ymax, v), ymin = std::min(ymin, v);
  }
  if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0;
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  f.x0 = xmin;
  f.x1 = xmax;
  f.y0 = ymin;
  f.y1 = ymax * 1.05;
  std::ostringstream os;
  os << detail::header(f, title, xlabel, ylabel);
  std::vector<double> ticks;
  for (const auto& s : series)
    for (double v : s.x)
      if (std::find(ticks.begin(), ticks.end(), v) == ticks.end()) ticks.push_back(v);
  std::sort(ticks.begin(), ticks.end());
  for (double t : ticks) {
    os << "<text x=\"" << fixed(f.px(t), 1) << "\" y=\"" << f.h - f.bottom + 16 << "\" text-anchor=\"middle\">"
       << util::format_double(t) << "</text>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    os << "<polyline fill=\"none\" stroke=\"" << detail::palette(i) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) os << (k ? " " : "") << fixed(f.px(s.x[k]), 1) << ',' << fixed(f.py(s.y[k]), 1);
    os << "\"/>\n";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      os << "<circle cx=\"" << fixed(f.px(s.x[k]), 1) << "\" cy=\"" << fixed(f.py(s.y[k]), 1) << "\" r=\"3\" fill=\""
         << detail::palette(i) << "\"/>\n";
    }
    const double ly = f.top + 18.0 * static_cast<double>(i);
    os << "<rect x=\"" << f.w - f.right + 12 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\""
       << detail::palette(i) << "\"/>\n";
    os << "<text x=\"" << f.w - f.right + 30 << "\" y=\"" << ly + 10 << "\">" << detail::escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::string bar_plot_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                                const std::string& title, const std::string& ylabel, double ymax = 1.0) {
  if (labels.size() != values.size()) throw std::invalid_argument("bar plot: labels and values differ in length");
  detail::Frame f;
  f.right = 30;
  f.x0 = 0.0;
  f.x1 = std::max<double>(1.0, static_cast<double>(values.size()));
  f.y0 = 0.0;
  for (double v : values) ymax = std::max(ymax, v);
  f.y1 = ymax;
  std::ostringstream os;
  os << detail::header(f, title, "", ylabel);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double xa = f.px(static_cast<double>(i) + 0.15), xb = f.px(static_cast<double>(i) + 0.85);
    const double top = f.py(values[i]);
    os << "<rect x=\"" << fixed(xa, 1) << "\" y=\"" << fixed(top, 1) << "\" width=\"" << fixed(xb - xa, 1)
       << "\" height=\"" << fixed(f.h - f.bottom - top, 1) << "\" fill=\"" << detail::palette(i) << "\"/>\n";
    os << "<text x=\"" << fixed((xa + xb) / 2, 1) << "\" y=\"" << fixed(top - 4, 1) << "\" text-anchor=\"middle\">"
       << fixed(values[i], 2) << "</text>\n";
    os << "<text x=\"" << fixed((xa + xb) / 2, 1) << "\" y=\"" << f.h - f.bottom + 16 << "\" text-anchor=\"middle\">"
       << detail::escape(labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Total RMS vibration against Δq, one line per speed.
inline std::string sweep_svg(const std::vector<sim::SweepRow>& rows) {
  std::vector<Series> series;
  for (const auto& r : rows) {
    const std::string label = "v = " + fixed(r.speed, 2) + " m/s";
    auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.label == label; });
    if (it == series.end()) {
      series.push_back({label, {}, {}});
      it = series.end() - 1;
    }
    it->x.push_back(r.deltaq);
    it->y.push_back(r.rms_total);
  }
  return line_plot_svg(series, "Base vibration vs. slip", "delta q (m)", "total RMS vibration (rad/s)");
}

inline std::string success_svg(const Evaluation& ev) {
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& m : ev.methods) {
    labels.push_back(m.method);
    values.push_back(m.success_rate);
  }
  return bar_plot_svg(labels, values, "Success rate", "fraction of runs reaching the goal");
}

}  // namespace cart::metrics
