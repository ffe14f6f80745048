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

// Run-log directory:
//
//   manifest.json          schema version, rates, shapes, free-form run info
//   proprio.csv            time + 40 proprio channels, one row per control tick
//   samples.csv            one row per policy decision (command, reference)
//   mesh.csv               step_index + mesh features per decision
//   rgbd/frame_NNNNNN.bin  "CARTTNSR" | u32 version | u32 dtype (0 = f32)
//                          | u32 c, h, w | c*h*w little-endian floats

#pragma once

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cart/context/observation.hpp"
#include "cart/objective/command.hpp"
#include "cart/util/csv.hpp"

namespace cart {

inline constexpr int kRunLogSchema = 1;
inline constexpr char kTensorMagic[8] = {'C', 'A', 'R', 'T', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorVersion = 1;

inline std::vector<std::string> proprio_columns() {
  std::vector<std::string> c;
  for (const char* leg : kLegNames)
    for (const char* j : {"hip_ab", "hip_fe", "knee"}) c.push_back(std::string("tau_") + leg + "_" + j);
  for (const char* leg : kLegNames)
    for (const char* j : {"hip_ab", "hip_fe", "knee"}) c.push_back(std::string("qd_") + leg + "_" + j);
  for (const char* leg : kLegNames)
    for (const char* a : {"x", "y", "z"}) c.push_back(std::string("slip_") + leg + "_" + a);
  for (const char* leg : kLegNames) c.push_back(std::string("stance_") + leg);
  return c;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw util::DataError("tensor file truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace detail

// Stored as f32; values are rounded to float precision.
inline void write_tensor(const std::filesystem::path& path, const nn::Tensor3& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kTensorMagic, sizeof(kTensorMagic));
  detail::put_u32(os, kTensorVersion);
  detail::put_u32(os, 0);
  detail::put_u32(os, static_cast<std::uint32_t>(t.shape.channels));
  detail::put_u32(os, static_cast<std::uint32_t>(t.shape.height));
  detail::put_u32(os, static_cast<std::uint32_t>(t.shape.width));
  for (nn::Index c = 0; c < t.data.rows(); ++c) {
    for (nn::Index k = 0; k < t.data.cols(); ++k) {
      detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(t.data(c, k))));
    }
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline nn::Tensor3 read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw util::DataError("cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kTensorMagic, 8) != 0) throw util::DataError(path.string() + ": bad tensor magic");
  try {
    if (detail::get_u32(is) != kTensorVersion) throw util::DataError(path.string() + ": unsupported tensor version");
    if (detail::get_u32(is) != 0) throw util::DataError(path.string() + ": unsupported dtype");
    const auto c = detail::get_u32(is), h = detail::get_u32(is), w = detail::get_u32(is);
    if (c == 0 || h == 0 || w == 0 || std::uint64_t(c) * h * w > (1u << 28)) {
      throw util::DataError(path.string() + ": implausible tensor shape");
    }
    nn::Tensor3 t(c, h, w);
    for (nn::Index i = 0; i < t.data.rows(); ++i)
      for (nn::Index k = 0; k < t.data.cols(); ++k) t.data(i, k) = std::bit_cast<float>(detail::get_u32(is));
    return t;
  } catch (const util::DataError& e) {
    throw util::DataError(path.string() + ": " + e.what());
  }
}

inline nn::Tensor3 round_to_float(nn::Tensor3 t) {
  t.data = t.data.cast<float>().cast<double>();
  return t;
}

struct LoggedDecision {
  long tick = 0;
  double time = 0.0;
  BaseCommand command;
  Eigen::Vector3d reference = Eigen::Vector3d::Zero();
  nn::Vector mesh;
  nn::Tensor3 rgbd;
};

struct RunLog {
  double dt = 0.01;
  long decimation = 10;  // control ticks per decision
  nn::Index proprio_window = 16;
  nlohmann::json info = nlohmann::json::object();
  std::vector<double> time;
  std::vector<ProprioState> proprio;  // one per control tick, tick 0 first
  std::vector<LoggedDecision> decisions;

  // T x 40 window ending at `tick`, padded with the oldest available row.
  nn::Matrix window(long tick) const {
    nn::Matrix w(proprio_window, kProprioDim);
    for (nn::Index r = 0; r < proprio_window; ++r) {
      const long t = std::max(0L, tick - (proprio_window - 1 - r));
      w.row(r) = proprio.at(static_cast<std::size_t>(t)).to_vector().transpose();
    }
    return w;
  }

  Observation observation(const LoggedDecision& d) const {
    return {d.rgbd, d.mesh, window(d.tick)};
  }
};

inline void write_run_log(const std::filesystem::path& dir, const RunLog& log) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "rgbd");
  const auto pc = proprio_columns();

  nlohmann::json m = {{"schema_version", kRunLogSchema},
                      {"dt", log.dt},
                      {"decimation", log.decimation},
                      {"proprio_window", log.proprio_window},
                      {"proprio_columns", pc},
                      {"ticks", log.proprio.size()},
                      {"decisions", log.decisions.size()},
                      {"info", log.info}};
  if (!log.decisions.empty()) {
    const auto& d = log.decisions.front();
    m["mesh_dim"] = d.mesh.size();
    m["rgbd_shape"] = {d.rgbd.shape.channels, d.rgbd.shape.height, d.rgbd.shape.width};
  }
  {
    std::ofstream os(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    os << m.dump(2) << '\n';
    if (!os) throw std::runtime_error("failed writing manifest in " + dir.string());
  }

  std::vector<std::string> header = {"time"};
  header.insert(header.end(), pc.begin(), pc.end());
  util::CsvWriter pw(dir / "proprio.csv", header);
  for (std::size_t t = 0; t < log.proprio.size(); ++t) {
    std::vector<double> row = {log.time.at(t)};
    const nn::Vector v = log.proprio[t].to_vector();
    row.insert(row.end(), v.data(), v.data() + v.size());
    pw.row(row);
  }
  pw.close();

  util::CsvWriter sw(dir / "samples.csv", {"step_index", "tick", "time", "v_x", "v_y", "v_z", "h", "ref_x",
                                           "ref_y", "ref_z"});
  std::vector<std::string> mh = {"step_index"};
  const nn::Index mesh_dim = log.decisions.empty() ? 0 : log.decisions.front().mesh.size();
  for (nn::Index k = 0; k < mesh_dim; ++k) mh.push_back("m" + std::to_string(k));
  util::CsvWriter mw(dir / "mesh.csv", mh);
  for (std::size_t i = 0; i < log.decisions.size(); ++i) {
    const auto& d = log.decisions[i];
    const double si = static_cast<double>(i);
    sw.row({si, static_cast<double>(d.tick), d.time, d.command.v_x, d.command.v_y, d.command.v_z,
            d.command.h, d.reference.x(), d.reference.y(), d.reference.z()});
    if (d.mesh.size() != mesh_dim) throw std::invalid_argument("run log: mesh size changes between decisions");
    std::vector<double> row = {si};
    row.insert(row.end(), d.mesh.data(), d.mesh.data() + d.mesh.size());
    mw.row(row);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06zu.bin", i);
    write_tensor(dir / "rgbd" / name, d.rgbd);
  }
  sw.close();
  mw.close();
}

inline RunLog read_run_log(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const std::string where = dir.string();
  std::ifstream ms(dir / "manifest.json", std::ios::binary);
  if (!ms) throw util::DataError(where + ": missing manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw util::DataError(where + "/manifest.json: " + e.what());
  }
  if (m.value("schema_version", 0) != kRunLogSchema) {
    throw util::DataError(where + ": unsupported run-log schema version");
  }
  RunLog log;
  try {
    log.dt = m.at("dt");
    log.decimation = m.at("decimation");
    log.proprio_window = m.at("proprio_window");
    log.info = m.value("info", nlohmann::json::object());
    if (m.at("proprio_columns").get<std::vector<std::string>>() != proprio_columns()) {
      throw util::DataError("proprio column schema mismatch");
    }
  } catch (const nlohmann::json::exception& e) {
    throw util::DataError(where + "/manifest.json: " + e.what());
  }

  const util::Table pt = util::read_csv(dir / "proprio.csv");
  if (pt.header.size() != 1 + kProprioDim) throw util::DataError(where + "/proprio.csv: expected 41 columns");
  for (const auto& r : pt.rows) {
    log.time.push_back(r[0]);
    nn::Vector v = Eigen::Map<const nn::Vector>(r.data() + 1, kProprioDim);
    try {
      log.proprio.push_back(ProprioState::from_vector(v));
    } catch (const std::exception& e) {
      throw util::DataError(where + "/proprio.csv: " + e.what());
    }
  }

  const util::Table st = util::read_csv(dir / "samples.csv");
  const util::Table mt = util::read_csv(dir / "mesh.csv");
  if (st.rows.size() != mt.rows.size()) throw util::DataError(where + ": samples.csv and mesh.csv row counts differ");
  const auto col = [&](const char* n) { return st.column(n); };
  for (std::size_t i = 0; i < st.rows.size(); ++i) {
    const auto& r = st.rows[i];
    LoggedDecision d;
    d.tick = static_cast<long>(r[col("tick")]);
    if (d.tick < 0 || static_cast<std::size_t>(d.tick) >= log.proprio.size()) {
      throw util::DataError(where + "/samples.csv: decision tick out of range");
    }
    d.time = r[col("time")];
    d.command = {r[col("v_x")], r[col("v_y")], r[col("v_z")], r[col("h")]};
    d.reference = {r[col("ref_x")], r[col("ref_y")], r[col("ref_z")]};
    const auto& mr = mt.rows[i];
    if (static_cast<std::size_t>(mr[0]) != i) throw util::DataError(where + "/mesh.csv: step_index out of order");
    d.mesh = Eigen::Map<const nn::Vector>(mr.data() + 1, static_cast<nn::Index>(mr.size() - 1));
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06zu.bin", i);
    d.rgbd = read_tensor(dir / "rgbd" / name);
    log.decisions.push_back(std::move(d));
  }
  return log;
}

}  // namespace cart
