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

// Synthetic exteroception: a heightfield depth image with a flat per-terrain
// color, and an 8x16 grid of body-frame terrain heights ahead of the robot.

#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <numbers>

#include <json.hpp>

#include "cart/context/observation.hpp"
#include "cart/sim/gait.hpp"

namespace cart::sim {

struct SensorParams {
  nn::Index image_height = 36;
  nn::Index image_width = 64;
  double fov_horizontal_deg = 90.0;
  double camera_tilt_deg = 35.0;  // below the horizon
  double camera_forward = 0.55;   // m ahead of the base center
  double max_range = 10.0;        // m
  int mesh_rows = 8;
  int mesh_cols = 16;
  double mesh_row_spacing = 0.25;  // m, first row one spacing ahead
  double mesh_col_spacing = 0.1;   // m
  int proprio_window = 16;

  int mesh_dim() const { return mesh_rows * mesh_cols; }

  nlohmann::json to_json() const {
    return {{"image_height", image_height},   {"image_width", image_width},
            {"fov_horizontal_deg", fov_horizontal_deg}, {"camera_tilt_deg", camera_tilt_deg},
            {"camera_forward", camera_forward}, {"max_range", max_range},
            {"mesh_rows", mesh_rows},         {"mesh_cols", mesh_cols},
            {"mesh_row_spacing", mesh_row_spacing}, {"mesh_col_spacing", mesh_col_spacing},
            {"proprio_window", proprio_window}};
  }
};

inline std::array<double, 3> terrain_color(TerrainKind k) {
  switch (k) {
    case TerrainKind::flat: return {0.55, 0.55, 0.55};
    case TerrainKind::box: return {0.30, 0.35, 0.65};
    case TerrainKind::rough: return {0.45, 0.35, 0.20};
    case TerrainKind::slope_up: return {0.30, 0.55, 0.30};
    case TerrainKind::slope_down: return {0.40, 0.60, 0.45};
  }
  return {0.5, 0.5, 0.5};
}

inline nn::Tensor3 render_rgbd(const SimState& s, const Heightfield& terrain, TerrainKind kind,
                               const SensorParams& p) {
  nn::Tensor3 img(4, p.image_height, p.image_width);
  const auto color = terrain_color(kind);
  for (int c = 0; c < 3; ++c) img.data.row(c).setConstant(color[static_cast<std::size_t>(c)]);
  const double ch = std::cos(s.heading), sh = std::sin(s.heading);
  const Vec3 cam(s.base.x() + ch * p.camera_forward, s.base.y() + sh * p.camera_forward, s.base.z());
  const double ground = terrain.height(cam.x(), cam.y());
  const double fx = std::tan(p.fov_horizontal_deg * std::numbers::pi / 360.0);
  const double fy = fx * static_cast<double>(p.image_height) / static_cast<double>(p.image_width);
  const double tilt = p.camera_tilt_deg * std::numbers::pi / 180.0;
  for (nn::Index v = 0; v < p.image_height; ++v) {
    const double ny = (1.0 - 2.0 * (static_cast<double>(v) + 0.5) / static_cast<double>(p.image_height)) * fy;
    for (nn::Index u = 0; u < p.image_width; ++u) {
      const double nx = (2.0 * (static_cast<double>(u) + 0.5) / static_cast<double>(p.image_width) - 1.0) * fx;
      // Ray in the heading frame: forward, left, up.
      const double fwd = std::cos(tilt) + ny * std::sin(tilt);
      const double up = ny * std::cos(tilt) - std::sin(tilt);
      const double left = -nx;
      double depth = p.max_range;
      if (up < -1e-6) {
        const double t = (cam.z() - ground) / -up;
        const double gx = cam.x() + t * (ch * fwd - sh * left);
        const double gy = cam.y() + t * (sh * fwd + ch * left);
        const Vec3 hit(gx, gy, terrain.height(gx, gy));
        depth = std::min(p.max_range, (hit - cam).norm());
      }
      img.at(3, v, u) = depth;
    }
  }
  return img;
}

inline nn::Vector terrain_mesh(const SimState& s, const Heightfield& terrain, const SensorParams& p) {
  nn::Vector mesh(p.mesh_dim());
  const double ch = std::cos(s.heading), sh = std::sin(s.heading);
  const double reference = s.base.z() - s.command.h;
  int k = 0;
  for (int r = 0; r < p.mesh_rows; ++r) {
    const double fwd = p.mesh_row_spacing * (r + 1);
    for (int c = 0; c < p.mesh_cols; ++c) {
      const double left = p.mesh_col_spacing * (c - 0.5 * (p.mesh_cols - 1));
      const double x = s.base.x() + ch * fwd - sh * left;
      const double y = s.base.y() + sh * fwd + ch * left;
      mesh(k++) = terrain.height(x, y) - reference;
    }
  }
  return mesh;
}

// Rolling proprioception history; early windows repeat the oldest entry.
class ProprioHistory {
 public:
  explicit ProprioHistory(int window) : window_(window) {}

  void push(const ProprioState& p) {
    rows_.push_back(p.to_vector());
    if (static_cast<int>(rows_.size()) > window_) rows_.pop_front();
  }

  nn::Matrix window() const {
    nn::Matrix w(window_, kProprioDim);
    if (rows_.empty()) {
      w.setZero();
      return w;
    }
    const int pad = window_ - static_cast<int>(rows_.size());
    for (int t = 0; t < window_; ++t) {
      const int src = std::max(0, t - pad);
      w.row(t) = rows_[static_cast<std::size_t>(src)].transpose();
    }
    return w;
  }

 private:
  int window_;
  std::deque<nn::Vector> rows_;
};

inline Observation observe(const SimState& s, const Heightfield& terrain, TerrainKind kind,
                           const ProprioHistory& history, const SensorParams& p) {
  Observation o;
  o.rgbd = render_rgbd(s, terrain, kind, p);
  o.mesh = terrain_mesh(s, terrain, p);
  o.proprio = history.window();
  return o;
}

}  // namespace cart::sim
