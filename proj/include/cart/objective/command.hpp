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
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace cart {

struct CommandBounds {
  double v_max = 1.6;  // per axis, m/s
  double h_min = 0.1;  // m
  double h_max = 0.7;  // m

  void validate() const {
    if (!(v_max > 0.0) || !(h_min < h_max)) throw std::invalid_argument("command bounds are empty");
  }
};

// High-level action a_t = [v_x, v_y, v_z, h] in the body frame.
struct BaseCommand {
  double v_x = 0.0;
  double v_y = 0.0;
  double v_z = 0.0;
  double h = 0.5;

  Eigen::Vector4d to_vector() const { return {v_x, v_y, v_z, h}; }
  Eigen::Vector3d velocity() const { return {v_x, v_y, v_z}; }

  static BaseCommand from_vector(const Eigen::Vector4d& a) { return {a(0), a(1), a(2), a(3)}; }

  bool finite() const {
    return std::isfinite(v_x) && std::isfinite(v_y) && std::isfinite(v_z) && std::isfinite(h);
  }

  bool within(const CommandBounds& b) const {
    return std::abs(v_x) <= b.v_max && std::abs(v_y) <= b.v_max && std::abs(v_z) <= b.v_max &&
           h >= b.h_min && h <= b.h_max;
  }

  void check(const CommandBounds& b) const {
    if (!finite()) throw std::invalid_argument("base command has non-finite components");
    if (!within(b)) {
      throw std::invalid_argument("base command outside bounds: " + to_json().dump());
    }
  }

  nlohmann::json to_json() const { return {{"v_x", v_x}, {"v_y", v_y}, {"v_z", v_z}, {"h", h}}; }

  bool operator==(const BaseCommand&) const = default;
};

}  // namespace cart
