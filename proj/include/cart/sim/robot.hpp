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

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "cart/context/observation.hpp"

namespace cart::sim {

using Vec3 = Eigen::Vector3d;
using JointAngles = std::array<double, 3>;  // abduction, hip pitch, knee

class UnreachableTarget : public std::domain_error {
 public:
  UnreachableTarget(const std::string& what, double deficit)
      : std::domain_error(what), deficit_(deficit) {}
  double deficit() const { return deficit_; }

 private:
  double deficit_;
};

// Spot-like kinematic model. Body frame: x forward, y left, z up.
struct RobotModel {
  double length = 1.1;
  double width = 0.5;
  double upper = 0.35;
  double lower = 0.35;
  double mass = 30.0;
  double nominal_height = 0.5;
  double swing_leg_torque = 1.0;  // N*m per swing joint, leg self-weight

  void validate() const {
    if (upper <= 0.0 || lower <= 0.0) throw std::invalid_argument("robot: link lengths must be > 0");
    if (length <= 0.0 || width <= 0.0 || mass <= 0.0) {
      throw std::invalid_argument("robot: body dimensions and mass must be > 0");
    }
  }

  double reach() const { return upper + lower; }

  Vec3 hip(int leg) const {
    const double sx = leg < 2 ? 0.5 : -0.5;
    const double sy = leg % 2 == 0 ? -0.5 : 0.5;
    return {sx * length, sy * width, 0.0};
  }

  nlohmann::json to_json() const {
    return {{"length", length}, {"width", width}, {"upper", upper},  {"lower", lower},
            {"mass", mass},     {"nominal_height", nominal_height}, {"swing_leg_torque", swing_leg_torque}};
  }
};

// Foot position relative to the hip for the given joint angles. Knee angle 0
// is a fully extended leg; the abduction joint rotates about the body x axis.
inline Vec3 fk_leg_local(const JointAngles& q, const RobotModel& m) {
  const double x = m.upper * std::sin(q[1]) + m.lower * std::sin(q[1] + q[2]);
  const double d = m.upper * std::cos(q[1]) + m.lower * std::cos(q[1] + q[2]);
  return {x, d * std::sin(q[0]), -d * std::cos(q[0])};
}

inline Vec3 fk_leg(const JointAngles& q, int leg, const RobotModel& m) {
  return m.hip(leg) + fk_leg_local(q, m);
}

// Horizontal distance between knee and foot; lever arm of the knee under a
// vertical foot load.
inline double knee_lever(const JointAngles& q, const RobotModel& m) {
  return std::abs(m.lower * std::sin(q[1] + q[2]));
}

inline JointAngles ik_leg(const Vec3& foot_target, int leg, const RobotModel& m) {
  if (leg < 0 || leg >= kLegs) throw std::invalid_argument("ik_leg: bad leg index");
  const Vec3 p = foot_target - m.hip(leg);
  const double dist = p.norm();
  const double deficit = dist - m.reach();
  if (deficit > 1e-9) {
    throw UnreachableTarget("ik_leg: target for " + std::string(kLegNames[leg]) + " is " +
                                std::to_string(deficit) + " m beyond reach",
                            deficit);
  }
  JointAngles q{};
  q[0] = std::atan2(p.y(), -p.z());
  const double d = std::hypot(p.y(), p.z());
  const double a = m.upper, b = m.lower;
  // Half-angle form stays exact at full extension.
  const double s2 = std::max(0.0, (a + b - dist) * (a + b + dist) / (4.0 * a * b));
  q[2] = -2.0 * std::asin(std::min(1.0, std::sqrt(s2)));
  q[1] = std::atan2(p.x(), d) - std::atan2(b * std::sin(q[2]), a + b * std::cos(q[2]));
  return q;
}

}  // namespace cart::sim
