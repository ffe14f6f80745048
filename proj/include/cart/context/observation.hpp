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

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cart/nn/layers.hpp"

namespace cart {

enum class Leg : int { FR = 0, FL = 1, HR = 2, HL = 3 };

inline constexpr std::array<const char*, 4> kLegNames = {"FR", "FL", "HR", "HL"};
inline constexpr int kLegs = 4;
inline constexpr int kJoints = 12;
inline constexpr int kProprioDim = 40;

// One control step of proprioception. Joint arrays are leg-major
// (3 joints per leg, legs in FR, FL, HR, HL order).
struct ProprioState {
  std::array<double, kJoints> joint_torques{};
  std::array<double, kJoints> joint_velocities{};
  std::array<std::array<double, 3>, kLegs> foot_slip{};
  std::array<bool, kLegs> stance{};

  // [torques(12), joint velocities(12), slip(12, leg-major xyz), stance(4)]
  nn::Vector to_vector() const {
    nn::Vector v(kProprioDim);
    int k = 0;
    for (double t : joint_torques) v(k++) = t;
    for (double q : joint_velocities) v(k++) = q;
    for (const auto& s : foot_slip)
      for (double c : s) v(k++) = c;
    for (bool b : stance) v(k++) = b ? 1.0 : 0.0;
    return v;
  }

  static ProprioState from_vector(const nn::Vector& v) {
    if (v.size() != kProprioDim) {
      throw nn::ShapeError("proprio vector must have 40 entries, got " + std::to_string(v.size()));
    }
    ProprioState s;
    int k = 0;
    for (double& t : s.joint_torques) t = v(k++);
    for (double& q : s.joint_velocities) q = v(k++);
    for (auto& slip : s.foot_slip)
      for (double& c : slip) c = v(k++);
    for (bool& b : s.stance) {
      const double x = v(k++);
      if (x != 0.0 && x != 1.0) throw std::invalid_argument("stance flag must be 0 or 1");
      b = x == 1.0;
    }
    return s;
  }

  bool finite() const {
    for (double t : joint_torques)
      if (!std::isfinite(t)) return false;
    for (double q : joint_velocities)
      if (!std::isfinite(q)) return false;
    for (const auto& s : foot_slip)
      for (double c : s)
        if (!std::isfinite(c)) return false;
    return true;
  }
};

// Multimodal observation for one high-level step.
struct Observation {
  nn::Tensor3 rgbd;       // 4 x H x W; RGB in [0, 1], depth in meters
  nn::Vector mesh;        // terrain-geometry features
  nn::Matrix proprio;     // T x 40 window, oldest row first

  void validate(nn::Index mesh_dim = 128) const {
    if (rgbd.shape.channels != 4) {
      throw nn::ShapeError("observation: RGB-D needs 4 channels, got " +
                           std::to_string(rgbd.shape.channels));
    }
    if (rgbd.data.rows() > 3 && rgbd.data.row(3).minCoeff() < 0.0) {
      throw std::invalid_argument("observation: negative depth");
    }
    if (mesh.size() != mesh_dim) {
      throw nn::ShapeError("observation: mesh features must have " + std::to_string(mesh_dim) +
                           " entries, got " + std::to_string(mesh.size()));
    }
    if (proprio.rows() < 1 || proprio.cols() != kProprioDim) {
      throw nn::ShapeError("observation: proprio window " + nn::shape_string(proprio) +
                           " must be T x 40 with T >= 1");
    }
    if (!proprio.allFinite() || !mesh.allFinite() || !rgbd.data.allFinite()) {
      throw std::invalid_argument("observation: non-finite entries");
    }
  }
};

// Blanks camera and terrain-geometry channels, leaving proprioception.
inline Observation without_exteroception(Observation obs) {
  obs.rgbd.data.setZero();
  obs.mesh.setZero();
  return obs;
}

struct ContextState {
  nn::Vector z_v;
  nn::Vector z_m;
  nn::Vector z_p;
  nn::Vector c_t;
  nn::Vector s_hat;
};

}  // namespace cart
