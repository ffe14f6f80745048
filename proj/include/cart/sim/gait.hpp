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

// Kinematic trot: IK-driven feet, stance slip injection, and a plane-fit
// spring-damper response for base orientation. The base itself follows the
// commanded velocity and height exactly.

#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <json.hpp>

#include "cart/context/observation.hpp"
#include "cart/objective/command.hpp"
#include "cart/sim/robot.hpp"
#include "cart/sim/terrain.hpp"

namespace cart::sim {

struct GaitParams {
  double control_rate = 100.0;  // Hz
  double cycle = 0.6;           // s
  double duty = 0.5;
  double swing_height = 0.08;  // m
  double natural_frequency = 8.0;  // Hz, orientation response
  double damping = 0.7;
  double terrain_slip_gain = 0.06;  // m per tick per unit terrain slope
  int slip_height_exponent = 3;     // slip grows with (h / nominal)^k
  double slip_sag = 0.5;            // contact height lost per meter of slip
  double asymmetry_gain = 1.0;
  double gravity = 9.81;

  double dt() const { return 1.0 / control_rate; }
  double stance_time() const { return cycle * duty; }

  void validate() const {
    if (!(control_rate > 0.0) || !(cycle > 0.0)) throw std::invalid_argument("gait: rates must be > 0");
    if (!(duty > 0.0 && duty < 1.0)) throw std::invalid_argument("gait: duty must be in (0, 1)");
    if (!(natural_frequency > 0.0) || !(damping > 0.0)) {
      throw std::invalid_argument("gait: orientation response needs positive frequency and damping");
    }
    if (slip_height_exponent < 1) throw std::invalid_argument("gait: slip exponent must be >= 1");
    if (terrain_slip_gain < 0.0 || slip_sag < 0.0 || swing_height < 0.0) {
      throw std::invalid_argument("gait: gains must be non-negative");
    }
  }

  nlohmann::json to_json() const {
    return {{"control_rate", control_rate},     {"cycle", cycle},
            {"duty", duty},                     {"swing_height", swing_height},
            {"natural_frequency", natural_frequency}, {"damping", damping},
            {"terrain_slip_gain", terrain_slip_gain},
            {"slip_height_exponent", slip_height_exponent}, {"slip_sag", slip_sag},
            {"asymmetry_gain", asymmetry_gain}, {"gravity", gravity}};
  }
};

// ---- command sensitivities ---------------------------------------------------
//
// Expected stance slip and joint effort scale with the command through these
// factors. They are templates so the training loss can differentiate them.

template <class T>
T slip_sensitivity(const T& h, const T& v_y, const T& v_z, double nominal_height, int exponent = 3) {
  const T r = h / nominal_height;
  T p = r;
  for (int k = 1; k < exponent; ++k) p = p * r;
  return p * (1.0 + v_y * v_y + v_z * v_z);
}

template <class T>
T effort_sensitivity(const T& h, const T& v_x, const RobotModel& m, const GaitParams& g) {
  using std::sqrt;
  const double a = m.upper, b = m.lower;
  // Knee height above the hip-foot line for a foot straight below the hip.
  const T along = (h * h + (a * a - b * b)) / (2.0 * h);
  const T knee = a * a - along * along;
  const T hip = v_x * (g.stance_time() / 4.0);
  return sqrt(knee + hip * hip + 0.0025);
}

// ---- orientation response ------------------------------------------------------

struct Contact {
  Eigen::Vector2d xy;  // heading frame, relative to the base
  double z = 0.0;      // world height
};

// Least-squares plane z = c + sx*x + sy*y; minimum-norm slopes when the
// contacts are collinear. Empty for fewer than two contacts.
inline std::optional<Eigen::Vector2d> plane_slopes(const std::vector<Contact>& contacts) {
  if (contacts.size() < 2) return std::nullopt;
  Eigen::Vector2d cxy = Eigen::Vector2d::Zero();
  double cz = 0.0;
  for (const auto& c : contacts) {
    cxy += c.xy;
    cz += c.z;
  }
  cxy /= static_cast<double>(contacts.size());
  cz /= static_cast<double>(contacts.size());
  Eigen::MatrixXd A(contacts.size(), 2);
  Eigen::VectorXd z(contacts.size());
  for (std::size_t i = 0; i < contacts.size(); ++i) {
    A.row(static_cast<Eigen::Index>(i)) = (contacts[i].xy - cxy).transpose();
    z(static_cast<Eigen::Index>(i)) = contacts[i].z - cz;
  }
  return Eigen::Vector2d(A.completeOrthogonalDecomposition().solve(z));
}

inline Eigen::Vector2d roll_pitch_from_slopes(const Eigen::Vector2d& s) {
  return {std::atan(s.y()), -std::atan(s.x())};
}

struct OrientationState {
  Vec3 angle = Vec3::Zero();   // roll, pitch, yaw
  Vec3 rate = Vec3::Zero();
  Vec3 target = Vec3::Zero();
};

inline Eigen::Matrix2d response_transition(const GaitParams& g, double dt) {
  const double w = 2.0 * std::numbers::pi * g.natural_frequency;
  Eigen::Matrix2d A;
  A << 0.0, 1.0, -w * w, -2.0 * g.damping * w;
  return (A * dt).exp();
}

// Second-order tracking of the plane-fit target, exact for a target held
// over the step. With fewer than two contacts the previous target is kept.
inline OrientationState base_response(const std::vector<Contact>& stance,
                                      std::optional<double> yaw_target,
                                      const OrientationState& prev, const Eigen::Matrix2d& phi) {
  OrientationState next = prev;
  if (auto s = plane_slopes(stance)) {
    const Eigen::Vector2d rp = roll_pitch_from_slopes(*s);
    next.target.x() = rp.x();
    next.target.y() = rp.y();
    if (yaw_target) next.target.z() = *yaw_target;
  }
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector2d e(prev.angle(k) - next.target(k), prev.rate(k));
    const Eigen::Vector2d n = phi * e;
    next.angle(k) = next.target(k) + n(0);
    next.rate(k) = n(1);
  }
  return next;
}

inline OrientationState base_response(const std::vector<Contact>& stance,
                                      std::optional<double> yaw_target,
                                      const OrientationState& prev, const GaitParams& g, double dt) {
  return base_response(stance, yaw_target, prev, response_transition(g, dt));
}

// ---- gait state ------------------------------------------------------------------

struct FootState {
  Vec3 pos = Vec3::Zero();      // world
  Vec3 anchor = Vec3::Zero();   // touchdown point
  Vec3 liftoff = Vec3::Zero();
  Vec3 slip = Vec3::Zero();     // accumulated stance slip, world
  bool stance = false;
};

struct SimState {
  long tick = 0;
  double time = 0.0;
  Vec3 base = Vec3::Zero();
  double heading = 0.0;
  double phase = 0.0;
  OrientationState orientation;
  std::array<FootState, kLegs> feet{};
  std::array<JointAngles, kLegs> joints{};
  BaseCommand command;
};

// FR+HL lead; FL+HR run half a cycle behind.
inline double leg_phase(double phase, int leg) {
  if (leg == 0 || leg == 3) return phase;
  return phase >= 0.5 ? phase - 0.5 : phase + 0.5;
}

inline Eigen::Matrix2d rot2(double a) {
  Eigen::Matrix2d r;
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

inline Vec3 hip_world(const SimState& s, int leg, const RobotModel& m) {
  const Eigen::Vector2d xy = s.base.head<2>() + rot2(s.heading) * m.hip(leg).head<2>();
  return {xy.x(), xy.y(), s.base.z()};
}

inline double ground_under_hips(const Vec3& base, double heading, const Heightfield& terrain,
                                const RobotModel& m) {
  double z = 0.0;
  for (int l = 0; l < kLegs; ++l) {
    const Eigen::Vector2d xy = base.head<2>() + rot2(heading) * m.hip(l).head<2>();
    z += terrain.height(xy.x(), xy.y());
  }
  return z / kLegs;
}

// IK for a world-frame foot, projected back onto the workspace when the
// low-level controller cannot reach it.
inline JointAngles leg_joints(const SimState& s, int leg, const Vec3& foot_world, const RobotModel& m) {
  const Eigen::Vector2d rel = rot2(-s.heading) * (foot_world.head<2>() - s.base.head<2>());
  Vec3 body(rel.x(), rel.y(), foot_world.z() - s.base.z());
  Vec3 from_hip = body - m.hip(leg);
  const double limit = 0.999 * m.reach();
  if (from_hip.norm() > limit) from_hip *= limit / from_hip.norm();
  return ik_leg(m.hip(leg) + from_hip, leg, m);
}

inline SimState initial_state(const Heightfield& terrain, const RobotModel& m, const GaitParams& g,
                              const Eigen::Vector2d& start, double heading, double h) {
  SimState s;
  s.heading = heading;
  s.base = Vec3(start.x(), start.y(), 0.0);
  s.base.z() = ground_under_hips(s.base, heading, terrain, m) + h;
  s.command.h = h;
  s.orientation.angle.z() = heading;
  s.orientation.target.z() = heading;
  for (int l = 0; l < kLegs; ++l) {
    FootState& f = s.feet[static_cast<std::size_t>(l)];
    const Vec3 hip = hip_world(s, l, m);
    f.pos = Vec3(hip.x(), hip.y(), terrain.height(hip.x(), hip.y()));
    f.anchor = f.pos;
    f.liftoff = f.pos;
    f.stance = leg_phase(0.0, l) < g.duty;
    s.joints[static_cast<std::size_t>(l)] = leg_joints(s, l, f.pos, m);
  }
  return s;
}

// Advances one control tick. perturbation is the expected per-tick stance-foot
// slip sum at the nominal command.
template <class Rng>
ProprioState step_gait(SimState& s, const BaseCommand& cmd, const Heightfield& terrain,
                       double perturbation, const RobotModel& m, const GaitParams& g, Rng& rng,
                       const Eigen::Matrix2d* transition = nullptr) {
  if (!cmd.finite()) throw std::invalid_argument("step_gait: non-finite command");
  if (!(perturbation >= 0.0)) throw std::invalid_argument("step_gait: perturbation must be >= 0");
  const double dt = g.dt();
  s.command = cmd;
  s.phase = std::fmod(static_cast<double>(s.tick + 1) * dt / g.cycle, 1.0);

  const Eigen::Matrix2d R = rot2(s.heading);
  const Eigen::Vector2d v_world = R * Eigen::Vector2d(cmd.v_x, cmd.v_y);
  s.base.head<2>() += v_world * dt;
  s.base.z() = ground_under_hips(s.base, s.heading, terrain, m) + cmd.h;

  std::array<bool, kLegs> stance{};
  int n_stance = 0;
  for (int l = 0; l < kLegs; ++l) {
    stance[static_cast<std::size_t>(l)] = leg_phase(s.phase, l) < g.duty;
    n_stance += stance[static_cast<std::size_t>(l)] ? 1 : 0;
  }
  const double rho_s = slip_sensitivity(cmd.h, cmd.v_y, cmd.v_z, m.nominal_height, g.slip_height_exponent);
  std::uniform_real_distribution<double> unit(0.0, 2.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);

  for (int l = 0; l < kLegs; ++l) {
    FootState& f = s.feet[static_cast<std::size_t>(l)];
    const bool now = stance[static_cast<std::size_t>(l)];
    const double lp = leg_phase(s.phase, l);
    if (now) {
      if (!f.stance) {
        // Touchdown: the swing target becomes the new anchor.
        f.anchor = Vec3(f.pos.x(), f.pos.y(), terrain.height(f.pos.x(), f.pos.y()));
        f.slip.setZero();
      }
      const double slope = terrain.gradient(f.pos.x(), f.pos.y()).norm();
      const double mag = (perturbation / n_stance + g.terrain_slip_gain * slope) * rho_s * unit(rng);
      const double th = angle(rng);
      f.slip += Vec3(mag * std::cos(th), mag * std::sin(th), 0.0);
      const Eigen::Vector2d xy = f.anchor.head<2>() + f.slip.head<2>();
      f.pos = Vec3(xy.x(), xy.y(), terrain.height(xy.x(), xy.y()));
    } else {
      if (f.stance) {
        f.liftoff = f.pos;
        f.slip.setZero();
      }
      const double sp = (lp - g.duty) / (1.0 - g.duty);
      const double remaining = (1.0 - lp) * g.cycle;
      const Eigen::Vector2d hip_td = hip_world(s, l, m).head<2>() + v_world * remaining;
      const Eigen::Vector2d target = hip_td + v_world * (g.stance_time() / 2.0);
      const double blend = sp * sp * (3.0 - 2.0 * sp);
      const Eigen::Vector2d xy = f.liftoff.head<2>() + (target - f.liftoff.head<2>()) * blend;
      const double ground = (1.0 - sp) * f.liftoff.z() + sp * terrain.height(target.x(), target.y());
      f.pos = Vec3(xy.x(), xy.y(), ground + g.swing_height * std::sin(std::numbers::pi * sp));
    }
    f.stance = now;
  }

  ProprioState p;
  const double load = m.mass * g.gravity / std::max(1, n_stance);
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (int l = 0; l < kLegs; ++l) {
    if (stance[static_cast<std::size_t>(l)]) centroid += s.feet[static_cast<std::size_t>(l)].pos.head<2>();
  }
  if (n_stance > 0) centroid /= n_stance;
  const double asym = n_stance > 0 ? (centroid - s.base.head<2>()).norm() / (0.5 * m.width) : 0.0;
  const double force = load * (1.0 + g.asymmetry_gain * asym);

  std::vector<Contact> contacts;
  double yaw_num = 0.0, yaw_den = 0.0;
  Eigen::Vector2d contact_centroid = Eigen::Vector2d::Zero();
  for (int l = 0; l < kLegs; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const FootState& f = s.feet[li];
    const JointAngles q = leg_joints(s, l, f.pos, m);
    for (int j = 0; j < 3; ++j) {
      p.joint_velocities[3 * li + j] = s.tick == 0 ? 0.0 : (q[j] - s.joints[li][j]) / dt;
    }
    s.joints[li] = q;
    const Vec3 foot_body = fk_leg(q, l, m);
    if (stance[li]) {
      p.joint_torques[3 * li + 0] = force * (foot_body.y() - m.hip(l).y());
      p.joint_torques[3 * li + 1] = force * (foot_body.x() - m.hip(l).x());
      p.joint_torques[3 * li + 2] = force * knee_lever(q, m);
      const Eigen::Vector2d rel = rot2(-s.heading) * (f.pos.head<2>() - s.base.head<2>());
      contacts.push_back({rel, f.pos.z() - g.slip_sag * f.slip.norm()});
      contact_centroid += rel;
    } else {
      for (int j = 0; j < 3; ++j) p.joint_torques[3 * li + j] = m.swing_leg_torque;
    }
    const Eigen::Vector2d slip_body = rot2(-s.heading) * f.slip.head<2>();
    p.foot_slip[li] = {slip_body.x(), slip_body.y(), f.slip.z()};
    p.stance[li] = stance[li];
  }

  // Small-angle rotation that best explains the stance slips.
  std::optional<double> yaw_target;
  if (contacts.size() >= 2) {
    contact_centroid /= static_cast<double>(contacts.size());
    std::size_t k = 0;
    for (int l = 0; l < kLegs; ++l) {
      const auto li = static_cast<std::size_t>(l);
      if (!stance[li]) continue;
      const Eigen::Vector2d r = contacts[k++].xy - contact_centroid;
      const Eigen::Vector2d d(p.foot_slip[li][0], p.foot_slip[li][1]);
      yaw_num += r.x() * d.y() - r.y() * d.x();
      yaw_den += r.squaredNorm();
    }
    yaw_target = s.heading + (yaw_den > 0.0 ? yaw_num / yaw_den : 0.0);
  }
  s.orientation = transition ? base_response(contacts, yaw_target, s.orientation, *transition)
                             : base_response(contacts, yaw_target, s.orientation, g, dt);
  ++s.tick;
  s.time = static_cast<double>(s.tick) * dt;
  return p;
}

}  // namespace cart::sim
