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

// Per-step vibrational-stability objective J_t = J_v + J_s + J_e.

#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "cart/context/observation.hpp"
#include "cart/objective/command.hpp"

namespace cart {

struct ObjectiveConfig {
  double beta_v = 1.0;
  double sigma_v = 0.25;  // (m/s)^2
  double beta_s = 5.0;    // 1/m
  double beta_e = 0.005;  // 1/(N*m)
  double beta_a = 0.0;    // optional command smoothness
  double clip_norm = 1.0;
  bool lateral_only = false;  // Δq over (x, y) slip components only

  void validate() const {
    if (!(sigma_v > 0.0)) throw std::invalid_argument("objective: sigma_v must be > 0");
    if (!(beta_v >= 0.0) || !(beta_s >= 0.0) || !(beta_e >= 0.0) || !(beta_a >= 0.0)) {
      throw std::invalid_argument("objective: betas must be non-negative");
    }
    if (!(clip_norm > 0.0)) throw std::invalid_argument("objective: clip_norm must be > 0");
  }

  nlohmann::json to_json() const {
    return {{"beta_v", beta_v}, {"sigma_v", sigma_v},     {"beta_s", beta_s},
            {"beta_e", beta_e}, {"beta_a", beta_a},       {"clip_norm", clip_norm},
            {"lateral_only", lateral_only}};
  }
};

struct StepSample {
  Observation observation;
  BaseCommand command;
  Eigen::Vector3d reference = Eigen::Vector3d::Zero();  // v*
  ProprioState prev;  // t - 1
  ProprioState curr;  // t
  std::optional<BaseCommand> previous_command;
};

inline double velocity_term(const BaseCommand& a, const Eigen::Vector3d& reference, const ObjectiveConfig& c) {
  return c.beta_v * std::exp(-(a.velocity() - reference).squaredNorm() / c.sigma_v);
}

inline double delta_q(const ProprioState& prev, const ProprioState& curr, bool lateral_only = false) {
  double dq = 0.0;
  for (int l = 0; l < kLegs; ++l) {
    const auto li = static_cast<std::size_t>(l);
    if (!curr.stance[li]) continue;
    double s = 0.0;
    for (int k = 0; k < (lateral_only ? 2 : 3); ++k) {
      const double d = curr.foot_slip[li][static_cast<std::size_t>(k)] - prev.foot_slip[li][static_cast<std::size_t>(k)];
      s += d * d;
    }
    dq += std::sqrt(s);
  }
  return dq;
}

inline double slip_term(const ProprioState& prev, const ProprioState& curr, const ObjectiveConfig& c) {
  return -c.beta_s * delta_q(prev, curr, c.lateral_only);
}

inline double torque_norm(const std::array<double, kJoints>& tau) {
  double s = 0.0;
  for (double t : tau) s += t * t;
  return std::sqrt(s);
}

inline double effort_term(const std::array<double, kJoints>& tau, const ObjectiveConfig& c) {
  return -c.beta_e * torque_norm(tau);
}

inline double smoothness_term(const BaseCommand& a, const std::optional<BaseCommand>& prev,
                              const ObjectiveConfig& c) {
  if (!prev || c.beta_a == 0.0) return 0.0;
  return -c.beta_a * (a.to_vector() - prev->to_vector()).norm();
}

struct ObjectiveTerms {
  double velocity = 0.0;
  double slip = 0.0;
  double effort = 0.0;
  double smoothness = 0.0;
  double total = 0.0;
};

class NonFiniteObjective : public std::domain_error {
 public:
  NonFiniteObjective(const std::string& term)
      : std::domain_error("objective term '" + term + "' is not finite"), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

inline ObjectiveTerms objective_terms(const StepSample& s, const ObjectiveConfig& c) {
  if (!s.command.finite()) throw NonFiniteObjective("command");
  if (!s.reference.allFinite()) throw NonFiniteObjective("reference_velocity");
  ObjectiveTerms t;
  t.velocity = velocity_term(s.command, s.reference, c);
  t.slip = slip_term(s.prev, s.curr, c);
  t.effort = effort_term(s.curr.joint_torques, c);
  t.smoothness = smoothness_term(s.command, s.previous_command, c);
  if (!std::isfinite(t.velocity)) throw NonFiniteObjective("velocity");
  if (!std::isfinite(t.slip)) throw NonFiniteObjective("slip");
  if (!std::isfinite(t.effort)) throw NonFiniteObjective("effort");
  if (!std::isfinite(t.smoothness)) throw NonFiniteObjective("smoothness");
  t.total = t.velocity + t.slip + t.effort + t.smoothness;
  return t;
}

inline double total_objective(const StepSample& s, const ObjectiveConfig& c) {
  return objective_terms(s, c).total;
}

}  // namespace cart
