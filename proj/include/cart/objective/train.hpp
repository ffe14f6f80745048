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

// Off-line policy optimization on logged samples.
//
// The slip and effort terms of a logged step were produced by the logged
// command. To give them a gradient with respect to the policy's command, each
// is rescaled by the simulator's command sensitivity:
//
//   J_s(a) = -beta_s * dq_log  * rho_s(a) / rho_s(a_log)
//   J_e(a) = -beta_e * |tau|_log * rho_e(a) / rho_e(a_log)
//
// At a = a_log the loss equals -total_objective exactly.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "cart/nn/gradient.hpp"
#include "cart/objective/objective.hpp"
#include "cart/objective/policy.hpp"
#include "cart/sim/gait.hpp"

namespace cart {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool fit_normalizer = true;
  sim::RobotModel robot;
  sim::GaitParams gait;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},       {"batch_size", batch_size}, {"learning_rate", learning_rate},
            {"momentum", momentum},   {"seed", seed},             {"fit_normalizer", fit_normalizer},
            {"gait", gait.to_json()}};
  }
};

// Per-sample constants of the counterfactual loss.
struct LoggedTerms {
  double delta_q = 0.0;
  double torque_norm = 0.0;
  double rho_s = 1.0;
  double rho_e = 1.0;
};

inline LoggedTerms logged_terms(const StepSample& s, const ObjectiveConfig& c, const sim::RobotModel& m,
                                const sim::GaitParams& g) {
  LoggedTerms t;
  t.delta_q = delta_q(s.prev, s.curr, c.lateral_only);
  t.torque_norm = torque_norm(s.curr.joint_torques);
  t.rho_s = sim::slip_sensitivity(s.command.h, s.command.v_y, s.command.v_z, m.nominal_height,
                             g.slip_height_exponent);
  t.rho_e = sim::effort_sensitivity(s.command.h, s.command.v_x, m, g);
  return t;
}

// Per-sample objective (1 x B) for commands produced by the policy.
inline nn::Var counterfactual_objective(const nn::Var& command, std::span<const StepSample* const> batch,
                                        const ObjectiveConfig& c, const sim::RobotModel& m,
                                        const sim::GaitParams& g) {
  const nn::Index B = command.cols();
  nn::Matrix ref(3, B), dq(1, B), tau(1, B), rs(1, B), re(1, B), prev(4, B);
  bool smooth = c.beta_a > 0.0;
  for (nn::Index b = 0; b < B; ++b) {
    const StepSample& s = *batch[static_cast<std::size_t>(b)];
    const LoggedTerms t = logged_terms(s, c, m, g);
    ref.col(b) = s.reference;
    dq(0, b) = t.delta_q;
    tau(0, b) = t.torque_norm;
    rs(0, b) = t.rho_s;
    re(0, b) = t.rho_e;
    smooth = smooth && s.previous_command.has_value();
    if (s.previous_command) prev.col(b) = s.previous_command->to_vector();
  }
  const nn::Var v = nn::slice_rows(command, 0, 3);
  const nn::Var vx = nn::slice_rows(command, 0, 1);
  const nn::Var vy = nn::slice_rows(command, 1, 1);
  const nn::Var vz = nn::slice_rows(command, 2, 1);
  const nn::Var h = nn::slice_rows(command, 3, 1);

  const nn::Var err = nn::sum_rows(nn::square(v - nn::Var::constant(ref)));
  nn::Var j = c.beta_v * nn::exp(err * (-1.0 / c.sigma_v));
  const nn::Var rho_s = sim::slip_sensitivity(h, vy, vz, m.nominal_height, g.slip_height_exponent);
  const nn::Var rho_e = sim::effort_sensitivity(h, vx, m, g);
  j = j - c.beta_s * rho_s * nn::Var::constant(dq.cwiseQuotient(rs));
  j = j - c.beta_e * rho_e * nn::Var::constant(tau.cwiseQuotient(re));
  if (smooth) {
    const nn::Var d = nn::sum_rows(nn::square(command - nn::Var::constant(prev)));
    j = j - c.beta_a * nn::sqrt(d + 1e-12);
  }
  return j;
}

// Scalar form of counterfactual_objective for one command.
inline double counterfactual_value(const BaseCommand& a, const StepSample& s, const LoggedTerms& t,
                                   const ObjectiveConfig& c, const sim::RobotModel& m, const sim::GaitParams& g) {
  double j = velocity_term(a, s.reference, c);
  j -= c.beta_s * t.delta_q * sim::slip_sensitivity(a.h, a.v_y, a.v_z, m.nominal_height, g.slip_height_exponent) / t.rho_s;
  j -= c.beta_e * t.torque_norm * sim::effort_sensitivity(a.h, a.v_x, m, g) / t.rho_e;
  if (c.beta_a > 0.0 && s.previous_command) {
    j -= c.beta_a * std::sqrt((a.to_vector() - s.previous_command->to_vector()).squaredNorm() + 1e-12);
  }
  return j;
}

struct TrainResult {
  PolicyBundle policy;
  nlohmann::json report;
  bool diverged = false;
};

inline std::vector<nn::Vector> proprio_rows(std::span<const StepSample> data) {
  std::vector<nn::Vector> rows;
  for (const auto& s : data) {
    for (nn::Index t = 0; t < s.observation.proprio.rows(); ++t) {
      rows.push_back(s.observation.proprio.row(t).transpose());
    }
  }
  return rows;
}

// Mean training loss of `policy` over `data`, evaluated in minibatches.
inline double dataset_loss(const PolicyBundle& policy, std::span<const StepSample> data,
                           const ObjectiveConfig& c, const sim::RobotModel& m, const sim::GaitParams& g,
                           int batch_size = 64) {
  const CartPolicy net = policy.policy();
  const nn::BoundParams p(policy.params, false);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - i);
    std::vector<Observation> views;
    std::vector<const Observation*> obs;
    std::vector<const StepSample*> batch;
    views.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      views.push_back(view_for(data[i + k].observation, policy.modality));
      batch.push_back(&data[i + k]);
    }
    for (const auto& v : views) obs.push_back(&v);
    const auto out = net.forward(p, obs, policy.normalizer);
    total -= nn::sum(counterfactual_objective(out.command, batch, c, m, g)).item();
  }
  return total / static_cast<double>(data.size());
}

// Minibatch gradient descent with momentum on the mean of -J_t. The global
// gradient norm is clipped to cfg.clip_norm. A non-finite loss or gradient
// stops training and returns the last finite parameters.
inline TrainResult train_policy(std::span<const StepSample> data, PolicyBundle policy,
                                const ObjectiveConfig& cfg, const TrainConfig& tc) {
  cfg.validate();
  tc.validate();
  if (data.empty()) throw std::invalid_argument("train_policy: empty dataset");
  if (tc.fit_normalizer) policy.normalizer.fit(proprio_rows(data));

  const CartPolicy net = policy.policy();
  std::vector<double> velocity(policy.params.size(), 0.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(tc.seed);

  TrainResult result;
  nlohmann::json epochs = nlohmann::json::array();
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t steps = 0;

  for (int e = 0; e < tc.epochs && !result.diverged; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, norm_sum = 0.0, norm_max = 0.0;
    std::size_t batches = 0, clipped = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(tc.batch_size), order.size() - i);
      std::vector<Observation> views;
      std::vector<const Observation*> obs;
      std::vector<const StepSample*> batch;
      views.reserve(n);
      for (std::size_t k = 0; k < n; ++k) {
        const StepSample& s = data[order[i + k]];
        views.push_back(view_for(s.observation, policy.modality));
        batch.push_back(&s);
      }
      for (const auto& v : views) obs.push_back(&v);

      nn::GradientResult gr;
      try {
        gr = nn::evaluate_gradient(
            [&](const nn::BoundParams& p) {
              const auto out = net.forward(p, obs, policy.normalizer);
              const nn::Var j = counterfactual_objective(out.command, batch, cfg, tc.robot, tc.gait);
              return std::vector<nn::LossTerm>{{"neg_objective", -nn::mean(j)}};
            },
            policy.params);
      } catch (const nn::NonFiniteLoss& err) {
        result.diverged = true;
        result.report["divergence"] = {{"epoch", e}, {"step", steps}, {"error", err.what()}};
        break;
      }
      const double norm = nn::clip_global_norm(gr.gradient.values, cfg.clip_norm);
      if (norm > cfg.clip_norm) ++clipped;
      for (std::size_t k = 0; k < velocity.size(); ++k) {
        velocity[k] = tc.momentum * velocity[k] + gr.gradient.values[k];
      }
      std::vector<double> next = policy.params.values;
      bool finite = true;
      for (std::size_t k = 0; k < next.size(); ++k) {
        next[k] -= tc.learning_rate * velocity[k];
        finite = finite && std::isfinite(next[k]);
      }
      if (!finite) {
        result.diverged = true;
        result.report["divergence"] = {{"epoch", e}, {"step", steps}, {"error", "non-finite parameters"}};
        break;
      }
      policy.params.values = std::move(next);
      loss_sum += gr.loss;
      norm_sum += norm;
      norm_max = std::max(norm_max, norm);
      ++batches;
      ++steps;
    }
    if (batches == 0) break;
    epochs.push_back({{"epoch", e},
                      {"mean_loss", loss_sum / static_cast<double>(batches)},
                      {"mean_grad_norm", norm_sum / static_cast<double>(batches)},
                      {"max_grad_norm", norm_max},
                      {"clipped_fraction", static_cast<double>(clipped) / static_cast<double>(batches)}});
  }

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.report["epochs"] = epochs;
  result.report["steps"] = steps;
  result.report["samples"] = data.size();
  result.report["diverged"] = result.diverged;
  result.report["modality"] = to_string(policy.modality);
  result.report["seconds"] = seconds;
  result.report["config"] = {{"objective", cfg.to_json()},
                             {"train", tc.to_json()},
                             {"policy", policy.config.to_json()}};
  result.policy = std::move(policy);
  return result;
}

inline std::vector<double> epoch_losses(const nlohmann::json& report) {
  std::vector<double> out;
  for (const auto& e : report.at("epochs")) out.push_back(e.at("mean_loss").get<double>());
  return out;
}

}  // namespace cart
