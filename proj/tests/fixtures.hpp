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

// Shared builders for objective, TSS and acceptance tests.

#pragma once

#include <random>
#include <vector>

#include "cart/objective/objective.hpp"
#include "cart/objective/policy.hpp"

namespace cart::testing {

// Encoder + head small enough for finite-difference checks (< 5000 values).
inline PolicyConfig tiny_policy_config() {
  PolicyConfig c;
  c.encoder.image_height = 8;
  c.encoder.image_width = 8;
  c.encoder.conv_channels = {2, 2, 2};
  c.encoder.latent = 8;
  c.encoder.mesh_dim = 128;
  c.encoder.mesh_hidden = 4;
  c.encoder.proprio_window = 4;
  c.head_hidden = 8;
  return c;
}

inline ProprioState random_proprio(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  ProprioState p;
  for (double& t : p.joint_torques) t = 10.0 * g(rng);
  for (double& q : p.joint_velocities) q = g(rng);
  for (auto& s : p.foot_slip)
    for (double& c : s) c = 0.01 * g(rng);
  for (auto&& b : p.stance) b = coin(rng);
  return p;
}

inline Observation random_obs(std::mt19937_64& rng, nn::Index h, nn::Index w, nn::Index window,
                              nn::Index mesh_dim = 128) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Observation o;
  o.rgbd = nn::Tensor3(4, h, w);
  for (nn::Index c = 0; c < 4; ++c)
    for (nn::Index k = 0; k < h * w; ++k) o.rgbd.data(c, k) = c == 3 ? 10.0 * u(rng) : u(rng);
  o.mesh = nn::Vector::NullaryExpr(mesh_dim, [&] { return 0.1 * (u(rng) - 0.5); });
  o.proprio.resize(window, kProprioDim);
  for (nn::Index t = 0; t < window; ++t) o.proprio.row(t) = random_proprio(rng).to_vector().transpose();
  return o;
}

inline StepSample random_sample(std::mt19937_64& rng, const PolicyConfig& pc) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  StepSample s;
  s.observation = random_obs(rng, pc.encoder.image_height, pc.encoder.image_width, pc.encoder.proprio_window,
                             pc.encoder.mesh_dim);
  s.command = {0.4 + u(rng), 0.3 * (u(rng) - 0.5), 0.2 * (u(rng) - 0.5), 0.2 + 0.4 * u(rng)};
  s.reference = {1.0, 0.0, 0.0};
  s.prev = random_proprio(rng);
  s.curr = random_proprio(rng);
  return s;
}

inline std::vector<StepSample> random_samples(std::size_t n, std::uint64_t seed, const PolicyConfig& pc) {
  std::mt19937_64 rng(seed);
  std::vector<StepSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_sample(rng, pc));
  return out;
}

}  // namespace cart::testing
