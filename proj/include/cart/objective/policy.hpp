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

// High-level policy: context encoder followed by a two-layer command head.

#pragma once

#include <span>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cart/context/encoder.hpp"
#include "cart/nn/params.hpp"
#include "cart/objective/command.hpp"

namespace cart {

enum class Modality { full, proprio_only };

inline std::string to_string(Modality m) { return m == Modality::full ? "full" : "proprio-only"; }

inline Modality parse_modality(const std::string& s) {
  if (s == "full") return Modality::full;
  if (s == "proprio-only" || s == "proprio_only") return Modality::proprio_only;
  throw std::invalid_argument("unknown modality '" + s + "' (expected full or proprio-only)");
}

// Observation as seen by a policy of the given modality.
inline Observation view_for(const Observation& obs, Modality m) {
  return m == Modality::full ? obs : without_exteroception(obs);
}

struct PolicyConfig {
  EncoderConfig encoder;
  nn::Index head_hidden = 128;
  // Output squashing: v = v_scale * tanh(u), h = h_center + h_half_range * tanh(u).
  double v_scale = 1.6;
  double h_center = 0.4;
  double h_half_range = 0.2;

  void validate(const CommandBounds& bounds = {}) const {
    encoder.validate();
    if (head_hidden < 1) throw std::invalid_argument("policy: head_hidden must be >= 1");
    if (!(v_scale > 0.0) || v_scale > bounds.v_max) {
      throw std::invalid_argument("policy: v_scale must lie in (0, v_max]");
    }
    if (!(h_half_range > 0.0) || h_center - h_half_range < bounds.h_min ||
        h_center + h_half_range > bounds.h_max) {
      throw std::invalid_argument("policy: height range exceeds the command bounds");
    }
  }

  nlohmann::json to_json() const {
    return {{"encoder", encoder.to_json()},
            {"head_hidden", head_hidden},
            {"v_scale", v_scale},
            {"h_center", h_center},
            {"h_half_range", h_half_range}};
  }

  static PolicyConfig from_json(const nlohmann::json& j) {
    PolicyConfig c;
    c.encoder = EncoderConfig::from_json(j.at("encoder"));
    c.head_hidden = j.at("head_hidden");
    c.v_scale = j.at("v_scale");
    c.h_center = j.at("h_center");
    c.h_half_range = j.at("h_half_range");
    return c;
  }
};

class CartPolicy {
 public:
  struct Output {
    nn::Var s_hat;    // context x B
    nn::Var hidden;   // head_hidden x B
    nn::Var command;  // 4 x B, rows v_x, v_y, v_z, h
  };

  static CartPolicy add(nn::ParamLayout& layout, const PolicyConfig& cfg) {
    cfg.validate();
    CartPolicy p;
    p.cfg_ = cfg;
    p.encoder_ = ContextEncoder::add(layout, cfg.encoder);
    p.fc1_ = nn::Dense::add(layout, "head.fc1", cfg.encoder.context_dim(), cfg.head_hidden,
                            nn::Activation::tanh);
    p.fc2_ = nn::Dense::add(layout, "head.fc2", cfg.head_hidden, 4, nn::Activation::identity);
    return p;
  }

  static std::pair<CartPolicy, nn::ParamLayout> build(const PolicyConfig& cfg) {
    nn::ParamLayout layout;
    CartPolicy p = add(layout, cfg);
    return {p, layout};
  }

  const PolicyConfig& config() const { return cfg_; }
  const ContextEncoder& encoder() const { return encoder_; }

  // Flattened range [begin, end) of the output layer (weights then bias).
  std::pair<std::size_t, std::size_t> output_layer_range(const nn::ParamLayout& layout) const {
    const auto& w = layout[fc2_.weight];
    const auto& b = layout[fc2_.bias];
    return {w.offset, b.offset + b.size()};
  }

  nn::Var squash(const nn::Var& u) const {
    nn::Matrix scale(4, 1), offset(4, 1);
    scale << cfg_.v_scale, cfg_.v_scale, cfg_.v_scale, cfg_.h_half_range;
    offset << 0.0, 0.0, 0.0, cfg_.h_center;
    nn::Var t = nn::tanh(u);
    nn::Matrix s = scale.replicate(1, u.cols());
    return nn::add_col(t * nn::Var::constant(std::move(s)), nn::Var::constant(offset));
  }

  Output head(const nn::BoundParams& p, const nn::Var& s_hat) const {
    Output o;
    o.s_hat = s_hat;
    o.hidden = fc1_(p, s_hat);
    o.command = squash(fc2_(p, o.hidden));
    return o;
  }

  Output forward(const nn::BoundParams& p, std::span<const Observation* const> obs,
                 const ProprioNormalizer& norm) const {
    return head(p, encoder_.forward(p, obs, norm).s_hat);
  }

  BaseCommand act(const nn::ParamVector& params, const Observation& obs,
                  const ProprioNormalizer& norm) const {
    const Observation* ptr = &obs;
    Output o = forward(nn::BoundParams(params, false), std::span<const Observation* const>(&ptr, 1), norm);
    return to_command(o.command.value().col(0));
  }

  // Head evaluated on a precomputed context vector.
  BaseCommand act_from_context(const nn::ParamVector& params, const nn::Vector& s_hat) const {
    Output o = head(nn::BoundParams(params, false), nn::Var::constant(s_hat));
    return to_command(o.command.value().col(0));
  }

  static BaseCommand to_command(const nn::Vector& c) { return {c(0), c(1), c(2), c(3)}; }

 private:
  PolicyConfig cfg_;
  ContextEncoder encoder_;
  nn::Dense fc1_;
  nn::Dense fc2_;
};

// Trained policy and everything needed to evaluate it.
struct PolicyBundle {
  PolicyConfig config;
  ProprioNormalizer normalizer;
  Modality modality = Modality::full;
  std::uint64_t seed = 0;
  nn::ParamVector params;
  nlohmann::json extra = nlohmann::json::object();

  CartPolicy policy() const {
    auto [p, layout] = CartPolicy::build(config);
    if (!(layout == params.layout)) {
      throw std::runtime_error("checkpoint layout does not match its policy config:\n" +
                               layout.diff(params.layout));
    }
    return p;
  }
};

inline PolicyBundle make_policy(const PolicyConfig& cfg, std::uint64_t seed,
                                Modality modality = Modality::full) {
  PolicyBundle b;
  b.config = cfg;
  b.modality = modality;
  b.seed = seed;
  auto [p, layout] = CartPolicy::build(cfg);
  b.params = nn::ParamVector(layout);
  nn::init_uniform_glorot(b.params, seed);
  return b;
}

inline void save_policy(const std::string& path, const PolicyBundle& b) {
  nn::Checkpoint ck;
  ck.params = b.params;
  ck.metadata = {{"policy", b.config.to_json()},
                 {"normalizer", b.normalizer.to_json()},
                 {"modality", to_string(b.modality)},
                 {"seed", b.seed},
                 {"extra", b.extra}};
  nn::save_checkpoint(path, ck);
}

inline PolicyBundle load_policy(const std::string& path) {
  nn::Checkpoint ck = nn::load_checkpoint(path);
  const auto& m = ck.metadata;
  if (!m.contains("policy")) throw std::runtime_error(path + ": checkpoint has no policy metadata");
  PolicyBundle b;
  b.config = PolicyConfig::from_json(m.at("policy"));
  b.normalizer = ProprioNormalizer::from_json(m.at("normalizer"));
  b.modality = parse_modality(m.at("modality"));
  b.seed = m.value("seed", std::uint64_t{0});
  b.extra = m.value("extra", nlohmann::json::object());
  b.params = std::move(ck.params);
  b.policy();  // layout check
  return b;
}

}  // namespace cart
