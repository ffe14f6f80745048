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

// Scoring-head training. The hard argmax is relaxed to a softmax over all
// segments; the loss of a context is the expected change in the policy loss
// -J_t when the sampled segment is patched into the live policy:
//
//   L = mean_b sum_i softmax(s_b / T)_i * A_{b,i},   A_{b,i} = L_b(i) - L_b(none)
//
// Segments are restricted to the live policy's output layer, so A is exact
// and cheap: the head's hidden activations are cached per context.

#pragma once

#include <numeric>
#include <random>
#include <span>

#include <json.hpp>

#include "cart/objective/train.hpp"
#include "cart/tss/selection.hpp"

namespace cart::tss {

struct HeadTrainConfig {
  nn::Index hidden = 32;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 3e-3;  // Adam
  double temperature = 1.0;
  bool normalize_advantage = true;
  std::uint64_t seed = 11;

  void validate() const {
    if (hidden < 1 || epochs < 1 || batch_size < 1) throw std::invalid_argument("head training: sizes must be >= 1");
    if (!(learning_rate > 0.0) || !(temperature > 0.0)) {
      throw std::invalid_argument("head training: learning rate and temperature must be > 0");
    }
  }

  nlohmann::json to_json() const {
    return {{"hidden", hidden},       {"epochs", epochs},
            {"batch_size", batch_size}, {"learning_rate", learning_rate},
            {"temperature", temperature}, {"normalize_advantage", normalize_advantage},
            {"seed", seed}};
  }
};

struct HeadContext {
  nn::Vector s_hat;
  nn::Vector advantage;  // one entry per library segment
};

// Per-segment change in -J_t for each sample, with the live policy seeing the
// observation through `view`. Segments outside the output layer are rejected.
inline std::vector<HeadContext> segment_advantages(const PolicyBundle& live, const SegmentLibrary& lib,
                                                   std::span<const StepSample> samples, Modality view,
                                                   const ObjectiveConfig& oc, const sim::RobotModel& m = {},
                                                   const sim::GaitParams& g = {}) {
  const CartPolicy net = live.policy();
  const auto [begin, end] = net.output_layer_range(live.params.layout);
  for (const auto& s : lib.segments) {
    if (s.start < begin || s.start + static_cast<std::size_t>(s.length) > end) {
      throw std::invalid_argument("segment_advantages: library segments must lie in the policy output layer");
    }
  }
  const PolicyConfig& pc = live.config;
  const nn::Index H = pc.head_hidden;
  const nn::Index weight_count = 4 * H;
  const nn::Matrix W = live.params.tensor(live.params.layout.find("head.fc2.weight"));
  const nn::Vector bias = live.params.tensor(live.params.layout.find("head.fc2.bias")).col(0);

  auto squash = [&](const Eigen::Vector4d& u) {
    return BaseCommand{pc.v_scale * std::tanh(u(0)), pc.v_scale * std::tanh(u(1)), pc.v_scale * std::tanh(u(2)),
                       pc.h_center + pc.h_half_range * std::tanh(u(3))};
  };

  std::vector<HeadContext> out;
  const nn::BoundParams bp(live.params, false);
  constexpr std::size_t kChunk = 64;
  for (std::size_t i0 = 0; i0 < samples.size(); i0 += kChunk) {
    const std::size_t n = std::min(kChunk, samples.size() - i0);
    std::vector<Observation> views;
    std::vector<const Observation*> ptrs;
    views.reserve(n);
    for (std::size_t k = 0; k < n; ++k) views.push_back(view_for(samples[i0 + k].observation, view));
    for (const auto& v : views) ptrs.push_back(&v);
    const auto fwd = net.forward(bp, ptrs, live.normalizer);
    for (std::size_t k = 0; k < n; ++k) {
      const StepSample& s = samples[i0 + k];
      const LoggedTerms lt = logged_terms(s, oc, m, g);
      const nn::Vector h = fwd.hidden.value().col(static_cast<nn::Index>(k));
      const Eigen::Vector4d u = W * h + bias;
      const double base = -counterfactual_value(squash(u), s, lt, oc, m, g);
      HeadContext hc;
      hc.s_hat = fwd.s_hat.value().col(static_cast<nn::Index>(k));
      hc.advantage.resize(static_cast<nn::Index>(lib.size()));
      for (std::size_t i = 0; i < lib.size(); ++i) {
        const Segment& seg = lib.segments[i];
        Eigen::Vector4d du = Eigen::Vector4d::Zero();
        for (int j = 0; j < seg.length; ++j) {
          const auto rel = static_cast<nn::Index>(seg.start - begin) + j;
          const double delta = seg.values[static_cast<std::size_t>(j)] - live.params.values[seg.start + static_cast<std::size_t>(j)];
          if (rel < weight_count) {
            du(rel / H) += delta * h(rel % H);
          } else {
            du(rel - weight_count) += delta;
          }
        }
        hc.advantage(static_cast<nn::Index>(i)) = -counterfactual_value(squash(u + du), s, lt, oc, m, g) - base;
      }
      out.push_back(std::move(hc));
    }
  }
  return out;
}

inline void normalize_advantages(std::vector<HeadContext>& ctx) {
  for (auto& c : ctx) {
    const double mean = c.advantage.mean();
    const double sd = std::sqrt((c.advantage.array() - mean).square().mean());
    if (sd > 0.0) c.advantage /= sd;
  }
}

struct HeadGradient {
  double loss = 0.0;
  nn::Matrix W_c;
  nn::Vector v;
};

// Relaxed loss and its analytic gradient over a batch of contexts.
inline HeadGradient head_loss_and_gradient(const ScoringHead& head, const nn::Matrix& embeddings,
                                           std::span<const HeadContext* const> batch, double temperature) {
  const nn::Index n = embeddings.rows();
  const nn::Index Hd = head.hidden();
  const nn::Matrix base = embeddings * head.W_z().transpose();  // n x Hd
  nn::Matrix g_pre_sum = nn::Matrix::Zero(n, Hd);
  HeadGradient g;
  g.W_c = nn::Matrix::Zero(head.W_c.rows(), head.W_c.cols());
  g.v = nn::Vector::Zero(Hd);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const HeadContext* c : batch) {
    const nn::Vector q = head.W_s() * c->s_hat;
    nn::Matrix t = base;
    t.rowwise() += q.transpose();
    t = t.array().tanh();
    const nn::Vector s = t * head.v / temperature;
    const double mx = s.maxCoeff();
    nn::Vector p = (s.array() - mx).exp();
    p /= p.sum();
    const double expected = p.dot(c->advantage);
    g.loss += expected * inv_b;
    const nn::Vector ds = (p.array() * (c->advantage.array() - expected)).matrix() * (inv_b / temperature);
    g.v += t.transpose() * ds;
    // d pre-activation = ds * v^T .* (1 - t^2)
    const nn::Matrix gp = ((ds * head.v.transpose()).array() * (1.0 - t.array().square())).matrix();
    g_pre_sum += gp;
    g.W_c.rightCols(head.context_dim()) += gp.colwise().sum().transpose() * c->s_hat.transpose();
  }
  g.W_c.leftCols(kEmbeddingDim) += g_pre_sum.transpose() * embeddings;
  return g;
}

inline double head_loss(const ScoringHead& head, const nn::Matrix& embeddings,
                        std::span<const HeadContext* const> batch, double temperature) {
  double loss = 0.0;
  for (const HeadContext* c : batch) {
    const nn::Vector s = score_all(embeddings, c->s_hat, head) / temperature;
    nn::Vector p = (s.array() - s.maxCoeff()).exp();
    p /= p.sum();
    loss += p.dot(c->advantage);
  }
  return loss / static_cast<double>(batch.size());
}

struct HeadTrainResult {
  ScoringHead head;
  nlohmann::json report;
};

inline HeadTrainResult train_head(std::vector<HeadContext> contexts, const SegmentLibrary& lib,
                                  nn::Index context_dim, const HeadTrainConfig& cfg) {
  cfg.validate();
  if (contexts.empty()) throw std::invalid_argument("train_head: no contexts");
  if (lib.size() == 0) throw std::invalid_argument("train_head: empty library");
  if (cfg.normalize_advantage) normalize_advantages(contexts);
  ScoringHead head = ScoringHead::random(cfg.hidden, context_dim, cfg.seed);

  // Adam state.
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  nn::Matrix mW = nn::Matrix::Zero(head.W_c.rows(), head.W_c.cols()), vW = mW;
  nn::Vector mv = nn::Vector::Zero(head.v.size()), vv = mv;
  long step = 0;

  std::vector<std::size_t> order(contexts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  nlohmann::json epochs = nlohmann::json::array();
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    int batches = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const HeadContext*> batch;
      for (std::size_t k = i; k < std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size)); ++k) {
        batch.push_back(&contexts[order[k]]);
      }
      const HeadGradient g = head_loss_and_gradient(head, lib.embeddings, batch, cfg.temperature);
      ++step;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      mW = b1 * mW + (1.0 - b1) * g.W_c;
      vW = b2 * vW + (1.0 - b2) * g.W_c.cwiseAbs2();
      mv = b1 * mv + (1.0 - b1) * g.v;
      vv = b2 * vv + (1.0 - b2) * g.v.cwiseAbs2();
      head.W_c.array() -= cfg.learning_rate * (mW.array() / c1) / ((vW.array() / c2).sqrt() + eps);
      head.v.array() -= cfg.learning_rate * (mv.array() / c1) / ((vv.array() / c2).sqrt() + eps);
      loss += g.loss;
      ++batches;
    }
    epochs.push_back({{"epoch", e}, {"mean_loss", loss / batches}});
  }
  HeadTrainResult r;
  r.head = std::move(head);
  r.report = {{"epochs", epochs}, {"contexts", contexts.size()}, {"segments", lib.size()}, {"config", cfg.to_json()}};
  return r;
}

}  // namespace cart::tss
