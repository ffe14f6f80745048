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

// Segment scoring s = v^T tanh(W_c [z; S]), argmax selection and the
// overwrite-evaluate-restore cycle.

#pragma once

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>
#include <tuple>

#include <json.hpp>

#include "cart/nn/params.hpp"
#include "cart/objective/policy.hpp"
#include "cart/tss/library.hpp"

namespace cart::tss {

struct ScoringHead {
  nn::Matrix W_c;  // hidden x (128 + context)
  nn::Vector v;    // hidden

  nn::Index hidden() const { return v.size(); }
  nn::Index context_dim() const { return W_c.cols() - kEmbeddingDim; }
  auto W_z() const { return W_c.leftCols(kEmbeddingDim); }
  auto W_s() const { return W_c.rightCols(W_c.cols() - kEmbeddingDim); }

  static ScoringHead random(nn::Index hidden, nn::Index context_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ScoringHead h;
    const double a = std::sqrt(6.0 / static_cast<double>(kEmbeddingDim + context_dim + hidden));
    std::uniform_real_distribution<double> u(-a, a);
    h.W_c = nn::Matrix::NullaryExpr(hidden, kEmbeddingDim + context_dim, [&] { return u(rng); });
    std::uniform_real_distribution<double> uv(-1.0 / std::sqrt(double(hidden)), 1.0 / std::sqrt(double(hidden)));
    h.v = nn::Vector::NullaryExpr(hidden, [&] { return uv(rng); });
    return h;
  }

  void check(nn::Index context_dim) const {
    if (W_c.rows() != v.size()) throw nn::ShapeError("scoring head: W_c rows must equal |v|");
    if (W_c.cols() != kEmbeddingDim + context_dim) {
      throw nn::ShapeError("scoring head: W_c has " + std::to_string(W_c.cols()) + " columns, expected " +
                           std::to_string(kEmbeddingDim + context_dim));
    }
  }

  nn::ParamVector to_params() const {
    nn::ParamLayout layout;
    const auto w = layout.add_weight("tss.W_c", {W_c.rows(), W_c.cols()}, W_c.cols(), W_c.rows());
    const auto b = layout.add_weight("tss.v", {v.size()}, v.size(), 1);
    nn::ParamVector p(layout);
    p.set_tensor(w, W_c);
    p.set_tensor(b, v);
    return p;
  }

  static ScoringHead from_params(const nn::ParamVector& p) {
    ScoringHead h;
    h.W_c = p.tensor(p.layout.find("tss.W_c"));
    h.v = p.tensor(p.layout.find("tss.v")).col(0);
    return h;
  }
};

inline void save_head(const std::string& path, const ScoringHead& h, const nlohmann::json& meta = {}) {
  nn::Checkpoint ck;
  ck.params = h.to_params();
  ck.metadata = {{"kind", "tss-scoring-head"}, {"info", meta}};
  nn::save_checkpoint(path, ck);
}

inline ScoringHead load_head(const std::string& path) {
  const nn::Checkpoint ck = nn::load_checkpoint(path);
  if (ck.metadata.value("kind", "") != "tss-scoring-head") {
    throw std::runtime_error(path + ": not a scoring-head checkpoint");
  }
  return ScoringHead::from_params(ck.params);
}

inline double score_segment(const nn::Vector& embedding, const nn::Vector& context, const ScoringHead& head) {
  if (embedding.size() != kEmbeddingDim) throw nn::ShapeError("score_segment: embedding must have 128 entries");
  head.check(context.size());
  return head.v.dot((head.W_z() * embedding + head.W_s() * context).array().tanh().matrix());
}

// Scores of every segment for one context.
inline nn::Vector score_all(const nn::Matrix& embeddings, const nn::Vector& context, const ScoringHead& head) {
  head.check(context.size());
  if (embeddings.cols() != kEmbeddingDim) throw nn::ShapeError("score_all: embeddings must be n x 128");
  const nn::Vector q = head.W_s() * context;
  nn::Matrix a = embeddings * head.W_z().transpose();
  a.rowwise() += q.transpose();
  return a.array().tanh().matrix() * head.v;
}

struct Selection {
  std::size_t index = 0;
  int source_id = 0;
  std::size_t start = 0;
  int length = 0;
  double score = 0.0;
};

// Argmax over usable segments; ties go to the lowest (source_id, length, start).
inline Selection select_from_scores(const SegmentLibrary& lib, const nn::Vector& scores,
                                    const std::vector<bool>* usable = nullptr) {
  if (lib.size() == 0) throw std::invalid_argument("select_segment: empty library");
  if (static_cast<std::size_t>(scores.size()) != lib.size()) throw nn::ShapeError("select_segment: score count mismatch");
  std::size_t best = lib.size();
  auto key = [&](std::size_t i) {
    const auto& s = lib.segments[i];
    return std::make_tuple(s.source_id, s.length, s.start);
  };
  for (std::size_t i = 0; i < lib.size(); ++i) {
    if (usable && !(*usable)[i]) continue;
    const double s = scores(static_cast<nn::Index>(i));
    if (best == lib.size() || s > scores(static_cast<nn::Index>(best)) ||
        (s == scores(static_cast<nn::Index>(best)) && key(i) < key(best))) {
      best = i;
    }
  }
  if (best == lib.size()) throw std::invalid_argument("select_segment: no usable segment");
  const auto& seg = lib.segments[best];
  return {best, seg.source_id, seg.start, seg.length, scores(static_cast<nn::Index>(best))};
}

inline Selection select_segment(const SegmentLibrary& lib, const nn::Vector& context, const ScoringHead& head,
                                const std::vector<bool>* usable = nullptr) {
  if (lib.size() == 0) throw std::invalid_argument("select_segment: empty library");
  return select_from_scores(lib, score_all(lib.embeddings, context, head), usable);
}

// Overwrites params[start, start + length) with the segment and returns the
// values it replaced.
inline std::vector<double> apply_segment(std::vector<double>& params, const Segment& seg) {
  if (seg.start + static_cast<std::size_t>(seg.length) > params.size()) {
    throw std::out_of_range("apply_segment: segment exceeds the parameter vector");
  }
  const auto first = params.begin() + static_cast<std::ptrdiff_t>(seg.start);
  std::vector<double> saved(first, first + seg.length);
  std::copy(seg.values.begin(), seg.values.end(), first);
  return saved;
}

inline void restore_segment(std::vector<double>& params, const Segment& seg, const std::vector<double>& saved) {
  std::copy(saved.begin(), saved.end(), params.begin() + static_cast<std::ptrdiff_t>(seg.start));
}

// Live policy plus library and scoring head.
class TssPolicy {
 public:
  TssPolicy(PolicyBundle& live, const SegmentLibrary& lib, const ScoringHead& head)
      : live_(&live), net_(live.policy()), lib_(&lib), head_(&head) {
    head.check(net_.config().encoder.context_dim());
    usable_ = usable_mask(lib, live.params.size());
    head_range_ = net_.output_layer_range(live.params.layout);
  }

  const std::vector<bool>& usable() const { return usable_; }
  const CartPolicy& net() const { return net_; }

  // Builds the context, selects a segment, applies it, evaluates the policy
  // and restores the prior parameter values.
  BaseCommand act(const Observation& raw, Selection* selection = nullptr) const {
    const Observation obs = view_for(raw, live_->modality);
    const ContextState ctx = net_.encoder().build_context_state(live_->params, obs, live_->normalizer);
    const Selection sel = select_segment(*lib_, ctx.s_hat, *head_, &usable_);
    const Segment& seg = lib_->segments[sel.index];
    auto& values = live_->params.values;
    const std::vector<double> saved = apply_segment(values, seg);
    BaseCommand cmd;
    try {
      const bool head_only = seg.start >= head_range_.first &&
                             seg.start + static_cast<std::size_t>(seg.length) <= head_range_.second;
      cmd = head_only ? net_.act_from_context(live_->params, ctx.s_hat)
                      : net_.act(live_->params, obs, live_->normalizer);
    } catch (...) {
      restore_segment(values, seg, saved);
      throw;
    }
    restore_segment(values, seg, saved);
    if (selection) *selection = sel;
    return cmd;
  }

 private:
  PolicyBundle* live_;
  CartPolicy net_;
  const SegmentLibrary* lib_;
  const ScoringHead* head_;
  std::vector<bool> usable_;
  std::pair<std::size_t, std::size_t> head_range_;
};

// ---- latency benchmark ---------------------------------------------------------

// Library of exactly `n` segments enumerated from a synthetic source, with
// random unit-norm embeddings standing in for precomputed ones.
inline SegmentLibrary synthetic_library(std::size_t n, std::uint64_t seed, const LibraryParams& params = {}) {
  params.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  SegmentLibrary lib;
  lib.params = params;
  lib.source_ids = {"synthetic"};
  // Smallest source length whose library reaches n segments.
  std::size_t lo = static_cast<std::size_t>(params.l_max), hi = lo;
  while (total_segment_count(hi, params) < n) hi *= 2;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (total_segment_count(mid, params) >= n) hi = mid; else lo = mid + 1;
  }
  lib.source_sizes = {lo};
  lib.region_end = lo;
  std::vector<double> values(lo);
  for (double& x : values) x = 0.1 * g(rng);
  for (int l = params.l_min; l <= params.l_max && lib.size() < n; ++l) {
    const std::size_t s = stride(l, params.overlap);
    for (std::size_t i = 0; i + static_cast<std::size_t>(l) <= lo && lib.size() < n; i += s) {
      lib.segments.push_back({0, i, l, std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(i),
                                                           values.begin() + static_cast<std::ptrdiff_t>(i) + l)});
    }
  }
  lib.embeddings = nn::Matrix::NullaryExpr(static_cast<nn::Index>(n), kEmbeddingDim, [&] { return g(rng); });
  lib.embeddings.rowwise().normalize();
  return lib;
}

struct LatencyReport {
  std::size_t segments = 0;
  int trials = 0;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;

  nlohmann::json to_json() const {
    return {{"segments", segments}, {"trials", trials}, {"mean_ms", mean_ms},
            {"p95_ms", p95_ms},     {"min_ms", min_ms}, {"max_ms", max_ms}};
  }
};

// Wall time of score-all + argmax for `trials` random contexts.
inline LatencyReport benchmark_selection(const SegmentLibrary& lib, const ScoringHead& head, int trials,
                                         std::uint64_t seed = 0) {
  if (trials < 1) throw std::invalid_argument("benchmark_selection: trials must be >= 1");
  if (lib.size() == 0) throw std::invalid_argument("benchmark_selection: empty library");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> ms;
  volatile std::size_t sink = 0;
  for (int t = 0; t < trials; ++t) {
    const nn::Vector ctx = nn::Vector::NullaryExpr(head.context_dim(), [&] { return g(rng); });
    const auto t0 = std::chrono::steady_clock::now();
    sink = sink + select_segment(lib, ctx, head).index;
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  LatencyReport r;
  r.segments = lib.size();
  r.trials = trials;
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  r.p95_ms = sorted[std::min(sorted.size() - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1)];
  r.min_ms = sorted.front();
  r.max_ms = sorted.back();
  return r;
}

}  // namespace cart::tss
