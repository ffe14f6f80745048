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

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cart/config/run_config.hpp"
#include "cart/tss/head_training.hpp"
#include "cart/tss/library.hpp"
#include "cart/tss/selection.hpp"

namespace cart::config {

// Parameter range the library covers for this policy.
inline std::pair<std::size_t, std::size_t> library_region(const PolicyBundle& b, LibraryRegion region) {
  if (region == LibraryRegion::all) return {0, b.params.size()};
  return b.policy().output_layer_range(b.params.layout);
}

// Library over the given checkpoints. All must share the first one's layout.
inline tss::SegmentLibrary build_policy_library(const std::vector<PolicyBundle>& policies,
                                                const std::vector<std::string>& ids, const RunConfig& cfg) {
  if (policies.empty()) throw std::invalid_argument("library: no checkpoints");
  if (ids.size() != policies.size()) throw std::invalid_argument("library: one id per checkpoint is required");
  for (std::size_t i = 1; i < policies.size(); ++i) {
    if (!(policies[i].params.layout == policies[0].params.layout)) {
      throw std::runtime_error("checkpoint '" + ids[i] + "' has an incompatible layout:\n" +
                               policies[0].params.layout.diff(policies[i].params.layout));
    }
  }
  std::vector<tss::Source> sources;
  for (std::size_t i = 0; i < policies.size(); ++i) sources.push_back({ids[i], policies[i].params.values});
  const auto [begin, end] = library_region(policies[0], cfg.tss.region);
  return tss::build_library(sources, cfg.tss.library, begin, end,
                            tss::fit_embedder(sources, begin, end, cfg.embedder()));
}

// Evenly spaced subset of at most n samples.
inline std::vector<StepSample> spread_samples(std::span<const StepSample> data, std::size_t n) {
  std::vector<StepSample> out;
  if (data.empty() || n == 0) return out;
  const std::size_t step = std::max<std::size_t>(1, data.size() / n);
  for (std::size_t i = 0; i < data.size() && out.size() < n; i += step) out.push_back(data[i]);
  return out;
}

// Trains the scoring head on dataset contexts seen both with and without
// exteroception, so it learns which source suits each sensing condition.
inline tss::HeadTrainResult fit_selection_head(const PolicyBundle& live, const tss::SegmentLibrary& lib,
                                               std::span<const StepSample> data, const RunConfig& cfg) {
  const auto sub = spread_samples(data, static_cast<std::size_t>(cfg.tss.head_contexts));
  auto ctx = tss::segment_advantages(live, lib, sub, Modality::full, cfg.objective, cfg.robot, cfg.gait);
  auto blind = tss::segment_advantages(live, lib, sub, Modality::proprio_only, cfg.objective, cfg.robot, cfg.gait);
  ctx.insert(ctx.end(), std::make_move_iterator(blind.begin()), std::make_move_iterator(blind.end()));
  return tss::train_head(std::move(ctx), lib, live.config.encoder.context_dim(), cfg.tss.head);
}

inline std::filesystem::path head_path(const std::filesystem::path& library_dir) {
  return library_dir / "head.ckpt";
}

}  // namespace cart::config
