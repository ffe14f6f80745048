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

#include <gtest/gtest.h>

#include <sstream>

#include "cart/config/pipeline.hpp"
#include "cart/config/run_config.hpp"

namespace cart::config {
namespace {

RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

TEST(RunConfig, EmptyFileGivesDefaults) {
  const RunConfig c = parse("");
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.terrain.kind, sim::TerrainKind::rough);
  EXPECT_DOUBLE_EQ(c.terrain.difficulty, 0.7);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 3e-3);
  EXPECT_EQ(c.tss.library.l_min, 5);
  EXPECT_EQ(c.tss.library.l_max, 20);
  EXPECT_DOUBLE_EQ(c.tss.library.overlap, 0.5);
  EXPECT_EQ(c.tss.region, LibraryRegion::output_layer);
}

TEST(RunConfig, ShippedConfigsParse) {
  const RunConfig d = load_config(std::string(CART_SOURCE_DIR) + "/configs/default.ini");
  EXPECT_EQ(d.to_json(), RunConfig().to_json());
  const RunConfig s = load_config(std::string(CART_SOURCE_DIR) + "/configs/smoke.ini");
  EXPECT_EQ(s.policy.encoder.latent, 8);
  EXPECT_EQ(s.policy.encoder.image_height, 8);
  EXPECT_EQ(s.policy.encoder.mesh_dim, 32);
}

TEST(RunConfig, ValuesAndListsParse) {
  const RunConfig c = parse(
      "[run]\nseed = 42\nmodality = proprio-only\n"
      "[terrain]\nkind = box\ndifficulty = 0.25\n"
      "[sweep]\nspeeds = 0.5, 1.0\nseeds = 7,8,9\n"
      "[collect]\nkinds = flat, slope_up\n"
      "[objective]\nlateral_only = true\n"
      "[tss]\nregion = all\n");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.modality, Modality::proprio_only);
  EXPECT_EQ(c.terrain.kind, sim::TerrainKind::box);
  EXPECT_EQ(c.sweep.speeds, (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(c.sweep.seeds, (std::vector<std::uint64_t>{7, 8, 9}));
  EXPECT_EQ(c.collect.kinds, (std::vector<sim::TerrainKind>{sim::TerrainKind::flat, sim::TerrainKind::slope_up}));
  EXPECT_TRUE(c.objective.lateral_only);
  EXPECT_EQ(c.tss.region, LibraryRegion::all);
}

TEST(RunConfig, SensorSettingsFlowIntoEncoderAndTraining) {
  const RunConfig c = parse("[sensors]\nimage_height = 12\nmesh_rows = 2\nmesh_cols = 3\nproprio_window = 5\n"
                            "[gait]\nduty = 0.6\n[robot]\nmass = 40\n");
  EXPECT_EQ(c.policy.encoder.image_height, 12);
  EXPECT_EQ(c.policy.encoder.mesh_dim, 6);
  EXPECT_EQ(c.policy.encoder.proprio_window, 5);
  EXPECT_DOUBLE_EQ(c.train.gait.duty, 0.6);
  EXPECT_DOUBLE_EQ(c.train.robot.mass, 40.0);
}

TEST(RunConfig, RejectsUnknownKeys) {
  EXPECT_THROW(parse("[train]\nepochz = 3\n"), ConfigError);
  EXPECT_THROW(parse("[nowhere]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse("seed = 3\n"), ConfigError);
}

TEST(RunConfig, RejectsMalformedValues) {
  EXPECT_THROW(parse("[train]\nepochs = three\n"), ConfigError);
  EXPECT_THROW(parse("[train]\nepochs = 3x\n"), ConfigError);
  EXPECT_THROW(parse("[run]\nseed = -1\n"), ConfigError);
  EXPECT_THROW(parse("[objective]\nlateral_only = maybe\n"), ConfigError);
  EXPECT_THROW(parse("[terrain]\nkind = lava\n"), ConfigError);
  EXPECT_THROW(parse("[run]\nmodality = sonar\n"), ConfigError);
  EXPECT_THROW(parse("[tss]\nregion = middle\n"), ConfigError);
  EXPECT_THROW(parse("[eval]\npooling = median\n"), ConfigError);
}

TEST(RunConfig, RejectsInvalidSettings) {
  EXPECT_THROW(parse("[terrain]\ndifficulty = 1.5\n"), ConfigError);
  EXPECT_THROW(parse("[objective]\nsigma_v = 0\n"), ConfigError);
  EXPECT_THROW(parse("[tss]\nl_min = 10\nl_max = 5\n"), ConfigError);
  EXPECT_THROW(parse("[tss]\noverlap = 1\n"), ConfigError);
  EXPECT_THROW(parse("[train]\nepochs = 0\n"), ConfigError);
  EXPECT_THROW(parse("[rollout]\ngoal_x = 100\n"), ConfigError);
  EXPECT_THROW(parse("[policy]\nlatent = 7\n"), ConfigError);
  EXPECT_THROW(parse("[sweep]\nspeeds =\n"), ConfigError);
  EXPECT_THROW(parse("[gait]\nduty = 1\n"), ConfigError);
}

TEST(RunConfig, JsonEchoCoversEverySection) {
  const nlohmann::json j = parse("[run]\nseed = 9\n").to_json();
  for (const char* k : {"seed", "terrain", "goal", "objective", "train", "policy", "modality", "tss", "gait", "robot",
                        "rollout", "sensors", "collect", "sweep", "eval", "paths"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["seed"], 9);
  EXPECT_EQ(j["tss"]["library"]["l_max"], 20);
}

TEST(Pipeline, SpreadSamplesIsEvenAndBounded) {
  std::vector<StepSample> data(10);
  for (std::size_t i = 0; i < data.size(); ++i) data[i].command.v_x = static_cast<double>(i);
  const auto sub = spread_samples(data, 3);
  ASSERT_EQ(sub.size(), 3u);
  EXPECT_EQ(sub[0].command.v_x, 0.0);
  EXPECT_EQ(sub[1].command.v_x, 3.0);
  EXPECT_EQ(sub[2].command.v_x, 6.0);
  EXPECT_EQ(spread_samples(data, 50).size(), 10u);
  EXPECT_TRUE(spread_samples(data, 0).empty());
}

}  // namespace
}  // namespace cart::config
