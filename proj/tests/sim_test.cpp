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

#include <filesystem>
#include <random>

#include "cart/nn/autodiff.hpp"
#include "cart/sim/rollout.hpp"

namespace cart::sim {
namespace {

TEST(Terrain, FlatIsZeroAtAnyDifficulty) {
  for (double d : {0.0, 0.5, 1.0}) {
    TerrainSpec s;
    s.difficulty = d;
    s.extent_x = s.extent_y = 4.0;
    EXPECT_TRUE(generate_terrain(s).grid().isZero(0.0));
  }
}

TEST(Terrain, SameSeedIsBitwiseIdentical) {
  for (TerrainKind k : {TerrainKind::rough, TerrainKind::box, TerrainKind::slope_up}) {
    TerrainSpec s;
    s.kind = k;
    s.difficulty = 0.8;
    s.seed = 42;
    s.extent_x = s.extent_y = 8.0;
    EXPECT_EQ(generate_terrain(s).grid(), generate_terrain(s).grid());
  }
}

TEST(Terrain, RoughAmplitudeBound) {
  TerrainSpec s;
  s.kind = TerrainKind::rough;
  s.difficulty = 1.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    s.seed = seed;
    EXPECT_LE(generate_terrain(s).grid().cwiseAbs().maxCoeff(), 0.12);
  }
}

TEST(Terrain, BoxAndSlopeScaleWithDifficulty) {
  TerrainSpec s;
  s.kind = TerrainKind::box;
  s.difficulty = 1.0;
  s.seed = 3;
  const double top = generate_terrain(s).grid().maxCoeff();
  EXPECT_GT(top, 0.0);
  EXPECT_LE(top, 0.25);
  s.kind = TerrainKind::slope_up;
  s.difficulty = 0.5;
  const Heightfield f = generate_terrain(s);
  EXPECT_NEAR(f.gradient(5.0, 0.0).x(), std::tan(10.0 * std::numbers::pi / 180.0), 1e-9);
  s.kind = TerrainKind::slope_down;
  EXPECT_LT(generate_terrain(s).height(5.0, 0.0), 0.0);
}

TEST(Terrain, ZeroResolutionRejected) {
  TerrainSpec s;
  s.resolution = 0.0;
  EXPECT_THROW(generate_terrain(s), std::invalid_argument);
}

TEST(InverseKinematics, FullyExtendedBelowHip) {
  RobotModel m;
  for (int leg = 0; leg < kLegs; ++leg) {
    const JointAngles q = ik_leg(m.hip(leg) + Vec3(0, 0, -m.reach()), leg, m);
    EXPECT_NEAR(q[2], 0.0, 1e-9);
    EXPECT_NEAR(q[1], 0.0, 1e-9);
    EXPECT_NEAR(q[0], 0.0, 1e-12);
  }
}

TEST(InverseKinematics, RoundTripOnRandomReachableTargets) {
  RobotModel m;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> r(0.05, m.reach());
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int leg = i % kLegs;
    Vec3 dir(u(rng), u(rng), -std::abs(u(rng)) - 0.2);
    dir.normalize();
    const Vec3 target = m.hip(leg) + dir * r(rng);
    const JointAngles q = ik_leg(target, leg, m);
    worst = std::max(worst, (fk_leg(q, leg, m) - target).norm());
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(InverseKinematics, UnreachableTargetReportsDeficit) {
  RobotModel m;
  try {
    ik_leg(m.hip(1) + Vec3(0, 0, -(m.reach() + 0.01)), 1, m);
    FAIL() << "expected rejection";
  } catch (const UnreachableTarget& e) {
    EXPECT_NEAR(e.deficit(), 0.01, 1e-12);
  }
}

TEST(BaseResponse, LevelContactsGiveZeroTarget) {
  std::vector<Contact> c = {{{0.55, -0.25}, 0.0}, {{0.55, 0.25}, 0.0}, {{-0.55, -0.25}, 0.0}, {{-0.55, 0.25}, 0.0}};
  const auto s = plane_slopes(c);
  ASSERT_TRUE(s);
  const Eigen::Vector2d rp = roll_pitch_from_slopes(*s);
  EXPECT_NEAR(rp.x(), 0.0, 1e-15);
  EXPECT_NEAR(rp.y(), 0.0, 1e-15);
}

TEST(BaseResponse, RaisedLeftFeetGiveRollFromPlaneGeometry) {
  std::vector<Contact> c = {{{0.55, -0.25}, 0.0}, {{0.55, 0.25}, 0.1}, {{-0.55, -0.25}, 0.0}, {{-0.55, 0.25}, 0.1}};
  const Eigen::Vector2d rp = roll_pitch_from_slopes(*plane_slopes(c));
  EXPECT_NEAR(rp.x(), std::atan(0.1 / 0.5), 1e-12);
  EXPECT_NEAR(rp.x(), 0.197, 1e-3);
  EXPECT_NEAR(rp.y(), 0.0, 1e-12);
}

TEST(BaseResponse, RatesDecayUnderConstantTarget) {
  GaitParams g;
  std::vector<Contact> c = {{{0.55, -0.25}, 0.0}, {{0.55, 0.25}, 0.1}, {{-0.55, -0.25}, 0.0}, {{-0.55, 0.25}, 0.1}};
  OrientationState s;
  double peak = 0.0;
  for (int t = 0; t < 200; ++t) {
    s = base_response(c, 0.0, s, g, 0.01);
    peak = std::max(peak, std::abs(s.rate.x()));
  }
  EXPECT_GT(peak, 0.1);
  EXPECT_LT(std::abs(s.rate.x()), 1e-6);
  EXPECT_NEAR(s.angle.x(), std::atan(0.2), 1e-6);
}

TEST(BaseResponse, FewerThanTwoContactsHoldTarget) {
  GaitParams g;
  OrientationState s;
  s.target = Vec3(0.1, -0.05, 0.2);
  s = base_response({{{0.0, 0.0}, 1.0}}, std::nullopt, s, g, 0.01);
  EXPECT_EQ(s.target, Vec3(0.1, -0.05, 0.2));
}

World small_flat_world() {
  TerrainSpec spec;
  spec.extent_x = 24.0;
  spec.extent_y = 4.0;
  spec.resolution = 0.1;
  return World::make(spec);
}

TEST(StepGait, ZeroPerturbationOnFlatHasNoSlip) {
  const World w = small_flat_world();
  RolloutConfig rc;
  rc.timeout = 5.0;
  const RolloutTrace tr = run_rollout(w, fixed_command({0.8, 0, 0, 0.5}), {15.0, 0.0}, rc, 1);
  EXPECT_EQ(mean_trace_deltaq(tr), 0.0);
  EXPECT_LE(vibration_rms(tr).total, 0.005);
}

TEST(StepGait, ConstantVelocityIntegratesExactly) {
  const World w = small_flat_world();
  RolloutConfig rc;
  rc.timeout = 10.0;
  const RolloutTrace tr = run_rollout(w, fixed_command({1.0, 0, 0, 0.5}), {20.0, 0.0}, rc, 2);
  EXPECT_NEAR(tr.base_position.back().x() - tr.base_position.front().x(), 10.0, 0.1);
}

TEST(StepGait, TrotAlternatesDiagonalPairs) {
  const World w = small_flat_world();
  SimState s = initial_state(w.terrain, w.robot, w.gait, {0, 0}, 0.0, 0.5);
  std::mt19937_64 rng(3);
  int switches = 0;
  bool last_a = true;
  for (int t = 0; t < 120; ++t) {
    const ProprioState p = step_gait(s, {0.5, 0, 0, 0.5}, w.terrain, 0.0, w.robot, w.gait, rng);
    const bool a = p.stance[0] && p.stance[3];
    const bool b = p.stance[1] && p.stance[2];
    ASSERT_NE(a, b) << "exactly one diagonal pair in stance";
    EXPECT_EQ(p.stance[0], p.stance[3]);
    EXPECT_EQ(p.stance[1], p.stance[2]);
    if (a != last_a) ++switches;
    last_a = a;
  }
  EXPECT_EQ(switches, 4);  // 1.2 s = two 0.6 s cycles
}

TEST(StepGait, NonFiniteCommandRejected) {
  const World w = small_flat_world();
  SimState s = initial_state(w.terrain, w.robot, w.gait, {0, 0}, 0.0, 0.5);
  std::mt19937_64 rng(3);
  EXPECT_THROW(step_gait(s, {std::nan(""), 0, 0, 0.5}, w.terrain, 0.0, w.robot, w.gait, rng),
               std::invalid_argument);
}

TEST(StepGait, PerturbationCalibration) {
  const World w = small_flat_world();
  RolloutConfig rc;
  rc.timeout = 12.0;
  rc.perturbation = 0.02;
  const RolloutTrace tr = run_rollout(w, fixed_command({0.5, 0, 0, 0.5}), {20.0, 0.0}, rc, 9);
  EXPECT_NEAR(mean_trace_deltaq(tr), 0.02, 0.002);
}

TEST(StepGait, StanceTorquesGrowWhenCrouched) {
  const World w = small_flat_world();
  RolloutConfig rc;
  rc.timeout = 3.0;
  auto mean_effort = [&](double h) {
    rc.initial_height = h;
    const RolloutTrace tr = run_rollout(w, fixed_command({0.5, 0, 0, h}), {20.0, 0.0}, rc, 1);
    double e = 0.0;
    for (const auto& p : tr.proprio) {
      double s = 0.0;
      for (double t : p.joint_torques) s += t * t;
      e += std::sqrt(s);
    }
    return e / static_cast<double>(tr.proprio.size());
  };
  EXPECT_GT(mean_effort(0.3), mean_effort(0.55));
}

TEST(Rollout, GoalAtStartSucceedsImmediately) {
  const World w = small_flat_world();
  const RolloutTrace tr = run_rollout(w, fixed_command({1.0, 0, 0, 0.5}), {0.0, 0.0}, {}, 1);
  EXPECT_TRUE(tr.goal_reached);
  EXPECT_EQ(tr.elapsed, 0.0);
}

TEST(Rollout, FixedSpeedReachesGoalOnSchedule) {
  const World w = small_flat_world();
  const RolloutTrace tr = run_rollout(w, fixed_command({1.0, 0, 0, 0.5}), {5.0, 0.0}, {}, 1);
  ASSERT_TRUE(tr.goal_reached);
  // Success is declared 0.3 m short of the goal.
  EXPECT_NEAR(tr.elapsed, 4.7, 0.02);
  EXPECT_NEAR(tr.elapsed, 5.0, 0.31);
}

TEST(Rollout, SameSeedGivesBitwiseIdenticalTraces) {
  TerrainSpec spec;
  spec.kind = TerrainKind::rough;
  spec.difficulty = 0.7;
  spec.seed = 4;
  spec.extent_x = 12.0;
  spec.extent_y = 4.0;
  const World w = World::make(spec);
  RolloutConfig rc;
  rc.perturbation = 0.01;
  const auto a = run_rollout(w, fixed_command({0.9, 0.1, 0, 0.45}), {6.0, 0.0}, rc, 17);
  const auto b = run_rollout(w, fixed_command({0.9, 0.1, 0, 0.45}), {6.0, 0.0}, rc, 17);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    ASSERT_EQ(a.base_position[t], b.base_position[t]);
    ASSERT_EQ(a.orientation_rates[t], b.orientation_rates[t]);
    ASSERT_EQ(a.proprio[t].to_vector(), b.proprio[t].to_vector());
  }
}

TEST(Rollout, OrientationRatesMatchFiniteDifferences) {
  TerrainSpec spec;
  spec.kind = TerrainKind::rough;
  spec.difficulty = 0.5;
  spec.extent_x = 12.0;
  spec.extent_y = 4.0;
  const World w = World::make(spec);
  const auto tr = run_rollout(w, fixed_command({0.8, 0, 0, 0.5}), {6.0, 0.0}, {}, 5);
  double err = 0.0, scale = 0.0;
  for (std::size_t t = 1; t < tr.size(); ++t) {
    const Vec3 fd = (tr.base_orientation[t] - tr.base_orientation[t - 1]) / tr.dt;
    const Vec3 mid = 0.5 * (tr.orientation_rates[t] + tr.orientation_rates[t - 1]);
    err += (fd - mid).squaredNorm();
    scale += mid.squaredNorm();
  }
  EXPECT_LT(std::sqrt(err / scale), 0.1);
}

TEST(Rollout, ObservationsHaveEncoderShapes) {
  const World w = small_flat_world();
  int calls = 0;
  Controller c{[&](const Decision& d) {
                 EXPECT_NE(d.observation, nullptr);
                 d.observation->validate(128);
                 EXPECT_EQ(d.observation->rgbd.shape.height, 36);
                 EXPECT_EQ(d.observation->proprio.rows(), 16);
                 EXPECT_LE(d.observation->rgbd.data.row(3).maxCoeff(), 10.0);
                 ++calls;
                 return BaseCommand{0.5, 0, 0, 0.5};
               },
               true};
  RolloutConfig rc;
  rc.timeout = 1.0;
  run_rollout(w, c, {10.0, 0.0}, rc, 1);
  EXPECT_EQ(calls, 10);
}

TEST(Sweep, ShapeMonotoneTrendAndDeterminism) {
  SweepConfig sc;
  sc.speeds = {0.4, 1.0};
  sc.seeds = {1, 2};
  sc.duration = 4.0;
  const auto rows = deltaq_vibration_sweep(sc);
  ASSERT_EQ(rows.size(), sc.speeds.size() * sc.deltaq.size());
  for (std::size_t s = 0; s < sc.speeds.size(); ++s) {
    for (std::size_t k = 1; k < sc.deltaq.size(); ++k) {
      EXPECT_GT(rows[s * sc.deltaq.size() + k].rms_total, rows[s * sc.deltaq.size() + k - 1].rms_total);
    }
    EXPECT_LE(rows[s * sc.deltaq.size()].rms_total, 0.005);
  }
  const auto again = deltaq_vibration_sweep(sc);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].rms_total, again[i].rms_total);
}

TEST(TraceFiles, CsvRoundTripIsExact) {
  TerrainSpec spec;
  spec.kind = TerrainKind::rough;
  spec.difficulty = 0.4;
  spec.extent_x = 10.0;
  spec.extent_y = 4.0;
  const World w = World::make(spec);
  RolloutConfig rc;
  rc.timeout = 2.0;
  rc.perturbation = 0.01;
  const auto tr = run_rollout(w, fixed_command({0.7, 0.05, 0, 0.45}), {6.0, 0.0}, rc, 8);
  const auto dir = std::filesystem::temp_directory_path() / "cart_trace_test";
  std::filesystem::create_directories(dir);
  write_trace(dir / "run", tr, {{"label", "test"}});
  nlohmann::json summary;
  const auto back = read_trace(dir / "run.csv", &summary);
  EXPECT_EQ(summary.at("label"), "test");
  ASSERT_EQ(back.size(), tr.size());
  EXPECT_EQ(back.dt, tr.dt);
  for (std::size_t t = 0; t < tr.size(); ++t) {
    EXPECT_EQ(back.time[t], tr.time[t]);
    EXPECT_EQ(back.base_position[t], tr.base_position[t]);
    EXPECT_EQ(back.proprio[t].to_vector(), tr.proprio[t].to_vector());
    EXPECT_EQ(back.commands[t], tr.commands[t]);
  }
  std::filesystem::remove_all(dir);
}

TEST(Sensitivity, TemplatesAgreeForDoubleAndVar) {
  RobotModel m;
  GaitParams g;
  const double h = 0.37, vx = 0.9, vy = 0.2, vz = -0.1;
  const nn::Var H = nn::Var::scalar(h), VX = nn::Var::scalar(vx), VY = nn::Var::scalar(vy),
                VZ = nn::Var::scalar(vz);
  EXPECT_DOUBLE_EQ(slip_sensitivity(H, VY, VZ, 0.5, 3).item(), slip_sensitivity(h, vy, vz, 0.5, 3));
  EXPECT_DOUBLE_EQ(effort_sensitivity(H, VX, m, g).item(), effort_sensitivity(h, vx, m, g));
  EXPECT_DOUBLE_EQ(slip_sensitivity(0.5, 0.0, 0.0, 0.5, 3), 1.0);
  EXPECT_GT(effort_sensitivity(0.3, 1.0, m, g), effort_sensitivity(0.5, 1.0, m, g));
}

}  // namespace
}  // namespace cart::sim
