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

// Procedural heightfields. The grid is square-celled and centered so that
// the robot starts at the world origin; queries outside the grid clamp to
// the border cells.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace cart::sim {

enum class TerrainKind { flat, box, rough, slope_up, slope_down };

inline std::string to_string(TerrainKind k) {
  switch (k) {
    case TerrainKind::flat: return "flat";
    case TerrainKind::box: return "box";
    case TerrainKind::rough: return "rough";
    case TerrainKind::slope_up: return "slope_up";
    case TerrainKind::slope_down: return "slope_down";
  }
  return "flat";
}

inline TerrainKind parse_terrain_kind(const std::string& s) {
  if (s == "flat") return TerrainKind::flat;
  if (s == "box") return TerrainKind::box;
  if (s == "rough") return TerrainKind::rough;
  if (s == "slope_up") return TerrainKind::slope_up;
  if (s == "slope_down") return TerrainKind::slope_down;
  throw std::invalid_argument("unknown terrain kind '" + s + "'");
}

struct TerrainLimits {
  double box_height = 0.25;     // m at difficulty 1
  double rough_amplitude = 0.12;  // m at difficulty 1
  double slope_grade_deg = 20.0;  // degrees at difficulty 1
  double rough_cell = 0.2;        // lattice spacing of the rough noise, m
  double box_size_min = 0.4;
  double box_size_max = 1.2;
  double box_density = 0.15;  // boxes per square meter
};

struct TerrainSpec {
  TerrainKind kind = TerrainKind::flat;
  double difficulty = 0.0;
  std::uint64_t seed = 0;
  double extent_x = 24.0;
  double extent_y = 24.0;
  double resolution = 0.05;

  void validate() const {
    if (!(resolution > 0.0)) throw std::invalid_argument("terrain: resolution must be > 0");
    if (!(difficulty >= 0.0 && difficulty <= 1.0)) {
      throw std::invalid_argument("terrain: difficulty must be in [0, 1]");
    }
    if (!(extent_x > resolution && extent_y > resolution)) {
      throw std::invalid_argument("terrain: extent must exceed one cell");
    }
  }

  nlohmann::json to_json() const {
    return {{"kind", to_string(kind)}, {"difficulty", difficulty}, {"seed", seed},
            {"extent_x", extent_x},    {"extent_y", extent_y},     {"resolution", resolution}};
  }
};

class Heightfield {
 public:
  Heightfield() = default;
  Heightfield(Eigen::Index nx, Eigen::Index ny, double resolution, double x0, double y0)
      : h_(Eigen::MatrixXd::Zero(nx, ny)), res_(resolution), x0_(x0), y0_(y0) {}

  Eigen::Index nx() const { return h_.rows(); }
  Eigen::Index ny() const { return h_.cols(); }
  double resolution() const { return res_; }
  double x0() const { return x0_; }
  double y0() const { return y0_; }
  double x_max() const { return x0_ + res_ * static_cast<double>(nx() - 1); }
  double y_max() const { return y0_ + res_ * static_cast<double>(ny() - 1); }
  const Eigen::MatrixXd& grid() const { return h_; }
  Eigen::MatrixXd& grid() { return h_; }

  bool contains(double x, double y) const {
    return x >= x0_ && x <= x_max() && y >= y0_ && y <= y_max();
  }

  // Bilinear interpolation.
  double height(double x, double y) const {
    const double fx = std::clamp((x - x0_) / res_, 0.0, static_cast<double>(nx() - 1));
    const double fy = std::clamp((y - y0_) / res_, 0.0, static_cast<double>(ny() - 1));
    const Eigen::Index i = std::min<Eigen::Index>(static_cast<Eigen::Index>(fx), nx() - 2);
    const Eigen::Index j = std::min<Eigen::Index>(static_cast<Eigen::Index>(fy), ny() - 2);
    const double tx = fx - static_cast<double>(i), ty = fy - static_cast<double>(j);
    return (1 - tx) * (1 - ty) * h_(i, j) + tx * (1 - ty) * h_(i + 1, j) +
           (1 - tx) * ty * h_(i, j + 1) + tx * ty * h_(i + 1, j + 1);
  }

  Eigen::Vector2d gradient(double x, double y) const {
    const double e = res_;
    return {(height(x + e, y) - height(x - e, y)) / (2 * e),
            (height(x, y + e) - height(x, y - e)) / (2 * e)};
  }

 private:
  Eigen::MatrixXd h_;
  double res_ = 0.05;
  double x0_ = 0.0;
  double y0_ = 0.0;
};

namespace detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace detail

inline Heightfield generate_terrain(const TerrainSpec& spec, const TerrainLimits& lim = {}) {
  spec.validate();
  const auto nx = static_cast<Eigen::Index>(std::floor(spec.extent_x / spec.resolution)) + 1;
  const auto ny = static_cast<Eigen::Index>(std::floor(spec.extent_y / spec.resolution)) + 1;
  // The robot starts 2 m in from the low-x edge, centered in y.
  Heightfield f(nx, ny, spec.resolution, -2.0, -0.5 * spec.resolution * static_cast<double>(ny - 1));
  std::mt19937_64 rng(spec.seed);
  auto& g = f.grid();
  auto xc = [&](Eigen::Index i) { return f.x0() + spec.resolution * static_cast<double>(i); };
  auto yc = [&](Eigen::Index j) { return f.y0() + spec.resolution * static_cast<double>(j); };

  switch (spec.kind) {
    case TerrainKind::flat:
      break;
    case TerrainKind::rough: {
      // Value noise on a coarse lattice, smoothly interpolated; |noise| <= 1.
      const double amp = lim.rough_amplitude * spec.difficulty;
      const double span_x = spec.resolution * static_cast<double>(nx - 1);
      const double span_y = spec.resolution * static_cast<double>(ny - 1);
      const auto lx = static_cast<Eigen::Index>(std::ceil(span_x / lim.rough_cell)) + 2;
      const auto ly = static_cast<Eigen::Index>(std::ceil(span_y / lim.rough_cell)) + 2;
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      Eigen::MatrixXd lattice(lx, ly);
      for (Eigen::Index i = 0; i < lx; ++i)
        for (Eigen::Index j = 0; j < ly; ++j) lattice(i, j) = u(rng);
      for (Eigen::Index i = 0; i < nx; ++i) {
        for (Eigen::Index j = 0; j < ny; ++j) {
          const double fx = spec.resolution * static_cast<double>(i) / lim.rough_cell;
          const double fy = spec.resolution * static_cast<double>(j) / lim.rough_cell;
          const auto a = static_cast<Eigen::Index>(fx), b = static_cast<Eigen::Index>(fy);
          const double tx = detail::smoothstep(fx - static_cast<double>(a));
          const double ty = detail::smoothstep(fy - static_cast<double>(b));
          const double v = (1 - tx) * (1 - ty) * lattice(a, b) + tx * (1 - ty) * lattice(a + 1, b) +
                           (1 - tx) * ty * lattice(a, b + 1) + tx * ty * lattice(a + 1, b + 1);
          g(i, j) = amp * v;
        }
      }
      break;
    }
    case TerrainKind::box: {
      const double hmax = lim.box_height * spec.difficulty;
      const double area = spec.extent_x * spec.extent_y;
      const int count = static_cast<int>(std::round(lim.box_density * area));
      std::uniform_real_distribution<double> ux(f.x0(), f.x_max());
      std::uniform_real_distribution<double> uy(f.y0(), f.y_max());
      std::uniform_real_distribution<double> us(lim.box_size_min, lim.box_size_max);
      std::uniform_real_distribution<double> uh(0.3, 1.0);
      for (int k = 0; k < count; ++k) {
        const double cx = ux(rng), cy = uy(rng), sx = us(rng), sy = us(rng), h = hmax * uh(rng);
        // Keep the start pad clear.
        if (std::abs(cx) < 1.0 + sx / 2 && std::abs(cy) < 1.0 + sy / 2) continue;
        for (Eigen::Index i = 0; i < nx; ++i) {
          if (std::abs(xc(i) - cx) > sx / 2) continue;
          for (Eigen::Index j = 0; j < ny; ++j) {
            if (std::abs(yc(j) - cy) <= sy / 2) g(i, j) = std::max(g(i, j), h);
          }
        }
      }
      break;
    }
    case TerrainKind::slope_up:
    case TerrainKind::slope_down: {
      const double grade = std::tan(lim.slope_grade_deg * spec.difficulty * std::numbers::pi / 180.0);
      const double sign = spec.kind == TerrainKind::slope_up ? 1.0 : -1.0;
      // Level start pad, then a constant grade along +x.
      for (Eigen::Index i = 0; i < nx; ++i) {
        const double run = std::max(0.0, xc(i) - 1.0);
        g.row(i).setConstant(sign * grade * run);
      }
      break;
    }
  }
  return f;
}

}  // namespace cart::sim
