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

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cart/nn/params.hpp"

namespace cart::nn {

struct LossTerm {
  std::string name;
  Var value;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using LossFn = std::function<std::vector<LossTerm>(const BoundParams&)>;

struct GradientResult {
  double loss = 0.0;
  Gradient gradient;
};

// Sums the named terms and differentiates the total with respect to every
// parameter in `at`. A non-finite term is reported by name.
inline GradientResult evaluate_gradient(const LossFn& loss_fn, const ParamVector& at) {
  BoundParams bound(at, true);
  std::vector<LossTerm> terms = loss_fn(bound);
  if (terms.empty()) throw std::invalid_argument("gradient_of: loss has no terms");
  std::string bad;
  for (const LossTerm& t : terms) {
    const Matrix& v = t.value.value();
    if (v.rows() != 1 || v.cols() != 1) {
      throw ShapeError("gradient_of: term '" + t.name + "' is " + shape_string(v) + ", not scalar");
    }
    if (!std::isfinite(v(0, 0))) bad += (bad.empty() ? "" : ", ") + t.name + "=" + std::to_string(v(0, 0));
  }
  if (!bad.empty()) throw NonFiniteLoss("non-finite loss term(s): " + bad);
  Var total = terms.front().value;
  for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i].value;
  total.backward();
  GradientResult r;
  r.loss = total.item();
  r.gradient = bound.gather(at.layout);
  for (std::size_t k = 0; k < r.gradient.values.size(); ++k) {
    if (!std::isfinite(r.gradient.values[k])) {
      throw NonFiniteLoss("non-finite gradient entry at index " + std::to_string(k));
    }
  }
  return r;
}

inline Gradient gradient_of(const LossFn& loss_fn, const ParamVector& at) {
  return evaluate_gradient(loss_fn, at).gradient;
}

inline Gradient gradient_of(const std::function<Var(const BoundParams&)>& loss_fn,
                            const ParamVector& at) {
  return gradient_of(
      [&](const BoundParams& p) { return std::vector<LossTerm>{{"loss", loss_fn(p)}}; }, at);
}

inline double global_norm(const std::vector<double>& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

// Rescales g in place so its Euclidean norm is at most max_norm. Returns the
// norm before clipping.
inline double clip_global_norm(std::vector<double>& g, double max_norm) {
  const double n = global_norm(g);
  if (n > max_norm && n > 0.0) {
    const double s = max_norm / n;
    for (double& v : g) v *= s;
  }
  return n;
}

}  // namespace cart::nn
