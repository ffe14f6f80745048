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

// Layer set used by the encoders, the command head and the segment embedder.
// Each layer registers its tensors into a ParamLayout and evaluates against
// BoundParams, so the same code path serves inference and training.

#pragma once

#include <string>
#include <vector>

#include "cart/nn/autodiff.hpp"
#include "cart/nn/params.hpp"

namespace cart::nn {

enum class Activation { relu, tanh, identity };

inline Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::relu:
      return relu(x);
    case Activation::tanh:
      return tanh(x);
    case Activation::identity:
      return x;
  }
  return x;
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

// ---- dense -------------------------------------------------------------------

inline Vector dense_forward(const Vector& input, const Matrix& weights, const Vector& bias,
                            Activation act) {
  if (weights.cols() != input.size() || weights.rows() != bias.size()) {
    throw ShapeError("dense_forward: weights " + shape_string(weights) + ", bias " +
                     std::to_string(bias.size()) + ", input " + std::to_string(input.size()));
  }
  Var out = activate(Var::constant(weights * input + bias), act);
  return out.value().col(0);
}

struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;
  Index in = 0;
  Index out = 0;
  Activation act = Activation::identity;

  static Dense add(ParamLayout& layout, const std::string& name, Index in, Index out,
                   Activation act) {
    Dense d;
    d.weight = layout.add_weight(name + ".weight", {out, in}, in, out);
    d.bias = layout.add_bias(name + ".bias", out);
    d.in = in;
    d.out = out;
    d.act = act;
    return d;
  }

  Var operator()(const BoundParams& p, const Var& x) const {
    if (x.rows() != in) {
      throw ShapeError("dense: expected " + std::to_string(in) + " input rows, got " +
                       shape_string(x.value()));
    }
    return activate(add_col(matmul(p[weight], x), p[bias]), act);
  }
};

// ---- convolution ---------------------------------------------------------------

// C x H x W tensor stored as C x (H*W), spatial row-major.
struct Tensor3 {
  SpatialShape shape;
  Matrix data;

  Tensor3() = default;
  Tensor3(Index c, Index h, Index w) : shape{c, h, w}, data(Matrix::Zero(c, h * w)) {}

  double& at(Index c, Index y, Index x) { return data(c, y * shape.width + x); }
  double at(Index c, Index y, Index x) const { return data(c, y * shape.width + x); }
};

// K x C x kh x kw kernels stored as K x (C*kh*kw).
struct KernelBank {
  Index out = 0;
  Index in = 0;
  Index kh = 0;
  Index kw = 0;
  Matrix data;

  KernelBank() = default;
  KernelBank(Index k, Index c, Index h, Index w)
      : out(k), in(c), kh(h), kw(w), data(Matrix::Zero(k, c * h * w)) {}

  double& at(Index k, Index c, Index i, Index j) { return data(k, (c * kh + i) * kw + j); }
};

inline Tensor3 conv2d_forward(const Tensor3& input, const KernelBank& kernels, Index stride) {
  if (kernels.in != input.shape.channels) {
    throw ShapeError("conv2d_forward: kernels expect " + std::to_string(kernels.in) +
                     " channels, input has " + std::to_string(input.shape.channels));
  }
  Var y = conv2d(Var::constant(input.data), input.shape, Var::constant(kernels.data), kernels.kh,
                 kernels.kw, stride);
  Tensor3 out;
  out.shape = {kernels.out, conv_out_extent(input.shape.height, kernels.kh, stride),
               conv_out_extent(input.shape.width, kernels.kw, stride)};
  out.data = y.value();
  return out;
}

struct Conv2d {
  std::size_t weight = 0;
  std::size_t bias = 0;
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 0;
  Index stride = 1;
  Index pad = 0;

  static Conv2d add(ParamLayout& layout, const std::string& name, Index in_c, Index out_c,
                    Index kernel, Index stride, Index pad = 0) {
    Conv2d c;
    c.weight = layout.add_weight(name + ".weight", {out_c, in_c, kernel, kernel},
                                 in_c * kernel * kernel, out_c * kernel * kernel);
    c.bias = layout.add_bias(name + ".bias", out_c);
    c.in_channels = in_c;
    c.out_channels = out_c;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  SpatialShape out_shape(const SpatialShape& in) const {
    return {out_channels, conv_out_extent(in.height, kernel, stride, pad),
            conv_out_extent(in.width, kernel, stride, pad)};
  }

  Var operator()(const BoundParams& p, const Var& x, const SpatialShape& in) const {
    return add_col(conv2d(x, in, p[weight], kernel, kernel, stride, pad), p[bias]);
  }
};

// ---- recurrent cells -------------------------------------------------------------

enum class CellType { lstm, gru };

struct RecurrentCell {
  CellType type = CellType::lstm;
  Index input = 0;
  Index hidden = 0;
  std::size_t w_ih = 0;
  std::size_t w_hh = 0;
  std::size_t b_ih = 0;
  std::size_t b_hh = 0;

  static Index gates(CellType t) { return t == CellType::lstm ? 4 : 3; }

  static RecurrentCell add(ParamLayout& layout, const std::string& name, CellType type,
                           Index input, Index hidden) {
    RecurrentCell c;
    c.type = type;
    c.input = input;
    c.hidden = hidden;
    const Index g = gates(type) * hidden;
    c.w_ih = layout.add_weight(name + ".w_ih", {g, input}, input, hidden);
    c.w_hh = layout.add_weight(name + ".w_hh", {g, hidden}, hidden, hidden);
    c.b_ih = layout.add_bias(name + ".b_ih", g);
    c.b_hh = layout.add_bias(name + ".b_hh", g);
    return c;
  }

  struct State {
    Var h;
    Var c;  // LSTM only
  };

  State initial(Index batch) const {
    return {Var::constant(Matrix::Zero(hidden, batch)), Var::constant(Matrix::Zero(hidden, batch))};
  }

  State step(const BoundParams& p, const Var& x, const State& s) const {
    const Index H = hidden;
    Var gi = add_col(matmul(p[w_ih], x), p[b_ih]);
    Var gh = add_col(matmul(p[w_hh], s.h), p[b_hh]);
    if (type == CellType::lstm) {
      Var g = gi + gh;
      Var i = sigmoid(slice_rows(g, 0, H));
      Var f = sigmoid(slice_rows(g, H, H));
      Var cand = tanh(slice_rows(g, 2 * H, H));
      Var o = sigmoid(slice_rows(g, 3 * H, H));
      Var c = f * s.c + i * cand;
      return {o * tanh(c), c};
    }
    // GRU: gate rows ordered r, z, n; the reset gate multiplies the recurrent
    // candidate contribution.
    Var r = sigmoid(slice_rows(gi, 0, H) + slice_rows(gh, 0, H));
    Var z = sigmoid(slice_rows(gi, H, H) + slice_rows(gh, H, H));
    Var n = tanh(slice_rows(gi, 2 * H, H) + r * slice_rows(gh, 2 * H, H));
    return {(1.0 - z) * n + z * s.h, s.c};
  }
};

// Bidirectional recurrent encoder: final forward state stacked over final
// backward state.
struct BiRNN {
  RecurrentCell forward;
  RecurrentCell backward;

  static BiRNN add(ParamLayout& layout, const std::string& name, CellType type, Index input,
                   Index hidden, bool shared = false) {
    BiRNN b;
    b.forward = RecurrentCell::add(layout, name + ".fwd", type, input, hidden);
    b.backward = shared ? b.forward : RecurrentCell::add(layout, name + ".bwd", type, input, hidden);
    return b;
  }

  Index output_size() const { return 2 * forward.hidden; }

  // seq: T entries of (input x batch).
  Var operator()(const BoundParams& p, const std::vector<Var>& seq) const {
    if (seq.empty()) throw ShapeError("birnn: empty sequence");
    const Index batch = seq.front().cols();
    auto s = forward.initial(batch);
    for (const Var& x : seq) s = forward.step(p, x, s);
    auto b = backward.initial(batch);
    for (auto it = seq.rbegin(); it != seq.rend(); ++it) b = backward.step(p, *it, b);
    return vconcat({s.h, b.h});
  }

  // input: T x d; returns the 2*hidden encoding.
  Vector evaluate(const ParamVector& params, const Matrix& input) const {
    if (input.rows() < 1) throw ShapeError("birnn_forward: empty sequence");
    if (input.cols() != forward.input) {
      throw ShapeError("birnn_forward: input width " + std::to_string(input.cols()) +
                       ", cell expects " + std::to_string(forward.input));
    }
    BoundParams p(params, false);
    std::vector<Var> seq;
    for (Index t = 0; t < input.rows(); ++t) seq.push_back(Var::constant(input.row(t).transpose()));
    return (*this)(p, seq).value().col(0);
  }
};

// ---- multi-head attention ----------------------------------------------------------

struct MultiHeadAttention {
  std::size_t wq = 0, wk = 0, wv = 0, wo = 0;
  std::size_t bq = 0, bk = 0, bv = 0, bo = 0;
  Index dim = 0;
  int heads = 1;

  static MultiHeadAttention add(ParamLayout& layout, const std::string& name, Index dim, int heads) {
    if (heads <= 0 || dim % heads != 0) {
      throw ShapeError("multihead attention: dimension " + std::to_string(dim) +
                       " not divisible by " + std::to_string(heads) + " heads");
    }
    MultiHeadAttention m;
    m.dim = dim;
    m.heads = heads;
    m.wq = layout.add_weight(name + ".wq", {dim, dim}, dim, dim);
    m.wk = layout.add_weight(name + ".wk", {dim, dim}, dim, dim);
    m.wv = layout.add_weight(name + ".wv", {dim, dim}, dim, dim);
    m.wo = layout.add_weight(name + ".wo", {dim, dim}, dim, dim);
    m.bq = layout.add_bias(name + ".bq", dim);
    m.bk = layout.add_bias(name + ".bk", dim);
    m.bv = layout.add_bias(name + ".bv", dim);
    m.bo = layout.add_bias(name + ".bo", dim);
    return m;
  }

  struct Result {
    std::vector<Var> outputs;               // one per query, dim x batch
    std::vector<std::vector<Var>> weights;  // [query][key], heads x batch
  };

  Result operator()(const BoundParams& p, const std::vector<Var>& queries,
                    const std::vector<Var>& keys, const std::vector<Var>& values) const {
    if (keys.size() != values.size() || keys.empty() || queries.empty()) {
      throw ShapeError("attention: need matching non-empty keys and values");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim / heads));
    std::vector<Var> k, v;
    for (std::size_t j = 0; j < keys.size(); ++j) {
      k.push_back(add_col(matmul(p[wk], keys[j]), p[bk]));
      v.push_back(add_col(matmul(p[wv], values[j]), p[bv]));
    }
    Result r;
    for (const Var& query : queries) {
      Var q = add_col(matmul(p[wq], query), p[bq]);
      std::vector<Var> scores;
      for (const Var& kj : k) scores.push_back(head_dot(q, kj, heads, scale));
      std::vector<Var> w = softmax_list(scores);
      Var mixed = head_scale(v[0], w[0], heads);
      for (std::size_t j = 1; j < v.size(); ++j) mixed = mixed + head_scale(v[j], w[j], heads);
      r.outputs.push_back(add_col(matmul(p[wo], mixed), p[bo]));
      r.weights.push_back(std::move(w));
    }
    return r;
  }

  struct Evaluation {
    Matrix output;                        // n x d
    std::vector<Matrix> weights;          // per head: n x m
  };

  // queries n x d, keys/values m x d (one token per row).
  Evaluation evaluate(const ParamVector& params, const Matrix& queries, const Matrix& keys,
                      const Matrix& values) const {
    if (queries.cols() != dim || keys.cols() != dim || values.cols() != dim ||
        keys.rows() != values.rows()) {
      throw ShapeError("multihead_attention: queries " + shape_string(queries) + ", keys " +
                       shape_string(keys) + ", values " + shape_string(values) + " for dim " +
                       std::to_string(dim));
    }
    BoundParams p(params, false);
    std::vector<Var> q, k, v;
    for (Index i = 0; i < queries.rows(); ++i) q.push_back(Var::constant(queries.row(i).transpose()));
    for (Index j = 0; j < keys.rows(); ++j) {
      k.push_back(Var::constant(keys.row(j).transpose()));
      v.push_back(Var::constant(values.row(j).transpose()));
    }
    Result r = (*this)(p, q, k, v);
    Evaluation e;
    e.output.resize(queries.rows(), dim);
    for (Index i = 0; i < queries.rows(); ++i) e.output.row(i) = r.outputs[i].value().col(0).transpose();
    e.weights.assign(heads, Matrix(queries.rows(), keys.rows()));
    for (Index i = 0; i < queries.rows(); ++i) {
      for (Index j = 0; j < keys.rows(); ++j) {
        for (int h = 0; h < heads; ++h) e.weights[h](i, j) = r.weights[i][j].value()(h, 0);
      }
    }
    return e;
  }
};

}  // namespace cart::nn
