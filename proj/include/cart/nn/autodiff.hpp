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

// Reverse-mode automatic differentiation over dense matrices.
//
// A Var wraps a matrix value. Operations on Vars that (transitively) depend
// on a parameter leaf record their inputs and a backward closure; operations
// on constants record nothing, so inference on constant parameters builds no
// graph at all. Batched data is laid out feature-major: one column per sample.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cart::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

inline std::string shape_string(const Matrix& m) { return shape_string(m.rows(), m.cols()); }

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::uint64_t order = 0;
  bool requires_grad = false;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

inline std::uint64_t next_order() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

}  // namespace detail

class Var {
 public:
  Var() = default;

  explicit Var(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->order = detail::next_order();
  }

  static Var constant(Matrix value) { return Var(std::move(value), false); }
  static Var parameter(Matrix value) { return Var(std::move(value), true); }
  static Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Var(std::move(m), false);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }

  double item() const {
    if (rows() != 1 || cols() != 1) {
      throw ShapeError("item() on non-scalar of shape " + shape_string(value()));
    }
    return node_->value(0, 0);
  }

  // Gradient accumulated by the last backward() pass; zeros if none reached.
  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }

  // Reverse sweep from this scalar. Gradients accumulate into every reachable
  // node that requires grad.
  void backward() const {
    if (rows() != 1 || cols() != 1) {
      throw ShapeError("backward() needs a 1x1 output, got " + shape_string(value()));
    }
    if (!requires_grad()) return;
    std::vector<detail::Node*> nodes;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{node_.get()};
    while (!stack.empty()) {
      detail::Node* n = stack.back();
      stack.pop_back();
      if (!seen.insert(n).second) continue;
      nodes.push_back(n);
      for (const auto& p : n->parents) {
        if (p->requires_grad) stack.push_back(p.get());
      }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->order > b->order; });
    node_->accumulate(Matrix::Ones(1, 1));
    for (detail::Node* n : nodes) {
      if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

template <class Backward>
Var make_result(Matrix value, std::initializer_list<Var> inputs, Backward&& backward) {
  Var out(std::move(value), false);
  bool needs = false;
  for (const Var& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Var& v : inputs) node.parents.push_back(v.node());
    node.backward = std::forward<Backward>(backward);
  }
  return out;
}

template <class Backward>
Var make_result(Matrix value, const std::vector<Var>& inputs, Backward&& backward) {
  Var out(std::move(value), false);
  bool needs = false;
  for (const Var& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Var& v : inputs) node.parents.push_back(v.node());
    node.backward = std::forward<Backward>(backward);
  }
  return out;
}

inline void push(Node& self, std::size_t i, const Matrix& g) {
  if (self.parents[i]->requires_grad) self.parents[i]->accumulate(g);
}

inline bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

inline void check_same(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

// Broadcast-aware reduction of an upstream gradient back to an operand shape.
inline Matrix reduce_to(const Matrix& g, const Matrix& like) {
  if (like.rows() == g.rows() && like.cols() == g.cols()) return g;
  Matrix r(1, 1);
  r(0, 0) = g.sum();
  return r;
}

}  // namespace detail

// ---- elementwise binary (same shape, or one side 1x1) ----------------------

inline Var add(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  if (detail::is_scalar(bv) && !detail::is_scalar(av)) {
    out = av.array() + bv(0, 0);
  } else if (detail::is_scalar(av) && !detail::is_scalar(bv)) {
    out = bv.array() + av(0, 0);
  } else {
    detail::check_same(av, bv, "add");
    out = av + bv;
  }
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& self) {
    detail::push(self, 0, detail::reduce_to(self.grad, self.parents[0]->value));
    detail::push(self, 1, detail::reduce_to(self.grad, self.parents[1]->value));
  });
}

inline Var sub(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  if (detail::is_scalar(bv) && !detail::is_scalar(av)) {
    out = av.array() - bv(0, 0);
  } else if (detail::is_scalar(av) && !detail::is_scalar(bv)) {
    out = (-bv.array()) + av(0, 0);
  } else {
    detail::check_same(av, bv, "sub");
    out = av - bv;
  }
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& self) {
    detail::push(self, 0, detail::reduce_to(self.grad, self.parents[0]->value));
    detail::push(self, 1, detail::reduce_to(-self.grad, self.parents[1]->value));
  });
}

inline Var mul(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  if (detail::is_scalar(bv) && !detail::is_scalar(av)) {
    out = av * bv(0, 0);
  } else if (detail::is_scalar(av) && !detail::is_scalar(bv)) {
    out = bv * av(0, 0);
  } else {
    detail::check_same(av, bv, "mul");
    out = av.cwiseProduct(bv);
  }
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& self) {
    const Matrix& x = self.parents[0]->value;
    const Matrix& y = self.parents[1]->value;
    auto times = [&](const Matrix& other) -> Matrix {
      if (detail::is_scalar(other)) return self.grad * other(0, 0);
      if (detail::is_scalar(self.grad)) return other * self.grad(0, 0);
      return self.grad.cwiseProduct(other);
    };
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(detail::reduce_to(times(y), x));
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(detail::reduce_to(times(x), y));
  });
}

inline Var div(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  if (detail::is_scalar(bv)) {
    out = av / bv(0, 0);
  } else if (detail::is_scalar(av)) {
    out = bv.cwiseInverse() * av(0, 0);
  } else {
    detail::check_same(av, bv, "div");
    out = av.cwiseQuotient(bv);
  }
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& self) {
    const Matrix& x = self.parents[0]->value;
    const Matrix& y = self.parents[1]->value;
    const Index r = self.value.rows();
    const Index c = self.value.cols();
    Matrix xb = detail::is_scalar(x) ? Matrix::Constant(r, c, x(0, 0)) : x;
    Matrix yb = detail::is_scalar(y) ? Matrix::Constant(r, c, y(0, 0)) : y;
    if (self.parents[0]->requires_grad) {
      self.parents[0]->accumulate(detail::reduce_to(self.grad.cwiseQuotient(yb), x));
    }
    if (self.parents[1]->requires_grad) {
      Matrix g = -self.grad.cwiseProduct(xb).cwiseQuotient(yb.cwiseProduct(yb));
      self.parents[1]->accumulate(detail::reduce_to(g, y));
    }
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, double s) { return add(a, Var::scalar(s)); }
inline Var operator+(double s, const Var& a) { return add(Var::scalar(s), a); }
inline Var operator-(const Var& a, double s) { return sub(a, Var::scalar(s)); }
inline Var operator-(double s, const Var& a) { return sub(Var::scalar(s), a); }
inline Var operator*(const Var& a, double s) { return mul(a, Var::scalar(s)); }
inline Var operator*(double s, const Var& a) { return mul(Var::scalar(s), a); }
inline Var operator/(const Var& a, double s) { return div(a, Var::scalar(s)); }
inline Var operator/(double s, const Var& a) { return div(Var::scalar(s), a); }
inline Var operator-(const Var& a) { return mul(a, Var::scalar(-1.0)); }

// ---- elementwise unary -----------------------------------------------------

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Matrix out = a.value().unaryExpr(f);
  return detail::make_result(std::move(out), {a}, [df](detail::Node& self) {
    const Matrix& x = self.parents[0]->value;
    Matrix g(x.rows(), x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
      for (Index i = 0; i < x.rows(); ++i) g(i, j) = self.grad(i, j) * df(x(i, j), self.value(i, j));
    }
    detail::push(self, 0, g);
  });
}

inline Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

// ---- linear algebra and reductions ------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.value()) + " times " + shape_string(b.value()));
  }
  Matrix out = a.value() * b.value();
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& self) {
    if (self.parents[0]->requires_grad) {
      self.parents[0]->accumulate(self.grad * self.parents[1]->value.transpose());
    }
    if (self.parents[1]->requires_grad) {
      self.parents[1]->accumulate(self.parents[0]->value.transpose() * self.grad);
    }
  });
}

// a (r x c) plus column vector b (r x 1) broadcast across columns.
inline Var add_col(const Var& a, const Var& b) {
  if (b.cols() != 1 || b.rows() != a.rows()) {
    throw ShapeError("add_col: " + shape_string(a.value()) + " plus column " +
                     shape_string(b.value()));
  }
  Matrix out = a.value().colwise() + b.value().col(0);
  return detail::make_result(std::move(out), {a, b}, [](detail::Node& self) {
    detail::push(self, 0, self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.rowwise().sum());
  });
}

inline Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return detail::make_result(std::move(out), {a}, [](detail::Node& self) {
    detail::push(self, 0, self.grad.transpose());
  });
}

inline Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make_result(std::move(out), {a}, [](detail::Node& self) {
    const Matrix& x = self.parents[0]->value;
    detail::push(self, 0, Matrix::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return sum(a) * (1.0 / n);
}

// Sum over rows: r x c -> 1 x c.
inline Var sum_rows(const Var& a) {
  Matrix out = a.value().colwise().sum();
  return detail::make_result(std::move(out), {a}, [](detail::Node& self) {
    const Index r = self.parents[0]->value.rows();
    detail::push(self, 0, self.grad.replicate(r, 1));
  });
}

// Mean over columns: r x c -> r x 1.
inline Var mean_cols(const Var& a) {
  Matrix out = a.value().rowwise().mean();
  return detail::make_result(std::move(out), {a}, [](detail::Node& self) {
    const Index c = self.parents[0]->value.cols();
    detail::push(self, 0, self.grad.replicate(1, c) / static_cast<double>(c));
  });
}

inline Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + shape_string(a.value()));
  }
  Matrix out = a.value().middleRows(start, count);
  return detail::make_result(std::move(out), {a}, [start, count](detail::Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const Matrix& x = self.parents[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + shape_string(a.value()));
  }
  Matrix out = a.value().middleCols(start, count);
  return detail::make_result(std::move(out), {a}, [start, count](detail::Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const Matrix& x = self.parents[0]->value;
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

inline Var vconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vconcat: no inputs");
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("vconcat: column mismatch " + shape_string(p.value()));
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return detail::make_result(std::move(out), parts, [](detail::Node& self) {
    Index at = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const Index r = self.parents[i]->value.rows();
      if (self.parents[i]->requires_grad) self.parents[i]->accumulate(self.grad.middleRows(at, r));
      at += r;
    }
  });
}

inline Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hconcat: no inputs");
  Index cols = 0;
  const Index rows = parts.front().rows();
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("hconcat: row mismatch " + shape_string(p.value()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return detail::make_result(std::move(out), parts, [](detail::Node& self) {
    Index at = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const Index c = self.parents[i]->value.cols();
      if (self.parents[i]->requires_grad) self.parents[i]->accumulate(self.grad.middleCols(at, c));
      at += c;
    }
  });
}

// Softmax across the columns of each row.
inline Var softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp();
    out.row(i) = e / e.sum();
  }
  return detail::make_result(std::move(out), {a}, [](detail::Node& self) {
    const Matrix& y = self.value;
    Matrix g(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const double dot = self.grad.row(i).dot(y.row(i));
      g.row(i) = y.row(i).array() * (self.grad.row(i).array() - dot);
    }
    detail::push(self, 0, g);
  });
}

// ---- attention helpers (feature-major, heads split along rows) ---------------

// out(h, b) = scale * sum_{r in head h} q(r, b) * k(r, b)
inline Var head_dot(const Var& q, const Var& k, int heads, double scale) {
  detail::check_same(q.value(), k.value(), "head_dot");
  const Index d = q.rows();
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("head_dot: dimension " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const Index dh = d / heads;
  const Index n = q.cols();
  Matrix out(heads, n);
  Matrix prod = q.value().cwiseProduct(k.value());
  for (int h = 0; h < heads; ++h) out.row(h) = prod.middleRows(h * dh, dh).colwise().sum() * scale;
  return detail::make_result(std::move(out), {q, k}, [heads, dh, scale](detail::Node& self) {
    Matrix expanded(heads * dh, self.grad.cols());
    for (int h = 0; h < heads; ++h) {
      expanded.middleRows(h * dh, dh) = self.grad.row(h).replicate(dh, 1) * scale;
    }
    if (self.parents[0]->requires_grad) {
      self.parents[0]->accumulate(expanded.cwiseProduct(self.parents[1]->value));
    }
    if (self.parents[1]->requires_grad) {
      self.parents[1]->accumulate(expanded.cwiseProduct(self.parents[0]->value));
    }
  });
}

// Softmax over a list of equally shaped score matrices, elementwise across
// the list index. Returns one weight matrix per input.
inline std::vector<Var> softmax_list(const std::vector<Var>& scores) {
  if (scores.empty()) throw ShapeError("softmax_list: no inputs");
  const Index r = scores.front().rows();
  const Index c = scores.front().cols();
  for (const Var& s : scores) detail::check_same(s.value(), scores.front().value(), "softmax_list");
  Matrix m = scores.front().value();
  for (const Var& s : scores) m = m.cwiseMax(s.value());
  std::vector<Matrix> e;
  Matrix total = Matrix::Zero(r, c);
  for (const Var& s : scores) {
    e.push_back((s.value() - m).array().exp().matrix());
    total += e.back();
  }
  // One node holds the stacked weights; per-input outputs are row slices of it.
  Matrix stacked(r * static_cast<Index>(scores.size()), c);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    stacked.middleRows(static_cast<Index>(i) * r, r) = e[i].cwiseQuotient(total);
  }
  const std::size_t count = scores.size();
  Var joint = detail::make_result(std::move(stacked), scores, [r, count](detail::Node& self) {
    Matrix weighted = Matrix::Zero(r, self.value.cols());
    for (std::size_t i = 0; i < count; ++i) {
      const Index at = static_cast<Index>(i) * r;
      weighted += self.grad.middleRows(at, r).cwiseProduct(self.value.middleRows(at, r));
    }
    for (std::size_t i = 0; i < count; ++i) {
      const Index at = static_cast<Index>(i) * r;
      Matrix g = self.value.middleRows(at, r).cwiseProduct(self.grad.middleRows(at, r) - weighted);
      detail::push(self, i, g);
    }
  });
  std::vector<Var> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(slice_rows(joint, static_cast<Index>(i) * r, r));
  return out;
}

// out(r, b) = v(r, b) * w(head(r), b)
inline Var head_scale(const Var& v, const Var& w, int heads) {
  const Index d = v.rows();
  if (heads <= 0 || d % heads != 0 || w.rows() != heads || w.cols() != v.cols()) {
    throw ShapeError("head_scale: values " + shape_string(v.value()) + " weights " +
                     shape_string(w.value()));
  }
  const Index dh = d / heads;
  Matrix out(d, v.cols());
  for (int h = 0; h < heads; ++h) {
    out.middleRows(h * dh, dh) =
        v.value().middleRows(h * dh, dh).array().rowwise() * w.value().row(h).array();
  }
  return detail::make_result(std::move(out), {v, w}, [heads, dh](detail::Node& self) {
    const Matrix& vv = self.parents[0]->value;
    const Matrix& wv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Matrix g(vv.rows(), vv.cols());
      for (int h = 0; h < heads; ++h) {
        g.middleRows(h * dh, dh) =
            self.grad.middleRows(h * dh, dh).array().rowwise() * wv.row(h).array();
      }
      self.parents[0]->accumulate(g);
    }
    if (self.parents[1]->requires_grad) {
      Matrix g(heads, vv.cols());
      Matrix prod = self.grad.cwiseProduct(vv);
      for (int h = 0; h < heads; ++h) g.row(h) = prod.middleRows(h * dh, dh).colwise().sum();
      self.parents[1]->accumulate(g);
    }
  });
}

// ---- spatial ops (single sample, C x (H*W) row-major spatial layout) ----------

struct SpatialShape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
};

inline Index conv_out_extent(Index in, Index kernel, Index stride, Index pad = 0) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Cross-correlation with optional zero padding (pad = 0 is a valid
// correlation). kernels: K x (C*kh*kw) with (c, i, j) row-major.
inline Var conv2d(const Var& input, const SpatialShape& in, const Var& kernels, Index kh, Index kw,
                  Index stride, Index pad = 0) {
  if (input.rows() != in.channels || input.cols() != in.height * in.width) {
    throw ShapeError("conv2d: input " + shape_string(input.value()) + " does not match " +
                     std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" +
                     std::to_string(in.width));
  }
  if (kh > in.height + 2 * pad || kw > in.width + 2 * pad) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than input " + std::to_string(in.height) + "x" +
                     std::to_string(in.width));
  }
  if (stride <= 0 || pad < 0) throw ShapeError("conv2d: stride must be positive, pad non-negative");
  if (kernels.cols() != in.channels * kh * kw) {
    throw ShapeError("conv2d: kernel matrix " + shape_string(kernels.value()) + " expects " +
                     std::to_string(in.channels * kh * kw) + " columns");
  }
  const Index ho = conv_out_extent(in.height, kh, stride, pad);
  const Index wo = conv_out_extent(in.width, kw, stride, pad);
  const Index patch = in.channels * kh * kw;
  // Column index into the input for each (patch row, output position); -1 marks padding.
  std::vector<Index> src(static_cast<std::size_t>(patch * ho * wo), -1);
  Matrix col = Matrix::Zero(patch, ho * wo);
  const Matrix& x = input.value();
  for (Index c = 0; c < in.channels; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        const Index row = (c * kh + i) * kw + j;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index y = oy * stride + i - pad;
          if (y < 0 || y >= in.height) continue;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index xx = ox * stride + j - pad;
            if (xx < 0 || xx >= in.width) continue;
            const Index pos = oy * wo + ox;
            src[static_cast<std::size_t>(row * ho * wo + pos)] = y * in.width + xx;
            col(row, pos) = x(c, y * in.width + xx);
          }
        }
      }
    }
  }
  Matrix out = kernels.value() * col;
  const SpatialShape shape = in;
  return detail::make_result(
      std::move(out), {input, kernels},
      [col = std::move(col), src = std::move(src), shape, kh, kw, ho, wo](detail::Node& self) {
        if (self.parents[1]->requires_grad) {
          self.parents[1]->accumulate(self.grad * col.transpose());
        }
        if (self.parents[0]->requires_grad) {
          Matrix dcol = self.parents[1]->value.transpose() * self.grad;
          Matrix g = Matrix::Zero(shape.channels, shape.height * shape.width);
          const Index per_channel = kh * kw;
          for (Index row = 0; row < dcol.rows(); ++row) {
            const Index c = row / per_channel;
            for (Index pos = 0; pos < ho * wo; ++pos) {
              const Index s = src[static_cast<std::size_t>(row * ho * wo + pos)];
              if (s >= 0) g(c, s) += dcol(row, pos);
            }
          }
          self.parents[0]->accumulate(g);
        }
      });
}

// Adaptive average pooling with floor/ceil bin edges.
inline Var adaptive_avg_pool(const Var& input, const SpatialShape& in, Index out_h, Index out_w) {
  if (input.rows() != in.channels || input.cols() != in.height * in.width) {
    throw ShapeError("adaptive_avg_pool: input " + shape_string(input.value()));
  }
  if (out_h <= 0 || out_w <= 0) {
    throw ShapeError("adaptive_avg_pool: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " invalid for " + std::to_string(in.height) + "x" +
                     std::to_string(in.width));
  }
  // Weight matrix P: (H*W) x (oh*ow); out = x * P.
  Matrix pool = Matrix::Zero(in.height * in.width, out_h * out_w);
  for (Index oy = 0; oy < out_h; ++oy) {
    const Index y0 = (oy * in.height) / out_h;
    const Index y1 = ((oy + 1) * in.height + out_h - 1) / out_h;
    for (Index ox = 0; ox < out_w; ++ox) {
      const Index x0 = (ox * in.width) / out_w;
      const Index x1 = ((ox + 1) * in.width + out_w - 1) / out_w;
      const double w = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      for (Index y = y0; y < y1; ++y) {
        for (Index xx = x0; xx < x1; ++xx) pool(y * in.width + xx, oy * out_w + ox) = w;
      }
    }
  }
  Matrix out = input.value() * pool;
  return detail::make_result(std::move(out), {input}, [pool = std::move(pool)](detail::Node& self) {
    detail::push(self, 0, self.grad * pool.transpose());
  });
}

// Row-major flatten of an r x c matrix into an (r*c) x 1 column.
inline Var flatten(const Var& a) {
  const Index r = a.rows();
  const Index c = a.cols();
  Matrix out(r * c, 1);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) out(i * c + j, 0) = a.value()(i, j);
  }
  return detail::make_result(std::move(out), {a}, [r, c](detail::Node& self) {
    Matrix g(r, c);
    for (Index i = 0; i < r; ++i) {
      for (Index j = 0; j < c; ++j) g(i, j) = self.grad(i * c + j, 0);
    }
    detail::push(self, 0, g);
  });
}

}  // namespace cart::nn
