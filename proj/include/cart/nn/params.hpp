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

// Flat parameter storage, layouts and the on-disk checkpoint format.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cart/nn/autodiff.hpp"

namespace cart::nn {

enum class TensorKind { weight, bias };

struct TensorDesc {
  std::string name;
  std::vector<Index> shape;
  std::size_t offset = 0;
  TensorKind kind = TensorKind::weight;
  Index fan_in = 0;
  Index fan_out = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(
        std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>()));
  }
  // Matrix view: first axis by product of the rest; 1-D tensors are columns.
  Index view_rows() const { return shape.empty() ? 1 : shape.front(); }
  Index view_cols() const {
    if (shape.size() <= 1) return 1;
    return std::accumulate(shape.begin() + 1, shape.end(), Index{1}, std::multiplies<>());
  }

  bool operator==(const TensorDesc& o) const {
    return name == o.name && shape == o.shape && offset == o.offset;
  }
};

// Ordered list of tensors laid out contiguously in registration order.
class ParamLayout {
 public:
  std::size_t add(std::string name, std::vector<Index> shape, TensorKind kind, Index fan_in,
                  Index fan_out) {
    TensorDesc d{std::move(name), std::move(shape), total_, kind, fan_in, fan_out};
    total_ += d.size();
    tensors_.push_back(std::move(d));
    return tensors_.size() - 1;
  }

  std::size_t add_weight(std::string name, std::vector<Index> shape, Index fan_in, Index fan_out) {
    return add(std::move(name), std::move(shape), TensorKind::weight, fan_in, fan_out);
  }

  std::size_t add_bias(std::string name, Index n) {
    return add(std::move(name), {n}, TensorKind::bias, 0, 0);
  }

  std::size_t total() const { return total_; }
  std::size_t count() const { return tensors_.size(); }
  const std::vector<TensorDesc>& tensors() const { return tensors_; }
  const TensorDesc& operator[](std::size_t i) const { return tensors_.at(i); }

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name == name) return i;
    }
    throw std::out_of_range("no tensor named " + name);
  }

  bool operator==(const ParamLayout& o) const { return tensors_ == o.tensors_; }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : tensors_) {
      arr.push_back({{"name", t.name},
                     {"shape", t.shape},
                     {"offset", t.offset},
                     {"kind", t.kind == TensorKind::bias ? "bias" : "weight"},
                     {"fan_in", t.fan_in},
                     {"fan_out", t.fan_out}});
    }
    return arr;
  }

  static ParamLayout from_json(const nlohmann::json& arr) {
    ParamLayout layout;
    for (const auto& t : arr) {
      const std::size_t id = layout.add(t.at("name").get<std::string>(),
                                        t.at("shape").get<std::vector<Index>>(),
                                        t.at("kind").get<std::string>() == "bias" ? TensorKind::bias
                                                                                   : TensorKind::weight,
                                        t.at("fan_in").get<Index>(), t.at("fan_out").get<Index>());
      if (layout.tensors_[id].offset != t.at("offset").get<std::size_t>()) {
        throw std::runtime_error("layout offsets are not contiguous at tensor " +
                                 layout.tensors_[id].name);
      }
    }
    return layout;
  }

  // Human-readable difference against another layout; empty when equal.
  std::string diff(const ParamLayout& other) const {
    std::ostringstream os;
    const std::size_t n = std::max(count(), other.count());
    for (std::size_t i = 0; i < n; ++i) {
      auto describe = [](const ParamLayout& l, std::size_t k) -> std::string {
        if (k >= l.count()) return "<missing>";
        std::ostringstream s;
        s << l[k].name << "[";
        for (std::size_t j = 0; j < l[k].shape.size(); ++j) s << (j ? "," : "") << l[k].shape[j];
        s << "]@" << l[k].offset;
        return s.str();
      };
      const std::string a = describe(*this, i);
      const std::string b = describe(other, i);
      if (a != b) os << "  #" << i << ": " << a << " != " << b << "\n";
    }
    return os.str();
  }

 private:
  std::vector<TensorDesc> tensors_;
  std::size_t total_ = 0;
};

struct ParamVector {
  ParamLayout layout;
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(ParamLayout l) : layout(std::move(l)), values(layout.total(), 0.0) {}

  std::size_t size() const { return values.size(); }

  Matrix tensor(std::size_t id) const {
    const TensorDesc& d = layout[id];
    Matrix m(d.view_rows(), d.view_cols());
    std::size_t k = d.offset;
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = values[k++];
    }
    return m;
  }

  void set_tensor(std::size_t id, const Matrix& m) {
    const TensorDesc& d = layout[id];
    if (m.rows() != d.view_rows() || m.cols() != d.view_cols()) {
      throw ShapeError("set_tensor " + d.name + ": got " + shape_string(m) + ", expected " +
                       shape_string(d.view_rows(), d.view_cols()));
    }
    std::size_t k = d.offset;
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) values[k++] = m(i, j);
    }
  }
};

struct Gradient {
  std::vector<double> values;
};

inline std::vector<Matrix> unflatten(const ParamVector& p) {
  std::vector<Matrix> out;
  out.reserve(p.layout.count());
  for (std::size_t i = 0; i < p.layout.count(); ++i) out.push_back(p.tensor(i));
  return out;
}

inline std::vector<double> flatten(const ParamLayout& layout, const std::vector<Matrix>& tensors) {
  if (tensors.size() != layout.count()) {
    throw ShapeError("flatten: " + std::to_string(tensors.size()) + " tensors for a layout of " +
                     std::to_string(layout.count()));
  }
  ParamVector p(layout);
  for (std::size_t i = 0; i < tensors.size(); ++i) p.set_tensor(i, tensors[i]);
  return std::move(p.values);
}

// Glorot-uniform weights, zero biases.
inline void init_uniform_glorot(ParamVector& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const TensorDesc& d : p.layout.tensors()) {
    if (d.kind == TensorKind::bias) {
      std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(d.offset), d.size(), 0.0);
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(d.fan_in + d.fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < d.size(); ++k) p.values[d.offset + k] = dist(rng);
  }
}

// Parameters bound as graph leaves for one evaluation.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(const ParamVector& p, bool requires_grad) {
    vars_.reserve(p.layout.count());
    for (std::size_t i = 0; i < p.layout.count(); ++i) vars_.emplace_back(p.tensor(i), requires_grad);
  }
  const Var& operator[](std::size_t id) const { return vars_.at(id); }
  std::size_t size() const { return vars_.size(); }

  Gradient gather(const ParamLayout& layout) const {
    Gradient g;
    g.values.assign(layout.total(), 0.0);
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      const Matrix m = vars_[i].grad();
      std::size_t k = layout[i].offset;
      for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) g.values[k++] = m(r, c);
      }
    }
    return g;
  }

 private:
  std::vector<Var> vars_;
};

// ---- checkpoint files --------------------------------------------------------
//
// "CARTCKPT" | u32 version | u64 header bytes | header JSON | f64 LE values

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'R', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
  } else {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <class T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

inline void write_doubles(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) write_le(os, v);
  }
}

inline void read_doubles(std::istream& is, std::span<double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw std::runtime_error("unexpected end of file");
  } else {
    for (double& v : values) v = read_le<double>(is);
  }
}

}  // namespace detail

struct Checkpoint {
  ParamVector params;
  nlohmann::json metadata = nlohmann::json::object();
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"total", ckpt.params.size()},
                           {"layout", ckpt.params.layout.to_json()},
                           {"metadata", ckpt.metadata}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_doubles(os, ckpt.params.values);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path + ": not a checkpoint file");
  }
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = detail::read_le<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error(path + ": truncated header");
  const auto header = nlohmann::json::parse(text);
  Checkpoint ckpt;
  ckpt.params = ParamVector(ParamLayout::from_json(header.at("layout")));
  if (ckpt.params.size() != header.at("total").get<std::size_t>()) {
    throw std::runtime_error(path + ": layout total disagrees with header");
  }
  detail::read_doubles(is, ckpt.params.values);
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  return ckpt;
}

}  // namespace cart::nn
