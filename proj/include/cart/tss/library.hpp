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

// Parameter-subsequence library: overlapping segments of flattened policy
// parameters from one or more checkpoints, each with a unit-norm embedding.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cart/nn/layers.hpp"
#include "cart/util/csv.hpp"

namespace cart::tss {

inline constexpr nn::Index kEmbeddingDim = 128;

struct LibraryParams {
  int l_min = 5;
  int l_max = 20;
  double overlap = 0.5;

  void validate() const {
    if (l_min < 1 || l_min > l_max) throw std::invalid_argument("library: need 1 <= l_min <= l_max");
    if (!(overlap > 0.0 && overlap < 1.0)) throw std::invalid_argument("library: overlap must be in (0, 1)");
  }

  nlohmann::json to_json() const { return {{"l_min", l_min}, {"l_max", l_max}, {"overlap", overlap}}; }
};

inline std::size_t stride(int length, double overlap) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(length * (1.0 - overlap))));
}

// Closed-form number of starts for one (source, length).
inline std::size_t segment_count(std::size_t n, int length, double overlap) {
  const auto l = static_cast<std::size_t>(length);
  if (n < l) return 0;
  return (n - l) / stride(length, overlap) + 1;
}

inline std::size_t total_segment_count(std::size_t n, const LibraryParams& p) {
  std::size_t total = 0;
  for (int l = p.l_min; l <= p.l_max; ++l) total += segment_count(n, l, p.overlap);
  return total;
}

struct Segment {
  int source_id = 0;
  std::size_t start = 0;  // absolute index into the source's flattened parameters
  int length = 0;
  std::vector<double> values;

  bool operator==(const Segment&) const = default;
};

struct Source {
  std::string id;
  std::vector<double> values;  // full flattened parameter vector
};

struct EmbedderConfig {
  nn::Index hidden = 32;
  std::uint64_t seed = 2024;
  double center = 0.0;  // values are standardized before the GRU
  double scale = 1.0;

  nlohmann::json to_json() const {
    return {{"hidden", hidden}, {"seed", seed}, {"center", center}, {"scale", scale}};
  }
  static EmbedderConfig from_json(const nlohmann::json& j) {
    return {j.at("hidden").get<nn::Index>(), j.at("seed").get<std::uint64_t>(), j.at("center").get<double>(),
            j.at("scale").get<double>()};
  }
};

// Fixed, seeded bidirectional GRU embedder over scalar sequences.
class SegmentEmbedder {
 public:
  using Config = EmbedderConfig;

  explicit SegmentEmbedder(Config cfg = Config()) : cfg_(cfg) {
    if (cfg_.hidden < 1 || !(cfg_.scale > 0.0)) throw std::invalid_argument("embedder: bad config");
    nn::ParamLayout layout;
    rnn_ = nn::BiRNN::add(layout, "embed.gru", nn::CellType::gru, 1, cfg_.hidden);
    proj_ = nn::Dense::add(layout, "embed.proj", 2 * cfg_.hidden, kEmbeddingDim, nn::Activation::identity);
    params_ = nn::ParamVector(layout);
    nn::init_uniform_glorot(params_, cfg_.seed);
    bound_ = nn::BoundParams(params_, false);
  }

  const Config& config() const { return cfg_; }

  // Embeds equal-length sequences together; returns one unit-norm column each.
  nn::Matrix embed_batch(const std::vector<std::span<const double>>& seqs) const {
    if (seqs.empty()) return nn::Matrix(kEmbeddingDim, 0);
    const std::size_t len = seqs.front().size();
    if (len == 0) throw std::invalid_argument("embedder: empty segment");
    const auto B = static_cast<nn::Index>(seqs.size());
    std::vector<nn::Var> steps;
    for (std::size_t t = 0; t < len; ++t) {
      nn::Matrix x(1, B);
      for (nn::Index b = 0; b < B; ++b) {
        const auto& s = seqs[static_cast<std::size_t>(b)];
        if (s.size() != len) throw std::invalid_argument("embedder: batch mixes segment lengths");
        x(0, b) = (s[t] - cfg_.center) / cfg_.scale;
      }
      steps.push_back(nn::Var::constant(std::move(x)));
    }
    nn::Matrix z = proj_(bound_, rnn_(bound_, steps)).value();
    for (nn::Index b = 0; b < B; ++b) {
      const double n = z.col(b).norm();
      if (n > 0.0) {
        z.col(b) /= n;
      } else {
        z.col(b).setZero();
        z(0, b) = 1.0;
      }
    }
    return z;
  }

  nn::Vector embed(std::span<const double> values) const { return embed_batch({values}).col(0); }

 private:
  Config cfg_;
  nn::BiRNN rnn_;
  nn::Dense proj_;
  nn::ParamVector params_;
  nn::BoundParams bound_;
};

struct SkippedSource {
  std::string id;
  std::string reason;
};

struct SegmentLibrary {
  LibraryParams params;
  std::size_t region_begin = 0;  // segments cover [region_begin, region_end) of each source
  std::size_t region_end = 0;
  std::vector<std::string> source_ids;
  std::vector<std::size_t> source_sizes;
  SegmentEmbedder::Config embedder;
  std::vector<Segment> segments;     // ordered by (source_id, length, start)
  nn::Matrix embeddings;             // segments x 128, row-major by segment
  std::vector<SkippedSource> skipped;

  std::size_t size() const { return segments.size(); }

  // Number of segments per (source, length).
  std::map<std::pair<int, int>, std::size_t> counts() const {
    std::map<std::pair<int, int>, std::size_t> c;
    for (const auto& s : segments) ++c[{s.source_id, s.length}];
    return c;
  }
};

// Library-wide standardization so the embedder sees unit-scale inputs.
inline SegmentEmbedder::Config fit_embedder(const std::vector<Source>& sources, std::size_t begin,
                                            std::size_t end, SegmentEmbedder::Config cfg = {}) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : sources) {
    const std::size_t e = std::min(end, s.values.size());
    for (std::size_t k = begin; k < e; ++k) {
      sum += s.values[k];
      sq += s.values[k] * s.values[k];
      ++n;
    }
  }
  if (n == 0) return cfg;
  cfg.center = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - cfg.center * cfg.center;
  cfg.scale = var > 1e-24 ? std::sqrt(var) : 1.0;
  return cfg;
}

// Enumerates and embeds all segments of the region [begin, end) of each
// source (end is clamped to the source length). Sources whose region is
// shorter than l_min are skipped and recorded.
inline SegmentLibrary build_library(const std::vector<Source>& sources, const LibraryParams& params,
                                    std::size_t begin = 0, std::size_t end = SIZE_MAX,
                                    std::optional<SegmentEmbedder::Config> embedder = std::nullopt) {
  params.validate();
  if (begin > end) throw std::invalid_argument("library: region begin after end");
  SegmentLibrary lib;
  lib.params = params;
  lib.region_begin = begin;
  lib.region_end = end;
  lib.embedder = embedder ? *embedder : fit_embedder(sources, begin, end);
  const SegmentEmbedder emb(lib.embedder);

  for (std::size_t sid = 0; sid < sources.size(); ++sid) {
    const Source& src = sources[sid];
    lib.source_ids.push_back(src.id);
    lib.source_sizes.push_back(src.values.size());
    const std::size_t e = std::min(end, src.values.size());
    const std::size_t n = e > begin ? e - begin : 0;
    if (n < static_cast<std::size_t>(params.l_min)) {
      lib.skipped.push_back({src.id, "region has " + std::to_string(n) + " values, fewer than l_min = " +
                                         std::to_string(params.l_min)});
      continue;
    }
    for (int l = params.l_min; l <= params.l_max; ++l) {
      const std::size_t s = stride(l, params.overlap);
      for (std::size_t i = 0; i + static_cast<std::size_t>(l) <= n; i += s) {
        Segment seg;
        seg.source_id = static_cast<int>(sid);
        seg.start = begin + i;
        seg.length = l;
        seg.values.assign(src.values.begin() + static_cast<std::ptrdiff_t>(seg.start),
                          src.values.begin() + static_cast<std::ptrdiff_t>(seg.start) + l);
        lib.segments.push_back(std::move(seg));
      }
    }
  }

  lib.embeddings.resize(static_cast<nn::Index>(lib.segments.size()), kEmbeddingDim);
  constexpr std::size_t kBatch = 256;
  std::size_t i = 0;
  while (i < lib.segments.size()) {
    std::vector<std::span<const double>> batch;
    const int len = lib.segments[i].length;
    std::size_t j = i;
    while (j < lib.segments.size() && lib.segments[j].length == len && batch.size() < kBatch) {
      batch.emplace_back(lib.segments[j].values);
      ++j;
    }
    const nn::Matrix z = emb.embed_batch(batch);
    for (std::size_t k = i; k < j; ++k) lib.embeddings.row(static_cast<nn::Index>(k)) = z.col(static_cast<nn::Index>(k - i)).transpose();
    i = j;
  }
  return lib;
}

// Segments whose index range does not fit a parameter vector of size n.
inline std::vector<bool> usable_mask(const SegmentLibrary& lib, std::size_t n) {
  std::vector<bool> ok(lib.size());
  for (std::size_t i = 0; i < lib.size(); ++i) {
    const auto& s = lib.segments[i];
    ok[i] = s.start + static_cast<std::size_t>(s.length) <= n;
  }
  return ok;
}

// ---- file format ---------------------------------------------------------------
//
// <dir>/manifest.json    params, region, sources, embedder, per-(source, length) counts
// <dir>/segments.bin     per segment: i32 source, u64 start, i32 length, f64 values
// <dir>/embeddings.bin   segments x 128 f64, row-major
// All binary data little-endian.

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& where) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw util::DataError(where + ": truncated");
  return v;
}

}  // namespace detail

inline void write_library(const std::filesystem::path& dir, const SegmentLibrary& lib) {
  static_assert(std::endian::native == std::endian::little, "library files assume a little-endian host");
  std::filesystem::create_directories(dir);
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [key, n] : lib.counts()) {
    counts.push_back({{"source", lib.source_ids.at(static_cast<std::size_t>(key.first))}, {"length", key.second}, {"count", n}});
  }
  nlohmann::json sources = nlohmann::json::array();
  for (std::size_t i = 0; i < lib.source_ids.size(); ++i) {
    sources.push_back({{"id", lib.source_ids[i]}, {"size", lib.source_sizes[i]}});
  }
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& s : lib.skipped) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  const nlohmann::json m = {{"format", "cart-segment-library"},
                            {"version", 1},
                            {"params", lib.params.to_json()},
                            {"region", {lib.region_begin, lib.region_end == SIZE_MAX ? nlohmann::json(nullptr) : nlohmann::json(lib.region_end)}},
                            {"sources", sources},
                            {"embedder", lib.embedder.to_json()},
                            {"segments", lib.size()},
                            {"embedding_dim", kEmbeddingDim},
                            {"counts", counts},
                            {"skipped", skipped}};
  {
    std::ofstream os(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    os << m.dump(2) << '\n';
    if (!os) throw std::runtime_error("failed writing library manifest");
  }
  std::ofstream sb(dir / "segments.bin", std::ios::binary | std::ios::trunc);
  for (const auto& s : lib.segments) {
    detail::put<std::int32_t>(sb, s.source_id);
    detail::put<std::uint64_t>(sb, s.start);
    detail::put<std::int32_t>(sb, s.length);
    sb.write(reinterpret_cast<const char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  }
  if (!sb) throw std::runtime_error("failed writing segments.bin");
  std::ofstream eb(dir / "embeddings.bin", std::ios::binary | std::ios::trunc);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = lib.embeddings;
  eb.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!eb) throw std::runtime_error("failed writing embeddings.bin");
}

inline SegmentLibrary read_library(const std::filesystem::path& dir) {
  const std::string where = dir.string();
  std::ifstream ms(dir / "manifest.json", std::ios::binary);
  if (!ms) throw util::DataError(where + ": missing manifest.json");
  SegmentLibrary lib;
  std::size_t n = 0;
  try {
    const auto m = nlohmann::json::parse(ms);
    if (m.at("format") != "cart-segment-library") throw util::DataError(where + ": not a segment library");
    lib.params.l_min = m.at("params").at("l_min");
    lib.params.l_max = m.at("params").at("l_max");
    lib.params.overlap = m.at("params").at("overlap");
    lib.region_begin = m.at("region").at(0);
    lib.region_end = m.at("region").at(1).is_null() ? SIZE_MAX : m.at("region").at(1).get<std::size_t>();
    for (const auto& s : m.at("sources")) {
      lib.source_ids.push_back(s.at("id"));
      lib.source_sizes.push_back(s.at("size"));
    }
    for (const auto& s : m.at("skipped")) lib.skipped.push_back({s.at("id"), s.at("reason")});
    lib.embedder = SegmentEmbedder::Config::from_json(m.at("embedder"));
    n = m.at("segments");
  } catch (const nlohmann::json::exception& e) {
    throw util::DataError(where + "/manifest.json: " + e.what());
  }
  std::ifstream sb(dir / "segments.bin", std::ios::binary);
  if (!sb) throw util::DataError(where + ": missing segments.bin");
  lib.segments.resize(n);
  for (auto& s : lib.segments) {
    s.source_id = detail::get<std::int32_t>(sb, where + "/segments.bin");
    s.start = detail::get<std::uint64_t>(sb, where + "/segments.bin");
    s.length = detail::get<std::int32_t>(sb, where + "/segments.bin");
    if (s.source_id < 0 || static_cast<std::size_t>(s.source_id) >= lib.source_ids.size() || s.length < 1 ||
        s.length > 1 << 20) {
      throw util::DataError(where + "/segments.bin: corrupt segment header");
    }
    s.values.resize(static_cast<std::size_t>(s.length));
    sb.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double)));
    if (!sb) throw util::DataError(where + "/segments.bin: truncated");
  }
  std::ifstream eb(dir / "embeddings.bin", std::ios::binary);
  if (!eb) throw util::DataError(where + ": missing embeddings.bin");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<nn::Index>(n), kEmbeddingDim);
  eb.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!eb) throw util::DataError(where + "/embeddings.bin: truncated");
  lib.embeddings = rm;
  return lib;
}

}  // namespace cart::tss
