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

// Context encoders: visual (conv stack), terrain mesh (MLP), proprioception
// (bidirectional LSTM), and the attention fusion that produces the context
// vector s_hat = [c_t; z_p].

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "cart/context/observation.hpp"
#include "cart/nn/layers.hpp"

namespace cart {

struct EncoderConfig {
  nn::Index image_height = 36;
  nn::Index image_width = 64;
  double depth_max_range = 10.0;  // meters
  bool visual_zero_mean = false;
  std::vector<nn::Index> conv_channels = {8, 16, 16};
  nn::Index conv_kernel = 3;
  std::vector<nn::Index> conv_strides = {2, 2, 1};
  nn::Index pool_height = 2;
  nn::Index pool_width = 2;
  nn::Index latent = 256;
  nn::Index mesh_dim = 128;
  nn::Index mesh_hidden = 256;
  nn::Activation mesh_hidden_activation = nn::Activation::relu;
  nn::Activation mesh_output_activation = nn::Activation::identity;
  nn::Index proprio_window = 16;
  int attention_heads = 4;

  nn::Index proprio_hidden() const { return latent / 2; }
  nn::Index context_dim() const { return 2 * latent; }

  void validate() const {
    if (conv_channels.size() != 3 || conv_strides.size() != 3) {
      throw std::invalid_argument("encoder: exactly three convolution layers are required");
    }
    if (latent <= 0 || latent % 2 != 0) throw std::invalid_argument("encoder: latent must be even");
    if (attention_heads <= 0 || latent % attention_heads != 0) {
      throw std::invalid_argument("encoder: latent not divisible by attention heads");
    }
    if (depth_max_range <= 0.0) throw std::invalid_argument("encoder: depth range must be positive");
    if (proprio_window < 1) throw std::invalid_argument("encoder: proprio window must be >= 1");
    if (image_height < 8 || image_width < 8) throw std::invalid_argument("encoder: image must be >= 8x8");
  }

  nlohmann::json to_json() const {
    auto act = [](nn::Activation a) {
      return a == nn::Activation::relu ? "relu" : a == nn::Activation::tanh ? "tanh" : "identity";
    };
    return {{"image_height", image_height},
            {"image_width", image_width},
            {"depth_max_range", depth_max_range},
            {"visual_zero_mean", visual_zero_mean},
            {"conv_channels", conv_channels},
            {"conv_kernel", conv_kernel},
            {"conv_strides", conv_strides},
            {"pool_height", pool_height},
            {"pool_width", pool_width},
            {"latent", latent},
            {"mesh_dim", mesh_dim},
            {"mesh_hidden", mesh_hidden},
            {"mesh_hidden_activation", act(mesh_hidden_activation)},
            {"mesh_output_activation", act(mesh_output_activation)},
            {"proprio_window", proprio_window},
            {"attention_heads", attention_heads}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.image_height = j.at("image_height");
    c.image_width = j.at("image_width");
    c.depth_max_range = j.at("depth_max_range");
    c.visual_zero_mean = j.at("visual_zero_mean");
    c.conv_channels = j.at("conv_channels").get<std::vector<nn::Index>>();
    c.conv_kernel = j.at("conv_kernel");
    c.conv_strides = j.at("conv_strides").get<std::vector<nn::Index>>();
    c.pool_height = j.at("pool_height");
    c.pool_width = j.at("pool_width");
    c.latent = j.at("latent");
    c.mesh_dim = j.at("mesh_dim");
    c.mesh_hidden = j.at("mesh_hidden");
    c.mesh_hidden_activation = nn::parse_activation(j.at("mesh_hidden_activation"));
    c.mesh_output_activation = nn::parse_activation(j.at("mesh_output_activation"));
    c.proprio_window = j.at("proprio_window");
    c.attention_heads = j.at("attention_heads");
    return c;
  }
};

// Per-channel standardization of proprioception, frozen after fitting.
struct ProprioNormalizer {
  nn::Vector mean = nn::Vector::Zero(kProprioDim);
  nn::Vector scale = nn::Vector::Ones(kProprioDim);

  void fit(const std::vector<nn::Vector>& rows) {
    if (rows.empty()) return;
    nn::Vector m = nn::Vector::Zero(kProprioDim);
    for (const auto& r : rows) m += r;
    m /= static_cast<double>(rows.size());
    nn::Vector v = nn::Vector::Zero(kProprioDim);
    for (const auto& r : rows) v += (r - m).cwiseAbs2();
    v /= static_cast<double>(rows.size());
    mean = m;
    for (int i = 0; i < kProprioDim; ++i) scale(i) = v(i) > 1e-12 ? std::sqrt(v(i)) : 1.0;
  }

  nn::Matrix apply(const nn::Matrix& window) const {
    return (window.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  nlohmann::json to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
  }

  static ProprioNormalizer from_json(const nlohmann::json& j) {
    ProprioNormalizer n;
    auto m = j.at("mean").get<std::vector<double>>();
    auto s = j.at("scale").get<std::vector<double>>();
    if (m.size() != kProprioDim || s.size() != kProprioDim) {
      throw std::runtime_error("normalizer must have 40 channels");
    }
    n.mean = Eigen::Map<nn::Vector>(m.data(), kProprioDim);
    n.scale = Eigen::Map<nn::Vector>(s.data(), kProprioDim);
    return n;
  }
};

class ContextEncoder {
 public:
  struct Batch {
    nn::Var z_v;
    nn::Var z_m;
    nn::Var z_p;
    nn::Var c_t;
    nn::Var s_hat;
  };

  static ContextEncoder add(nn::ParamLayout& layout, const EncoderConfig& cfg) {
    cfg.validate();
    ContextEncoder e;
    e.cfg_ = cfg;
    nn::Index in_c = 4;
    nn::SpatialShape shape{4, cfg.image_height, cfg.image_width};
    for (int i = 0; i < 3; ++i) {
      e.conv_[i] = nn::Conv2d::add(layout, "visual.conv" + std::to_string(i + 1), in_c,
                                   cfg.conv_channels[i], cfg.conv_kernel, cfg.conv_strides[i],
                                   cfg.conv_kernel / 2);
      shape = e.conv_[i].out_shape(shape);
      in_c = cfg.conv_channels[i];
    }
    e.visual_proj_ = nn::Dense::add(layout, "visual.proj", in_c * cfg.pool_height * cfg.pool_width,
                                    cfg.latent, nn::Activation::identity);
    e.mesh1_ = nn::Dense::add(layout, "mesh.fc1", cfg.mesh_dim, cfg.mesh_hidden,
                              cfg.mesh_hidden_activation);
    e.mesh2_ = nn::Dense::add(layout, "mesh.fc2", cfg.mesh_hidden, cfg.latent,
                              cfg.mesh_output_activation);
    e.proprio_ = nn::BiRNN::add(layout, "proprio.lstm", nn::CellType::lstm, kProprioDim,
                                cfg.proprio_hidden());
    e.attention_ = nn::MultiHeadAttention::add(layout, "fusion.attn", cfg.latent, cfg.attention_heads);
    return e;
  }

  const EncoderConfig& config() const { return cfg_; }

  // Depth scaled by the configured range; optional per-channel zero mean.
  nn::Matrix preprocess_visual(const nn::Tensor3& rgbd) const {
    if (rgbd.shape.channels != 4) {
      throw nn::ShapeError("encode_visual: expected 4 channels, got " +
                           std::to_string(rgbd.shape.channels));
    }
    if (rgbd.shape.height < 8 || rgbd.shape.width < 8) {
      throw nn::ShapeError("encode_visual: image must be at least 8x8");
    }
    nn::Matrix x = rgbd.data;
    x.row(3) /= cfg_.depth_max_range;
    if (cfg_.visual_zero_mean) x = x.colwise() - x.rowwise().mean();
    return x;
  }

  nn::Var visual(const nn::BoundParams& p, const nn::Tensor3& rgbd) const {
    nn::SpatialShape shape = rgbd.shape;
    nn::Var x = nn::Var::constant(preprocess_visual(rgbd));
    for (const auto& conv : conv_) {
      x = nn::relu(conv(p, x, shape));
      shape = conv.out_shape(shape);
    }
    x = nn::adaptive_avg_pool(x, shape, cfg_.pool_height, cfg_.pool_width);
    return visual_proj_(p, nn::flatten(x));
  }

  nn::Var mesh(const nn::BoundParams& p, const nn::Var& features) const {
    return mesh2_(p, mesh1_(p, features));
  }

  // windows: T entries of 40 x batch, already normalized.
  nn::Var proprio(const nn::BoundParams& p, const std::vector<nn::Var>& steps) const {
    return proprio_(p, steps);
  }

  nn::Var fuse(const nn::BoundParams& p, const nn::Var& z_v, const nn::Var& z_m) const {
    auto r = attention_(p, {z_v, z_m}, {z_v, z_m}, {z_v, z_m});
    // Mean over the two query positions.
    return (r.outputs[0] + r.outputs[1]) * 0.5;
  }

  Batch forward(const nn::BoundParams& p, std::span<const Observation* const> obs,
                const ProprioNormalizer& norm) const {
    if (obs.empty()) throw std::invalid_argument("encoder: empty batch");
    const nn::Index batch = static_cast<nn::Index>(obs.size());
    const nn::Index T = obs.front()->proprio.rows();
    std::vector<nn::Var> visual_cols;
    nn::Matrix mesh_in(cfg_.mesh_dim, batch);
    std::vector<nn::Matrix> steps(static_cast<std::size_t>(T), nn::Matrix(kProprioDim, batch));
    for (nn::Index b = 0; b < batch; ++b) {
      const Observation& o = *obs[static_cast<std::size_t>(b)];
      o.validate(cfg_.mesh_dim);
      if (o.proprio.rows() != T) throw nn::ShapeError("encoder: mixed proprio window lengths in batch");
      visual_cols.push_back(visual(p, o.rgbd));
      mesh_in.col(b) = o.mesh;
      const nn::Matrix w = norm.apply(o.proprio);
      for (nn::Index t = 0; t < T; ++t) steps[static_cast<std::size_t>(t)].col(b) = w.row(t).transpose();
    }
    Batch out;
    out.z_v = visual_cols.size() == 1 ? visual_cols.front() : nn::hconcat(visual_cols);
    out.z_m = mesh(p, nn::Var::constant(std::move(mesh_in)));
    std::vector<nn::Var> seq;
    for (auto& s : steps) seq.push_back(nn::Var::constant(std::move(s)));
    out.z_p = proprio(p, seq);
    out.c_t = fuse(p, out.z_v, out.z_m);
    out.s_hat = nn::vconcat({out.c_t, out.z_p});
    return out;
  }

  // ---- single-observation evaluation on constant parameters ----

  nn::Vector encode_visual(const nn::ParamVector& params, const nn::Tensor3& rgbd) const {
    return visual(nn::BoundParams(params, false), rgbd).value().col(0);
  }

  nn::Vector encode_mesh(const nn::ParamVector& params, const nn::Vector& features) const {
    if (features.size() != cfg_.mesh_dim) {
      throw nn::ShapeError("encode_mesh: expected " + std::to_string(cfg_.mesh_dim) +
                           " features, got " + std::to_string(features.size()));
    }
    return mesh(nn::BoundParams(params, false), nn::Var::constant(features)).value().col(0);
  }

  nn::Vector encode_proprio(const nn::ParamVector& params, const nn::Matrix& window,
                            const ProprioNormalizer& norm = {}) const {
    if (window.rows() < 1) throw nn::ShapeError("encode_proprio: empty window");
    if (window.cols() != kProprioDim) {
      throw nn::ShapeError("encode_proprio: window must be T x 40, got " + nn::shape_string(window));
    }
    return proprio_.evaluate(params, norm.apply(window));
  }

  nn::Vector fuse_context(const nn::ParamVector& params, const nn::Vector& z_v,
                          const nn::Vector& z_m) const {
    if (z_v.size() != cfg_.latent || z_m.size() != cfg_.latent) {
      throw nn::ShapeError("fuse_context: latents must have " + std::to_string(cfg_.latent) +
                           " entries");
    }
    return fuse(nn::BoundParams(params, false), nn::Var::constant(z_v), nn::Var::constant(z_m))
        .value()
        .col(0);
  }

  // Attention weights per head for the (z_v, z_m) pair: [query][key] -> heads.
  std::vector<std::vector<nn::Vector>> fusion_weights(const nn::ParamVector& params,
                                                      const nn::Vector& z_v,
                                                      const nn::Vector& z_m) const {
    nn::BoundParams p(params, false);
    nn::Var a = nn::Var::constant(z_v);
    nn::Var b = nn::Var::constant(z_m);
    auto r = attention_(p, {a, b}, {a, b}, {a, b});
    std::vector<std::vector<nn::Vector>> w(2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) w[i].push_back(r.weights[i][j].value().col(0));
    return w;
  }

  ContextState build_context_state(const nn::ParamVector& params, const Observation& obs,
                                   const ProprioNormalizer& norm = {}) const {
    const Observation* ptr = &obs;
    Batch b = forward(nn::BoundParams(params, false), std::span<const Observation* const>(&ptr, 1), norm);
    ContextState s;
    s.z_v = b.z_v.value().col(0);
    s.z_m = b.z_m.value().col(0);
    s.z_p = b.z_p.value().col(0);
    s.c_t = b.c_t.value().col(0);
    s.s_hat = b.s_hat.value().col(0);
    return s;
  }

 private:
  EncoderConfig cfg_;
  nn::Conv2d conv_[3];
  nn::Dense visual_proj_;
  nn::Dense mesh1_;
  nn::Dense mesh2_;
  nn::BiRNN proprio_;
  nn::MultiHeadAttention attention_;
};

}  // namespace cart
