// Copyright 2026 The sidecar-mtl authors
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

// Separator inserted between encoder layers: a temporal convolutional
// network with flanking kernel-3 convolutions produces per-speaker masks
// over the mixed embedding, plus a C-parameter diarization branch read off
// the masks. Residual paths stay, skip paths are removed, and the final
// activation is ReLU.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "smtl/backbone.hpp"
#include "smtl/common.hpp"
#include "smtl/optim.hpp"
#include "smtl/tensor.hpp"

namespace smtl {

struct SidecarConfig {
  size_t io_channels = 64;          // C, matches backbone d_model
  size_t bottleneck_channels = 32;  // B_c
  size_t hidden_channels = 64;      // H inside each block
  size_t kernel = 3;
  size_t blocks_per_repeat = 8;  // K; dilations 1,2,...,2^(K-1)
  size_t repeats = 3;            // R
  size_t n_speakers = 2;         // S
  bool identity_norm = false;    // diagnostics only: bypass norms so the
                                 // receptive field is measurable

  static SidecarConfig toy(size_t speakers = 2) {
    SidecarConfig cfg;
    cfg.n_speakers = speakers;
    return cfg;
  }

  static SidecarConfig paper_scale(size_t speakers = 2) {
    SidecarConfig cfg;
    cfg.io_channels = 768;
    cfg.bottleneck_channels = 128;
    cfg.hidden_channels = 512;
    cfg.n_speakers = speakers;
    return cfg;
  }

  void validate() const {
    if (n_speakers < 2) throw ShapeError("SidecarConfig: n_speakers must be >= 2");
    if (kernel % 2 == 0 || kernel < 3) {
      throw ShapeError("SidecarConfig: kernel must be odd and >= 3");
    }
    if (io_channels == 0 || bottleneck_channels == 0 || hidden_channels == 0 ||
        blocks_per_repeat == 0 || repeats == 0) {
      throw ShapeError("SidecarConfig: zero-sized dimension");
    }
  }

  // Frames reachable from one input frame through the flank convs and all
  // dilated blocks: 1 + 2*(k-1)/2 per flank conv and 2*d per block.
  size_t receptive_field_frames() const {
    size_t reach = (kernel - 1);  // two flank convs, (k-1)/2 each side
    for (size_t r = 0; r < repeats; ++r) {
      for (size_t k = 0; k < blocks_per_repeat; ++k) reach += 2 * (size_t{1} << k);
    }
    return 1 + reach;
  }
};

struct SeparationResult {
  Tensor masks;      // (B*S, C, T), nonnegative
  Tensor separated;  // (B*S, C, T)
};

class Sidecar {
 public:
  SidecarConfig config;
  ParamMap params;

  static Sidecar init(const SidecarConfig& cfg, uint64_t seed) {
    cfg.validate();
    Sidecar sc;
    sc.config = cfg;
    size_t C = cfg.io_channels, B = cfg.bottleneck_channels, H = cfg.hidden_channels;
    size_t k = cfg.kernel, S = cfg.n_speakers;
    sc.add_conv("in", {C, C, k}, C * k, seed);
    sc.add_ones("bn.ln.g", {C, 1});
    sc.add_zeros("bn.ln.b", {C, 1});
    sc.add_conv("bn", {B, C, 1}, C, seed);
    for (size_t r = 0; r < cfg.repeats; ++r) {
      for (size_t b = 0; b < cfg.blocks_per_repeat; ++b) {
        std::string pre = str_cat("tcn.", r, ".", b, ".");
        sc.add_conv(pre + "conv1", {H, B, 1}, B, seed);
        sc.add_slopes(pre + "prelu1.s", H);
        sc.add_ones(pre + "ln1.g", {H, 1});
        sc.add_zeros(pre + "ln1.b", {H, 1});
        sc.add_conv(pre + "dw", {H, 1, k}, k, seed);
        sc.add_slopes(pre + "prelu2.s", H);
        sc.add_ones(pre + "ln2.g", {H, 1});
        sc.add_zeros(pre + "ln2.b", {H, 1});
        sc.add_conv(pre + "conv2", {B, H, 1}, H, seed);
      }
    }
    sc.add_slopes("post.prelu.s", B);
    // Bias-free so parameter deltas across speaker counts stay exactly B*C.
    // Output-side weights start small so the initial separated embedding
    // sits near the (unit-scale) insertion embedding instead of far above.
    sc.add_weight("mask.w", {S * C, B, 1}, B, seed, 0.1);
    sc.add_conv("out", {C, C, k}, C * k, seed, 0.5);
    // Zero init keeps the initial activity at the uninformative 0.5.
    sc.add_zeros("diar.w", {1, C});
    return sc;
  }

  // mixed (B, C, T) -> masks and separated embeddings, both (B*S, C, T)
  // with speaker-major rows (row = b*S + s).
  SeparationResult separate(const Tensor& mixed) const {
    size_t C = config.io_channels, S = config.n_speakers;
    if (mixed.rank() != 3 || mixed.dim(1) != C) {
      throw ShapeError(str_cat("separate: wants (B, ", C, ", T), got ",
                               shape_str(mixed.shape())));
    }
    if (mixed.dim(2) < 1) throw ShapeError("separate: zero-length time axis");
    size_t B = mixed.dim(0), T = mixed.dim(2);

    Tensor filtered = conv(mixed, "in", 1);
    Tensor x = norm(filtered, "bn.ln");
    x = conv(x, "bn", 1);
    for (size_t r = 0; r < config.repeats; ++r) {
      for (size_t b = 0; b < config.blocks_per_repeat; ++b) {
        x = block(x, r, b);
      }
    }
    x = ops::prelu(x, p("post.prelu.s"), 1);
    ops::Conv1dAttrs mask_at;
    Tensor logits = ops::conv1d(x, p("mask.w"), mask_at);  // (B, S*C, T), bias-free
    Tensor masks = ops::relu(logits);
    masks = ops::reshape(masks, {B * S, C, T});

    Tensor prod = ops::mul(ops::reshape(masks, {B, S, C, T}),
                           ops::reshape(filtered, {B, 1, C, T}));
    Tensor separated = conv(ops::reshape(prod, {B * S, C, T}), "out", 1);
    return {masks, separated};
  }

  // masks (B*S, C, T) -> activity (B, S, T) strictly inside (0, 1):
  // sigmoid of the pointwise conv over channels.
  Tensor diar_activity(const Tensor& masks, size_t batch) const {
    size_t C = config.io_channels, S = config.n_speakers;
    if (masks.rank() != 3 || masks.dim(1) != C || masks.dim(0) != batch * S) {
      throw ShapeError(str_cat("diar_activity: wants (", batch * S, ", ", C, ", T), got ",
                               shape_str(masks.shape())));
    }
    size_t T = masks.dim(2);
    Tensor x = ops::reshape(masks, {batch, S, C, T});
    x = ops::transpose(x, {0, 2, 1, 3});                    // (B, C, S, T)
    x = ops::pointwise_conv2d(x, p("diar.w"));              // (B, 1, S, T)
    return ops::sigmoid(ops::reshape(x, {batch, S, T}));
  }

 private:
  Tensor p(const std::string& name) const { return params.at(name); }

  void add_weight(const std::string& name, const Shape& shape, size_t fan_in, uint64_t seed,
                  double scale = 1.0) {
    Rng rng(derive_seed(seed, "sidecar." + name, 0));
    double bound = scale * std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    params.emplace(name, Tensor::from_values(shape, std::move(v), true));
  }

  void add_conv(const std::string& name, const Shape& w_shape, size_t fan_in, uint64_t seed,
                double scale = 1.0) {
    add_weight(name + ".w", w_shape, fan_in, seed, scale);
    params.emplace(name + ".b", Tensor::zeros({w_shape[0], 1}, true));
  }

  void add_zeros(const std::string& name, const Shape& shape) {
    params.emplace(name, Tensor::zeros(shape, true));
  }

  void add_ones(const std::string& name, const Shape& shape) {
    params.emplace(name, Tensor::filled(shape, 1.0, true));
  }

  void add_slopes(const std::string& name, size_t channels) {
    params.emplace(name, Tensor::filled({channels}, 0.25, true));
  }

  Tensor conv(const Tensor& x, const std::string& name, size_t dilation,
              size_t groups = 1) const {
    const Tensor& w = p(name + ".w");
    ops::Conv1dAttrs at;
    at.dilation = dilation;
    at.groups = groups;
    at.padding = dilation * (w.dim(2) - 1) / 2;  // same-length output
    return ops::add(ops::conv1d(x, w, at), p(name + ".b"));
  }

  // Global norm over (C, T) per batch item, with per-channel scale/shift.
  Tensor norm(const Tensor& x, const std::string& name) const {
    if (config.identity_norm) return x;
    return ops::layer_norm(x, p(name + ".g"), p(name + ".b"), {1, 2});
  }

  Tensor block(const Tensor& x, size_t r, size_t b) const {
    std::string pre = str_cat("tcn.", r, ".", b, ".");
    size_t dilation = size_t{1} << b;
    Tensor y = conv(x, pre + "conv1", 1);
    y = ops::prelu(y, p(pre + "prelu1.s"), 1);
    y = norm(y, pre + "ln1");
    y = conv(y, pre + "dw", dilation, config.hidden_channels);
    y = ops::prelu(y, p(pre + "prelu2.s"), 1);
    y = norm(y, pre + "ln2");
    y = conv(y, pre + "conv2", 1);
    return ops::add(x, y);
  }
};

inline size_t sidecar_param_count(const SidecarConfig& cfg) {
  size_t C = cfg.io_channels, B = cfg.bottleneck_channels, H = cfg.hidden_channels;
  size_t k = cfg.kernel, S = cfg.n_speakers;
  size_t n = 0;
  n += C * C * k + C;          // in conv
  n += 2 * C + B * C + B;      // bottleneck norm + 1x1
  n += cfg.repeats * cfg.blocks_per_repeat *
       (H * B + H + H + 2 * H + H * k + H + H + 2 * H + B * H + B);
  n += B;                      // post prelu
  n += B * S * C;              // mask conv, bias-free
  n += C * C * k + C;          // out conv
  return n;
}

inline size_t diar_branch_param_count(const SidecarConfig& cfg) { return cfg.io_channels; }

struct ParamReport {
  size_t backbone = 0;
  size_t sidecar = 0;
  size_t diar_branch = 0;

  size_t trainable() const { return sidecar + diar_branch; }
  size_t total() const { return backbone + trainable(); }
  double trainable_ratio() const {
    return static_cast<double>(trainable()) / static_cast<double>(total());
  }
};

inline ParamReport param_report(const BackboneConfig& bb, const SidecarConfig& sc) {
  ParamReport r;
  r.backbone = backbone_param_count(bb);
  r.sidecar = sidecar_param_count(sc);
  r.diar_branch = diar_branch_param_count(sc);
  return r;
}

}  // namespace smtl
