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

// Single-talker CTC ASR backbone: conv feature extractor, pre-norm
// transformer encoder split at an insertion point, linear decoder. After
// pretraining the whole model is frozen and only reused as a feature
// machine for the separator.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "smtl/common.hpp"
#include "smtl/objectives.hpp"
#include "smtl/optim.hpp"
#include "smtl/tensor.hpp"

namespace smtl {

struct ConvSpec {
  size_t kernel = 1;
  size_t stride = 1;
  size_t channels = 1;
};

struct BackboneConfig {
  size_t sample_rate = 8000;
  double frame_ms = 20.0;
  std::vector<ConvSpec> extractor_spec{{10, 5, 16}, {8, 32, 64}};
  size_t d_model = 64;
  size_t n_layers = 4;
  size_t n_heads = 4;
  size_t ffn_dim = 128;
  std::vector<std::string> vocab = default_vocab();  // blank at index 0
  size_t insertion_layer = 2;
  bool distance_bias = true;

  static std::vector<std::string> default_vocab() {
    return {"<blank>", "a", "b", "c", "d", "e", "f", "g", "h"};
  }

  static BackboneConfig toy() { return {}; }

  // Instantiable for parameter arithmetic only; far too large to train here.
  static BackboneConfig paper_scale() {
    BackboneConfig cfg;
    cfg.extractor_spec = {{10, 5, 128}, {8, 32, 512}};
    cfg.d_model = 768;
    cfg.n_layers = 12;
    cfg.n_heads = 8;
    cfg.ffn_dim = 3072;
    cfg.vocab.clear();
    cfg.vocab.push_back("<blank>");
    for (char c = 'a'; c <= 'z'; ++c) cfg.vocab.push_back(std::string(1, c));
    return cfg;
  }

  size_t vocab_size() const { return vocab.size(); }
  size_t head_dim() const { return d_model / n_heads; }
  size_t feature_channels() const { return extractor_spec.back().channels; }

  size_t frame_samples() const {
    return static_cast<size_t>(std::llround(frame_ms * sample_rate / 1000.0));
  }

  size_t stride_product() const {
    size_t s = 1;
    for (const auto& c : extractor_spec) s *= c.stride;
    return s;
  }

  size_t receptive_field_samples() const {
    size_t rf = 1, jump = 1;
    for (const auto& c : extractor_spec) {
      rf += (c.kernel - 1) * jump;
      jump *= c.stride;
    }
    return rf;
  }

  void validate() const {
    if (extractor_spec.empty()) throw ShapeError("BackboneConfig: empty extractor_spec");
    if (stride_product() != frame_samples()) {
      throw ShapeError(str_cat("BackboneConfig: extractor stride product ", stride_product(),
                               " does not match ", frame_samples(), " samples per frame"));
    }
    if (n_layers < 2 || insertion_layer < 1 || insertion_layer > n_layers - 1) {
      throw ShapeError("BackboneConfig: insertion_layer must be in [1, n_layers-1]");
    }
    if (d_model % n_heads != 0) throw ShapeError("BackboneConfig: n_heads must divide d_model");
    if (vocab.size() < 2) throw ShapeError("BackboneConfig: vocab needs blank plus tokens");
    if (receptive_field_samples() > frame_samples()) {
      throw ShapeError("BackboneConfig: receptive field exceeds one frame");
    }
  }
};

inline double alibi_slope(size_t head, size_t n_heads) {
  return std::exp2(-8.0 * static_cast<double>(head + 1) / static_cast<double>(n_heads));
}

// queries/keys (B*H, T, d_head), rows head-major per batch item (b*H + h).
// With distance_bias: score(i,j) = qk/sqrt(d_head) - slope_h * |i-j|.
inline Tensor attention_scores(const Tensor& queries, const Tensor& keys, size_t n_heads,
                               bool distance_bias) {
  if (queries.rank() != 3 || keys.rank() != 3 || queries.shape() != keys.shape()) {
    throw ShapeError("attention_scores: queries/keys must share shape (B*H, T, d_head)");
  }
  if (n_heads == 0 || queries.dim(0) % n_heads != 0) {
    throw ShapeError("attention_scores: first dim must be a multiple of n_heads");
  }
  size_t BH = queries.dim(0), T = queries.dim(1), dh = queries.dim(2);
  Tensor scores = ops::scale(ops::matmul(queries, ops::transpose(keys, {0, 2, 1})),
                             1.0 / std::sqrt(static_cast<double>(dh)));
  if (!distance_bias) return scores;
  std::vector<double> bias(BH * T * T);
  for (size_t bh = 0; bh < BH; ++bh) {
    double slope = alibi_slope(bh % n_heads, n_heads);
    for (size_t i = 0; i < T; ++i) {
      for (size_t j = 0; j < T; ++j) {
        double d = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
        bias[(bh * T + i) * T + j] = -slope * d;
      }
    }
  }
  return ops::add(scores, Tensor::from_values({BH, T, T}, std::move(bias)));
}

inline Tensor sinusoidal_positions(size_t T, size_t C) {
  std::vector<double> v(T * C);
  for (size_t t = 0; t < T; ++t) {
    for (size_t i = 0; i < C; ++i) {
      double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(C);
      double angle = static_cast<double>(t) * std::pow(10000.0, -exponent);
      v[t * C + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_values({T, C}, std::move(v));
}

class Backbone {
 public:
  BackboneConfig config;
  ParamMap params;
  bool frozen = false;

  static Backbone init(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    Backbone bb;
    bb.config = cfg;
    size_t C = cfg.d_model, F = cfg.ffn_dim, V = cfg.vocab_size();
    size_t cin = 1;
    for (size_t i = 0; i < cfg.extractor_spec.size(); ++i) {
      const auto& s = cfg.extractor_spec[i];
      bb.add_weight(str_cat("extractor.", i, ".w"), {s.channels, cin, s.kernel},
                    cin * s.kernel, seed);
      bb.add_zeros(str_cat("extractor.", i, ".b"), {s.channels, 1});
      cin = s.channels;
    }
    bb.add_weight("proj.w", {cin, C}, cin, seed);
    bb.add_zeros("proj.b", {C});
    for (size_t l = 0; l < cfg.n_layers; ++l) {
      std::string pre = str_cat("enc.", l, ".");
      bb.add_ones(pre + "ln1.g", {C});
      bb.add_zeros(pre + "ln1.b", {C});
      for (const char* nm : {"wq", "wk", "wv", "wo"}) {
        bb.add_weight(pre + "attn." + nm, {C, C}, C, seed);
      }
      for (const char* nm : {"bq", "bk", "bv", "bo"}) {
        bb.add_zeros(pre + "attn." + nm, {C});
      }
      bb.add_ones(pre + "ln2.g", {C});
      bb.add_zeros(pre + "ln2.b", {C});
      bb.add_weight(pre + "ffn.w1", {C, F}, C, seed);
      bb.add_zeros(pre + "ffn.b1", {F});
      bb.add_weight(pre + "ffn.w2", {F, C}, F, seed);
      bb.add_zeros(pre + "ffn.b2", {C});
    }
    // Normalizes the insertion-point embedding so it is unit-scale per frame.
    bb.add_ones("ln_mid.g", {C});
    bb.add_zeros("ln_mid.b", {C});
    bb.add_ones("ln_f.g", {C});
    bb.add_zeros("ln_f.b", {C});
    bb.add_weight("dec.w", {C, V}, C, seed);
    bb.add_zeros("dec.b", {V});
    return bb;
  }

  void freeze() {
    for (auto& [name, p] : params) p.set_requires_grad(false);
    frozen = true;
  }

  // Crops the waveform to whole 20 ms frames and returns (C_feat, T) with
  // T exactly the number of whole frames.
  Tensor extract_features(const std::vector<double>& waveform) const {
    size_t fs = config.frame_samples();
    size_t frames = waveform.size() / fs;
    if (frames == 0) {
      throw DataError(str_cat("extract_features: waveform of ", waveform.size(),
                              " samples is shorter than one frame (", fs, " samples)"));
    }
    std::vector<double> cropped(waveform.begin(), waveform.begin() + frames * fs);
    size_t samples = cropped.size();
    Tensor x = Tensor::from_values({1, 1, samples}, std::move(cropped));
    for (size_t i = 0; i < config.extractor_spec.size(); ++i) {
      const auto& s = config.extractor_spec[i];
      ops::Conv1dAttrs at;
      at.stride = s.stride;
      x = ops::conv1d(x, p(str_cat("extractor.", i, ".w")), at);
      x = ops::add(x, p(str_cat("extractor.", i, ".b")));
      x = ops::relu(x);
    }
    if (x.dim(2) != frames) {
      throw ShapeError(str_cat("extract_features: got ", x.dim(2), " frames, expected ",
                               frames));
    }
    return ops::reshape(x, {x.dim(1), x.dim(2)});
  }

  // Projection, positions, encoder layers 1..insertion_layer, then the
  // mid-stack norm at the insertion boundary. Accepts (C_feat, T) or
  // (B, C_feat, T); returns (B, C, T).
  Tensor encode_lower(const Tensor& features) const {
    Tensor x = embed(features);
    for (size_t l = 0; l < config.insertion_layer; ++l) x = encoder_layer(x, l);
    x = ops::layer_norm(x, p("ln_mid.g"), p("ln_mid.b"), {2});
    return ops::transpose(x, {0, 2, 1});
  }

  // Encoder layers insertion_layer+1..n_layers plus the final norm, over a
  // possibly speaker-expanded batch. (B', C, T) -> (B', C, T).
  Tensor encode_upper(const Tensor& embedding) const {
    check_channels(embedding, "encode_upper");
    Tensor x = ops::transpose(embedding, {0, 2, 1});
    for (size_t l = config.insertion_layer; l < config.n_layers; ++l) x = encoder_layer(x, l);
    x = ops::layer_norm(x, p("ln_f.g"), p("ln_f.b"), {2});
    return ops::transpose(x, {0, 2, 1});
  }

  // Monolithic forward over all layers; reference path for the split.
  Tensor encode_full(const Tensor& features) const {
    Tensor x = embed(features);
    for (size_t l = 0; l < config.n_layers; ++l) {
      x = encoder_layer(x, l);
      if (l + 1 == config.insertion_layer)
        x = ops::layer_norm(x, p("ln_mid.g"), p("ln_mid.b"), {2});
    }
    x = ops::layer_norm(x, p("ln_f.g"), p("ln_f.b"), {2});
    return ops::transpose(x, {0, 2, 1});
  }

  // (B', C, T) -> raw logits (B', T, V).
  Tensor decode(const Tensor& hidden) const {
    check_channels(hidden, "decode");
    Tensor x = ops::transpose(hidden, {0, 2, 1});
    return ops::add(ops::matmul(x, p("dec.w")), p("dec.b"));
  }

  // Full single-talker path: waveform -> (1, T, V) logits.
  Tensor asr_logits(const std::vector<double>& waveform) const {
    return decode(encode_upper(encode_lower(extract_features(waveform))));
  }

 private:
  Tensor p(const std::string& name) const { return params.at(name); }

  void add_weight(const std::string& name, const Shape& shape, size_t fan_in, uint64_t seed) {
    Rng rng(derive_seed(seed, name, 0));
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    params.emplace(name, Tensor::from_values(shape, std::move(v), true));
  }

  void add_zeros(const std::string& name, const Shape& shape) {
    params.emplace(name, Tensor::zeros(shape, true));
  }

  void add_ones(const std::string& name, const Shape& shape) {
    params.emplace(name, Tensor::filled(shape, 1.0, true));
  }

  void check_channels(const Tensor& x, const char* who) const {
    if (x.rank() != 3 || x.dim(1) != config.d_model) {
      throw ShapeError(str_cat(who, ": wants (B, ", config.d_model, ", T), got ",
                               shape_str(x.shape())));
    }
    if (x.dim(2) < 1) throw ShapeError(str_cat(who, ": zero-length time axis"));
  }

  // features (C_feat, T) or (B, C_feat, T) -> (B, T, C) after projection
  // and (when distance_bias is off) absolute positions.
  Tensor embed(const Tensor& features) const {
    Tensor f = features;
    if (f.rank() == 2) f = ops::reshape(f, {1, f.dim(0), f.dim(1)});
    if (f.rank() != 3 || f.dim(1) != config.feature_channels()) {
      throw ShapeError(str_cat("encode: wants (B, ", config.feature_channels(), ", T), got ",
                               shape_str(features.shape())));
    }
    if (f.dim(2) < 1) throw ShapeError("encode: zero-length time axis");
    Tensor x = ops::transpose(f, {0, 2, 1});
    x = ops::add(ops::matmul(x, p("proj.w")), p("proj.b"));
    if (!config.distance_bias) {
      x = ops::add(x, sinusoidal_positions(x.dim(1), config.d_model));
    }
    return x;
  }

  Tensor encoder_layer(const Tensor& x, size_t l) const {
    std::string pre = str_cat("enc.", l, ".");
    size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
    size_t H = config.n_heads, dh = config.head_dim();
    Tensor h = ops::layer_norm(x, p(pre + "ln1.g"), p(pre + "ln1.b"), {2});
    auto heads = [&](const char* w, const char* b) {
      Tensor t = ops::add(ops::matmul(h, p(pre + "attn." + w)), p(pre + "attn." + b));
      return ops::reshape(ops::transpose(ops::reshape(t, {B, T, H, dh}), {0, 2, 1, 3}),
                          {B * H, T, dh});
    };
    Tensor q = heads("wq", "bq"), k = heads("wk", "bk"), v = heads("wv", "bv");
    Tensor attn = ops::softmax(attention_scores(q, k, H, config.distance_bias), 2);
    Tensor ctx = ops::matmul(attn, v);
    ctx = ops::reshape(ops::transpose(ops::reshape(ctx, {B, H, T, dh}), {0, 2, 1, 3}),
                       {B, T, C});
    Tensor o = ops::add(ops::matmul(ctx, p(pre + "attn.wo")), p(pre + "attn.bo"));
    Tensor x1 = ops::add(x, o);
    Tensor h2 = ops::layer_norm(x1, p(pre + "ln2.g"), p(pre + "ln2.b"), {2});
    Tensor f = ops::relu(ops::add(ops::matmul(h2, p(pre + "ffn.w1")), p(pre + "ffn.b1")));
    f = ops::add(ops::matmul(f, p(pre + "ffn.w2")), p(pre + "ffn.b2"));
    return ops::add(x1, f);
  }
};

inline size_t backbone_param_count(const BackboneConfig& cfg) {
  size_t C = cfg.d_model, F = cfg.ffn_dim, V = cfg.vocab_size();
  size_t n = 0, cin = 1;
  for (const auto& s : cfg.extractor_spec) {
    n += s.channels * cin * s.kernel + s.channels;
    cin = s.channels;
  }
  n += cin * C + C;
  n += cfg.n_layers * (2 * C + 4 * (C * C + C) + 2 * C + C * F + F + F * C + C);
  n += 2 * C;  // ln_mid
  n += 2 * C;  // ln_f
  n += C * V + V;
  return n;
}

// Greedy CTC decoding: frame argmax, collapse repeats, drop blanks.
inline CtcTarget greedy_ctc(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("greedy_ctc: wants (T, V)");
  size_t T = logits.dim(0), V = logits.dim(1);
  CtcTarget out;
  int prev = -1;
  for (size_t t = 0; t < T; ++t) {
    const double* row = logits.values().data() + t * V;
    int best = 0;
    for (size_t v = 1; v < V; ++v) {
      if (row[v] > row[best]) best = static_cast<int>(v);
    }
    if (best != 0 && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

// Row s of stacked logits (S, T, V).
inline CtcTarget greedy_ctc_row(const Tensor& logits, size_t row) {
  if (logits.rank() != 3 || row >= logits.dim(0)) {
    throw ShapeError("greedy_ctc_row: wants (S, T, V) and row < S");
  }
  size_t T = logits.dim(1), V = logits.dim(2);
  std::vector<double> vals(logits.values().begin() + row * T * V,
                           logits.values().begin() + (row + 1) * T * V);
  return greedy_ctc(Tensor::from_values({T, V}, std::move(vals)));
}

}  // namespace smtl
