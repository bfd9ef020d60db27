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

// End-to-end plumbing: corpus generation, the three training regimes
// (backbone pretraining, sidecar training, diarization adaptation),
// evaluation, stitched long-recording inference, and checkpoint wiring.

#ifndef SMTL_PIPELINE_HPP_
#define SMTL_PIPELINE_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "smtl/backbone.hpp"
#include "smtl/checkpoint.hpp"
#include "smtl/common.hpp"
#include "smtl/diarize.hpp"
#include "smtl/metrics.hpp"
#include "smtl/mixer.hpp"
#include "smtl/objectives.hpp"
#include "smtl/optim.hpp"
#include "smtl/sidecar.hpp"
#include "smtl/tensor.hpp"

namespace smtl {

// ---------------------------------------------------------------------------
// Config serialization. Unknown keys are rejected; missing keys keep defaults.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const nlohmann::json& j, const char* what,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw DataError(str_cat(what, ": expected a JSON object"));
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw DataError(str_cat(what, ": unknown key \"", it.key(), "\""));
  }
}

template <typename T>
T get_field(const nlohmann::json& j, const char* what, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(str_cat(what, ": bad value for \"", key, "\": ", e.what()));
  }
}

}  // namespace detail

inline nlohmann::json backbone_config_json(const BackboneConfig& c) {
  nlohmann::json j;
  j["sample_rate"] = c.sample_rate;
  j["frame_ms"] = c.frame_ms;
  nlohmann::json ext = nlohmann::json::array();
  for (const auto& s : c.extractor_spec) ext.push_back({s.kernel, s.stride, s.channels});
  j["extractor"] = ext;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["ffn_dim"] = c.ffn_dim;
  j["vocab"] = c.vocab;
  j["insertion_layer"] = c.insertion_layer;
  j["distance_bias"] = c.distance_bias;
  return j;
}

inline BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "backbone config",
                     {"sample_rate", "frame_ms", "extractor", "d_model", "n_layers", "n_heads",
                      "ffn_dim", "vocab", "insertion_layer", "distance_bias"});
  BackboneConfig c;
  c.sample_rate = detail::get_field<size_t>(j, "backbone config", "sample_rate", c.sample_rate);
  c.frame_ms = detail::get_field<double>(j, "backbone config", "frame_ms", c.frame_ms);
  if (j.contains("extractor")) {
    const auto& ext = j.at("extractor");
    if (!ext.is_array()) throw DataError("backbone config: \"extractor\" must be an array");
    c.extractor_spec.clear();
    for (const auto& row : ext) {
      if (!row.is_array() || row.size() != 3) {
        throw DataError("backbone config: extractor rows must be [kernel, stride, channels]");
      }
      ConvSpec s;
      s.kernel = row.at(0).get<size_t>();
      s.stride = row.at(1).get<size_t>();
      s.channels = row.at(2).get<size_t>();
      c.extractor_spec.push_back(s);
    }
  }
  c.d_model = detail::get_field<size_t>(j, "backbone config", "d_model", c.d_model);
  c.n_layers = detail::get_field<size_t>(j, "backbone config", "n_layers", c.n_layers);
  c.n_heads = detail::get_field<size_t>(j, "backbone config", "n_heads", c.n_heads);
  c.ffn_dim = detail::get_field<size_t>(j, "backbone config", "ffn_dim", c.ffn_dim);
  c.vocab = detail::get_field<std::vector<std::string>>(j, "backbone config", "vocab", c.vocab);
  c.insertion_layer =
      detail::get_field<size_t>(j, "backbone config", "insertion_layer", c.insertion_layer);
  c.distance_bias =
      detail::get_field<bool>(j, "backbone config", "distance_bias", c.distance_bias);
  return c;
}

inline nlohmann::json sidecar_config_json(const SidecarConfig& c) {
  nlohmann::json j;
  j["io_channels"] = c.io_channels;
  j["bottleneck_channels"] = c.bottleneck_channels;
  j["hidden_channels"] = c.hidden_channels;
  j["kernel"] = c.kernel;
  j["blocks_per_repeat"] = c.blocks_per_repeat;
  j["repeats"] = c.repeats;
  j["n_speakers"] = c.n_speakers;
  return j;
}

inline SidecarConfig sidecar_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "sidecar config",
                     {"io_channels", "bottleneck_channels", "hidden_channels", "kernel",
                      "blocks_per_repeat", "repeats", "n_speakers"});
  SidecarConfig c;
  c.io_channels = detail::get_field<size_t>(j, "sidecar config", "io_channels", c.io_channels);
  c.bottleneck_channels = detail::get_field<size_t>(j, "sidecar config", "bottleneck_channels",
                                                    c.bottleneck_channels);
  c.hidden_channels =
      detail::get_field<size_t>(j, "sidecar config", "hidden_channels", c.hidden_channels);
  c.kernel = detail::get_field<size_t>(j, "sidecar config", "kernel", c.kernel);
  c.blocks_per_repeat =
      detail::get_field<size_t>(j, "sidecar config", "blocks_per_repeat", c.blocks_per_repeat);
  c.repeats = detail::get_field<size_t>(j, "sidecar config", "repeats", c.repeats);
  c.n_speakers = detail::get_field<size_t>(j, "sidecar config", "n_speakers", c.n_speakers);
  return c;
}

inline nlohmann::json plan_json(const SegmentPlan& p) {
  nlohmann::json j;
  j["segment_seconds"] = p.segment_seconds;
  j["shared_seconds"] = p.shared_seconds;
  j["frame_ms"] = p.frame_ms;
  return j;
}

inline SegmentPlan plan_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "segment plan", {"segment_seconds", "shared_seconds", "frame_ms"});
  SegmentPlan p;
  p.segment_seconds =
      detail::get_field<double>(j, "segment plan", "segment_seconds", p.segment_seconds);
  p.shared_seconds =
      detail::get_field<double>(j, "segment plan", "shared_seconds", p.shared_seconds);
  p.frame_ms = detail::get_field<double>(j, "segment plan", "frame_ms", p.frame_ms);
  return p;
}

// ---------------------------------------------------------------------------
// Corpus generation.
// ---------------------------------------------------------------------------

enum class CorpusStyle { kSingle, kLeftAligned, kDelayed, kConversation };

inline CorpusStyle parse_style(const std::string& s) {
  if (s == "single") return CorpusStyle::kSingle;
  if (s == "left-aligned") return CorpusStyle::kLeftAligned;
  if (s == "delayed") return CorpusStyle::kDelayed;
  if (s == "conversation") return CorpusStyle::kConversation;
  throw DataError(str_cat("unknown corpus style \"", s,
                          "\" (want single, left-aligned, delayed, conversation)"));
}

inline std::string style_name(CorpusStyle s) {
  switch (s) {
    case CorpusStyle::kSingle: return "single";
    case CorpusStyle::kLeftAligned: return "left-aligned";
    case CorpusStyle::kDelayed: return "delayed";
    case CorpusStyle::kConversation: return "conversation";
  }
  throw DataError("unknown corpus style enum");
}

struct CorpusSpec {
  CorpusStyle style = CorpusStyle::kLeftAligned;
  size_t count = 100;
  size_t speakers = 2;
  size_t transcript_min = 3;
  size_t transcript_max = 5;
  double conversation_seconds = 20.0;
  bool gain_jitter = false;  // per-speaker gain in [0.5, 1.0] instead of 1.0
  size_t speaker_pool = 4;   // distinct voices: cycled through single-talker
                             // items, sampled per mixture for multi-talker ones
  ConversationModel model;

  void validate() const {
    if (count == 0) throw ShapeError("CorpusSpec: count must be >= 1");
    if (transcript_min == 0 || transcript_max < transcript_min) {
      throw ShapeError("CorpusSpec: need 1 <= transcript_min <= transcript_max");
    }
    if (style == CorpusStyle::kSingle) {
      if (speaker_pool == 0) throw ShapeError("CorpusSpec: speaker_pool must be >= 1");
    } else if (style == CorpusStyle::kConversation) {
      if (speakers != 2) throw DataError("CorpusSpec: conversation style needs exactly 2 speakers");
      if (conversation_seconds <= model.min_turn_seconds) {
        throw ShapeError("CorpusSpec: conversation_seconds too small");
      }
    } else {
      if (speakers < 2 || speakers > 4) throw DataError("CorpusSpec: mixtures need 2..4 speakers");
      if (speaker_pool < speakers) {
        throw DataError(str_cat("CorpusSpec: speaker_pool ", speaker_pool, " smaller than ",
                                speakers, " speakers per mixture"));
      }
    }
  }
};

// A one-speaker "mixture": the degenerate container used by pretraining and
// single-talker evaluation so every corpus shares the manifest format.
inline Mixture single_mixture(const Utterance& u) {
  Mixture m;
  m.waveform = u.waveform;
  m.speaker_ids = {u.speaker_id};
  m.transcripts = {u.transcript};
  m.onsets = {0.0};
  m.activity = Tensor::filled({1, u.frames()}, 1.0);
  return m;
}

inline std::vector<Mixture> gen_corpus(const CorpusSpec& spec, uint64_t seed) {
  spec.validate();
  std::vector<Mixture> out;
  out.reserve(spec.count);
  for (size_t i = 0; i < spec.count; ++i) {
    uint64_t item_seed = derive_seed(seed, "corpus-item", i);
    Rng draw(derive_seed(item_seed, "corpus-draw", 0));
    auto draw_len = [&]() {
      return static_cast<size_t>(draw.uniform_int(static_cast<int64_t>(spec.transcript_min),
                                                  static_cast<int64_t>(spec.transcript_max)));
    };
    switch (spec.style) {
      case CorpusStyle::kSingle: {
        SpeakerProfile prof = SpeakerProfile::make(i % spec.speaker_pool);
        out.push_back(single_mixture(gen_utterance(prof, draw_len(), item_seed)));
        break;
      }
      case CorpusStyle::kLeftAligned:
      case CorpusStyle::kDelayed: {
        // Distinct voices drawn from the pool per item, LibriMix-style.
        std::vector<size_t> voices(spec.speaker_pool);
        for (size_t v = 0; v < voices.size(); ++v) voices[v] = v;
        for (size_t s = 0; s < spec.speakers; ++s) {
          size_t pick = s + static_cast<size_t>(draw.uniform_int(
                                0, static_cast<int64_t>(spec.speaker_pool - s) - 1));
          std::swap(voices[s], voices[pick]);
        }
        std::vector<Utterance> utts;
        utts.reserve(spec.speakers);
        for (size_t s = 0; s < spec.speakers; ++s) {
          utts.push_back(gen_utterance(SpeakerProfile::make(voices[s]), draw_len(), item_seed));
        }
        std::vector<double> gains;
        if (spec.gain_jitter) {
          gains.reserve(spec.speakers);
          for (size_t s = 0; s < spec.speakers; ++s) gains.push_back(draw.uniform(0.5, 1.0));
        }
        out.push_back(spec.style == CorpusStyle::kLeftAligned
                          ? mix_left_aligned(utts, gains)
                          : mix_delayed(utts, item_seed, gains));
        break;
      }
      case CorpusStyle::kConversation: {
        out.push_back(gen_conversation(SpeakerProfile::make(0), SpeakerProfile::make(1),
                                       spec.conversation_seconds, spec.model, item_seed)
                          .mixture);
        break;
      }
    }
  }
  return out;
}

inline Mixture mixture_from_entry(const ManifestEntry& e) {
  Mixture m;
  m.waveform = e.waveform;
  m.speaker_ids = e.speaker_ids;
  m.transcripts = e.transcripts;
  m.onsets = e.onsets;
  size_t S = e.speaker_ids.size();
  size_t T = e.waveform.size() / kFrameSamples;
  m.activity = activity_from_timeline(e.reference, S, T, kFrameMs);
  return m;
}

inline std::vector<Mixture> load_corpus(const std::filesystem::path& manifest_path) {
  std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  std::vector<Mixture> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(mixture_from_entry(e));
  return out;
}

// ---------------------------------------------------------------------------
// Shared forward passes.
// ---------------------------------------------------------------------------

struct MultiOutput {
  Tensor logits;  // (S, T, V)
  Tensor d;       // (1, S, T)
};

inline MultiOutput multi_forward(const Backbone& bb, const Sidecar& sc,
                                 const std::vector<double>& waveform) {
  Tensor emb = bb.encode_lower(bb.extract_features(waveform));  // (1, C, T)
  SeparationResult sep = sc.separate(emb);
  MultiOutput out;
  out.d = sc.diar_activity(sep.masks, 1);
  out.logits = bb.decode(bb.encode_upper(sep.separated));
  return out;
}

// Diarization-only forward; call without an active tape for cheap inference.
inline Tensor diar_values(const Backbone& bb, const Sidecar& sc,
                          const std::vector<double>& waveform) {
  Tensor emb = bb.encode_lower(bb.extract_features(waveform));
  SeparationResult sep = sc.separate(emb);
  Tensor d = sc.diar_activity(sep.masks, 1);  // (1, S, T)
  return ops::reshape(d, {d.dim(1), d.dim(2)});
}

namespace detail {

inline void check_finite_loss(double v, size_t step) {
  if (!std::isfinite(v)) throw NumericError(str_cat("non-finite loss at step ", step));
}

inline void check_frame_grid(const BackboneConfig& cfg, const char* what) {
  if (cfg.sample_rate != kSampleRate || cfg.frame_samples() != kFrameSamples) {
    throw DataError(str_cat(what, ": backbone frame grid (", cfg.sample_rate, " Hz, ",
                            cfg.frame_samples(), " samples) does not match the corpus grid (",
                            kSampleRate, " Hz, ", kFrameSamples, " samples)"));
  }
}

inline void check_streams(const std::vector<Mixture>& corpus, size_t want, const char* what) {
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].speaker_ids.size() != want) {
      throw DataError(str_cat(what, ": item ", i, " has ", corpus[i].speaker_ids.size(),
                              " speakers, model expects ", want));
    }
  }
}

inline Tensor slice_cols(const Tensor& a, size_t begin, size_t end) {
  size_t S = a.dim(0), T = a.dim(1);
  if (begin >= end || end > T) throw ShapeError("slice_cols: bad column range");
  std::vector<double> v;
  v.reserve(S * (end - begin));
  for (size_t s = 0; s < S; ++s) {
    const double* row = a.values().data() + s * T;
    v.insert(v.end(), row + begin, row + end);
  }
  return Tensor::from_values({S, end - begin}, std::move(v));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training regimes. All three are deterministic in (inputs, seed); a non-finite
// loss aborts with the offending step index.
// ---------------------------------------------------------------------------

struct StepLog {
  size_t step = 0;
  double loss = 0;
  double ctc = 0;
  double diar = 0;
};

using StepCallback = std::function<void(const StepLog&)>;

struct PretrainResult {
  Backbone backbone;
  std::vector<StepLog> log;
};

inline PretrainResult pretrain_single_talker(const std::vector<Mixture>& corpus,
                                             const BackboneConfig& cfg,
                                             const AdamConfig& adam_cfg, size_t max_updates,
                                             size_t batch_size, uint64_t seed,
                                             const StepCallback& on_step = {}) {
  cfg.validate();
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  if (batch_size == 0) throw ShapeError("pretrain: batch_size must be >= 1");
  detail::check_streams(corpus, 1, "pretrain");
  PretrainResult out;
  out.backbone = Backbone::init(cfg, seed);
  Adam opt(adam_cfg);
  LrSchedule sched{max_updates};
  for (size_t step = 0; step < max_updates; ++step) {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> losses;
    losses.reserve(batch_size);
    for (size_t j = 0; j < batch_size; ++j) {
      const Mixture& m = corpus[(step * batch_size + j) % corpus.size()];
      Tensor lsm = ops::log_softmax(out.backbone.asr_logits(m.waveform), 2);
      losses.push_back(ctc_loss_stream(lsm, 0, m.transcripts[0]));
    }
    Tensor loss = losses.size() == 1 ? losses[0] : ops::mean(ops::concat(losses, 0));
    double lv = loss.value();
    detail::check_finite_loss(lv, step);
    opt.zero_grad(out.backbone.params);
    tape.backward(loss);
    opt.step(out.backbone.params, sched.factor(step));
    StepLog sl{step, lv, lv, 0.0};
    out.log.push_back(sl);
    if (on_step) on_step(sl);
  }
  return out;
}

struct SidecarTrainResult {
  Sidecar sidecar;
  std::vector<StepLog> log;
};

inline SidecarTrainResult train_sidecar(const Backbone& backbone, const SidecarConfig& cfg,
                                        const std::vector<Mixture>& corpus,
                                        const AdamConfig& adam_cfg, double lambda,
                                        size_t max_updates, size_t batch_size, uint64_t seed,
                                        const StepCallback& on_step = {}) {
  if (!backbone.frozen) throw DataError("train_sidecar: backbone must be frozen");
  cfg.validate();
  if (cfg.io_channels != backbone.config.d_model) {
    throw ShapeError(str_cat("train_sidecar: sidecar io_channels ", cfg.io_channels,
                             " != backbone d_model ", backbone.config.d_model));
  }
  if (corpus.empty()) throw DataError("train_sidecar: empty corpus");
  if (batch_size == 0) throw ShapeError("train_sidecar: batch_size must be >= 1");
  detail::check_frame_grid(backbone.config, "train_sidecar");
  detail::check_streams(corpus, cfg.n_speakers, "train_sidecar");
  SidecarTrainResult out;
  out.sidecar = Sidecar::init(cfg, seed);
  Adam opt(adam_cfg);
  LrSchedule sched{max_updates};
  for (size_t step = 0; step < max_updates; ++step) {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> losses;
    losses.reserve(batch_size);
    double ctc_acc = 0, diar_acc = 0;
    for (size_t j = 0; j < batch_size; ++j) {
      const Mixture& m = corpus[(step * batch_size + j) % corpus.size()];
      MultiOutput mo = multi_forward(backbone, out.sidecar, m.waveform);
      Tensor ref = ops::reshape(m.activity, {1, m.activity.dim(0), m.activity.dim(1)});
      CombinedResult cr = combined_loss(mo.logits, m.transcripts, mo.d, ref, lambda);
      losses.push_back(cr.loss);
      ctc_acc += cr.pit_value;
      diar_acc += cr.diar_value;
    }
    Tensor loss = losses.size() == 1 ? losses[0] : ops::mean(ops::concat(losses, 0));
    double lv = loss.value();
    detail::check_finite_loss(lv, step);
    opt.zero_grad(out.sidecar.params);
    tape.backward(loss);
    opt.step(out.sidecar.params, sched.factor(step));
    double inv = 1.0 / static_cast<double>(batch_size);
    StepLog sl{step, lv, ctc_acc * inv, diar_acc * inv};
    out.log.push_back(sl);
    if (on_step) on_step(sl);
  }
  return out;
}

inline SidecarTrainResult adapt_diar(const Backbone& backbone, Sidecar sidecar,
                                     const std::vector<Mixture>& corpus, const SegmentPlan& plan,
                                     const AdamConfig& adam_cfg, size_t max_updates,
                                     const StepCallback& on_step = {}) {
  if (!backbone.frozen) throw DataError("adapt_diar: backbone must be frozen");
  plan.validate();
  if (corpus.empty()) throw DataError("adapt_diar: empty corpus");
  detail::check_frame_grid(backbone.config, "adapt_diar");
  detail::check_streams(corpus, sidecar.config.n_speakers, "adapt_diar");
  SidecarTrainResult out;
  out.sidecar = std::move(sidecar);
  Adam opt(adam_cfg);
  LrSchedule sched{max_updates};
  for (size_t step = 0; step < max_updates; ++step) {
    const Mixture& m = corpus[step % corpus.size()];
    std::vector<FrameSpan> spans = plan_segments(m.frames(), plan);
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> d_segs, ref_segs;
    d_segs.reserve(spans.size());
    ref_segs.reserve(spans.size());
    for (const FrameSpan& span : spans) {
      std::vector<double> w(m.waveform.begin() + span.start * kFrameSamples,
                            m.waveform.begin() + span.end * kFrameSamples);
      Tensor emb = backbone.encode_lower(backbone.extract_features(w));
      SeparationResult sep = out.sidecar.separate(emb);
      Tensor d = out.sidecar.diar_activity(sep.masks, 1);  // (1, S, T_seg)
      d_segs.push_back(ops::reshape(d, {d.dim(1), d.dim(2)}));
      ref_segs.push_back(detail::slice_cols(m.activity, span.start, span.end));
    }
    Tensor loss = adaptation_loss(d_segs, ref_segs, plan.shared_frames());
    double lv = loss.value();
    detail::check_finite_loss(lv, step);
    opt.zero_grad(out.sidecar.params);
    tape.backward(loss);
    opt.step(out.sidecar.params, sched.factor(step));
    StepLog sl{step, lv, 0.0, lv};
    out.log.push_back(sl);
    if (on_step) on_step(sl);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

inline std::vector<std::string> tokens_to_words(const CtcTarget& tokens,
                                                const std::vector<std::string>& vocab) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t <= 0 || static_cast<size_t>(t) >= vocab.size()) {
      throw DataError(str_cat("token ", t, " outside vocab of size ", vocab.size()));
    }
    out.push_back(vocab[static_cast<size_t>(t)]);
  }
  return out;
}

struct AsrReport {
  WerBreakdown pooled;  // micro-pooled over the corpus
  size_t items = 0;
};

namespace detail {

inline void finish_wer(WerBreakdown& b) {
  b.wer = static_cast<double>(b.substitutions + b.insertions + b.deletions) /
          static_cast<double>(std::max<size_t>(1, b.reference_words));
}

}  // namespace detail

inline AsrReport eval_asr_single(const Backbone& bb, const std::vector<Mixture>& corpus) {
  if (corpus.empty()) throw DataError("eval_asr: empty corpus");
  detail::check_streams(corpus, 1, "eval_asr");
  AsrReport rep;
  for (const Mixture& m : corpus) {
    CtcTarget hyp = greedy_ctc_row(bb.asr_logits(m.waveform), 0);
    EditCounts c = edit_distance(tokens_to_words(m.transcripts[0], bb.config.vocab),
                                 tokens_to_words(hyp, bb.config.vocab));
    rep.pooled.substitutions += c.substitutions;
    rep.pooled.insertions += c.insertions;
    rep.pooled.deletions += c.deletions;
    rep.pooled.reference_words += m.transcripts[0].size();
    ++rep.items;
  }
  detail::finish_wer(rep.pooled);
  return rep;
}

inline AsrReport eval_asr_multi(const Backbone& bb, const Sidecar& sc,
                                const std::vector<Mixture>& corpus) {
  if (corpus.empty()) throw DataError("eval_asr: empty corpus");
  detail::check_streams(corpus, sc.config.n_speakers, "eval_asr");
  AsrReport rep;
  for (const Mixture& m : corpus) {
    MultiOutput mo = multi_forward(bb, sc, m.waveform);
    size_t S = sc.config.n_speakers;
    std::vector<std::vector<std::string>> refs, hyps;
    refs.reserve(S);
    hyps.reserve(S);
    for (size_t s = 0; s < S; ++s) {
      refs.push_back(tokens_to_words(m.transcripts[s], bb.config.vocab));
      hyps.push_back(tokens_to_words(greedy_ctc_row(mo.logits, s), bb.config.vocab));
    }
    WerBreakdown wb = permuted_wer(refs, hyps).first;
    rep.pooled.substitutions += wb.substitutions;
    rep.pooled.insertions += wb.insertions;
    rep.pooled.deletions += wb.deletions;
    rep.pooled.reference_words += wb.reference_words;
    ++rep.items;
  }
  detail::finish_wer(rep.pooled);
  return rep;
}

struct DerReport {
  DerBreakdown pooled;  // seconds pooled over the corpus, rates recomputed
  size_t items = 0;
};

inline DerReport eval_der_corpus(const Backbone& bb, const Sidecar& sc,
                                 const std::vector<Mixture>& corpus, double collar_seconds) {
  if (corpus.empty()) throw DataError("eval_der: empty corpus");
  detail::check_frame_grid(bb.config, "eval_der");
  detail::check_streams(corpus, sc.config.n_speakers, "eval_der");
  DerReport rep;
  for (const Mixture& m : corpus) {
    Tensor d = diar_values(bb, sc, m.waveform);
    DiarTimeline hyp = timeline_from_activity(binarize_activity(d), kFrameMs);
    DiarTimeline ref = timeline_from_activity(m.activity, kFrameMs);
    DerBreakdown one = der_components(ref, hyp, collar_seconds);
    rep.pooled.miss_seconds += one.miss_seconds;
    rep.pooled.falarm_seconds += one.falarm_seconds;
    rep.pooled.confusion_seconds += one.confusion_seconds;
    rep.pooled.scored_speech_seconds += one.scored_speech_seconds;
    ++rep.items;
  }
  rep.pooled = finish_der(rep.pooled);
  return rep;
}

inline nlohmann::json asr_report_json(const AsrReport& r) {
  nlohmann::json j;
  j["wer"] = r.pooled.wer;
  j["substitutions"] = r.pooled.substitutions;
  j["insertions"] = r.pooled.insertions;
  j["deletions"] = r.pooled.deletions;
  j["reference_words"] = r.pooled.reference_words;
  j["items"] = r.items;
  return j;
}

inline nlohmann::json der_report_json(const DerReport& r, double collar_seconds) {
  nlohmann::json j;
  j["der"] = r.pooled.der;
  j["mi"] = r.pooled.mi;
  j["fa"] = r.pooled.fa;
  j["cf"] = r.pooled.cf;
  j["miss_seconds"] = r.pooled.miss_seconds;
  j["falarm_seconds"] = r.pooled.falarm_seconds;
  j["confusion_seconds"] = r.pooled.confusion_seconds;
  j["scored_speech_seconds"] = r.pooled.scored_speech_seconds;
  j["collar"] = collar_seconds;
  j["items"] = r.items;
  return j;
}

// ---------------------------------------------------------------------------
// Long-recording inference: segment, forward each span, stitch, binarize.
// ---------------------------------------------------------------------------

struct DiarizeResult {
  DiarTimeline timeline;
  size_t segments = 0;
  size_t total_frames = 0;
};

inline DiarizeResult diarize_recording(const Backbone& bb, const Sidecar& sc,
                                       const std::vector<double>& waveform,
                                       const SegmentPlan& plan) {
  plan.validate();
  size_t frame = bb.config.frame_samples();
  size_t total = waveform.size() / frame;
  if (total == 0) throw DataError("diarize: waveform shorter than one frame");
  std::vector<FrameSpan> spans = plan_segments(total, plan);
  std::vector<SegmentActivity> segs;
  segs.reserve(spans.size());
  for (const FrameSpan& span : spans) {
    std::vector<double> w(waveform.begin() + span.start * frame,
                          waveform.begin() + span.end * frame);
    segs.push_back({diar_values(bb, sc, w), span.start});
  }
  DiarizeResult out;
  out.timeline = timeline_from_activity(binarize_activity(stitch(segs)), bb.config.frame_ms);
  out.segments = spans.size();
  out.total_frames = total;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint wiring. A model checkpoint is the parameter store plus its config
// under "extra"; loading rebuilds the module and re-validates hashes/shapes.
// ---------------------------------------------------------------------------

inline void save_backbone(const std::filesystem::path& dir, const Backbone& bb,
                          nlohmann::json extra = nlohmann::json::object()) {
  extra["kind"] = "backbone";
  extra["frozen"] = bb.frozen;
  extra["config"] = backbone_config_json(bb.config);
  save_checkpoint(dir, bb.params, extra);
}

inline Backbone load_backbone(const std::filesystem::path& dir) {
  Checkpoint ck = load_checkpoint(dir, false);
  if (ck.extra.value("kind", std::string()) != "backbone") {
    throw DataError(str_cat("checkpoint at ", dir.string(), " is not a backbone"));
  }
  Backbone bb;
  bb.config = backbone_config_from_json(ck.extra.at("config"));
  bb.config.validate();
  bb.params = std::move(ck.params);
  if (bb.params.find("dec.w") == bb.params.end()) {
    throw DataError("backbone checkpoint is missing decoder parameters");
  }
  if (ck.extra.value("frozen", false)) {
    bb.freeze();
  } else {
    for (auto& kv : bb.params) kv.second.set_requires_grad(true);
  }
  return bb;
}

inline void save_sidecar(const std::filesystem::path& dir, const Sidecar& sc,
                         nlohmann::json extra = nlohmann::json::object()) {
  extra["kind"] = "sidecar";
  extra["config"] = sidecar_config_json(sc.config);
  save_checkpoint(dir, sc.params, extra);
}

inline Sidecar load_sidecar(const std::filesystem::path& dir, bool trainable,
                            nlohmann::json* extra_out = nullptr) {
  Checkpoint ck = load_checkpoint(dir, trainable);
  if (ck.extra.value("kind", std::string()) != "sidecar") {
    throw DataError(str_cat("checkpoint at ", dir.string(), " is not a sidecar"));
  }
  if (extra_out) *extra_out = ck.extra;
  Sidecar sc;
  sc.config = sidecar_config_from_json(ck.extra.at("config"));
  sc.config.validate();
  sc.params = std::move(ck.params);
  if (sc.params.find("mask.w") == sc.params.end()) {
    throw DataError("sidecar checkpoint is missing mask parameters");
  }
  return sc;
}

// Append-only JSON-lines writer; one flushed line per record so a killed run
// leaves a parseable prefix.
inline void append_jsonl(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataError(str_cat("cannot open metrics log ", path.string()));
  f << j.dump() << "\n";
  f.flush();
  if (!f) throw DataError(str_cat("cannot write metrics log ", path.string()));
}

inline nlohmann::json step_log_json(const StepLog& sl) {
  nlohmann::json j;
  j["step"] = sl.step;
  j["loss"] = sl.loss;
  j["ctc"] = sl.ctc;
  j["diar"] = sl.diar;
  return j;
}

}  // namespace smtl

#endif  // SMTL_PIPELINE_HPP_
