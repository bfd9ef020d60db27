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

// Deterministic synthetic corpus generation. Tokens render as tone patterns
// (per-token frequency band, speaker-specific fundamental and timbre), which
// keeps the toy ASR task learnable in minutes while sources still overlap in
// time and partially in frequency.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "smtl/common.hpp"
#include "smtl/diarize.hpp"
#include "smtl/metrics.hpp"
#include "smtl/objectives.hpp"
#include "smtl/tensor.hpp"

namespace smtl {

inline constexpr size_t kSampleRate = 8000;
inline constexpr size_t kFrameSamples = 160;  // 20 ms
inline constexpr double kFrameMs = 20.0;
inline constexpr double kFrameSeconds = kFrameMs / 1000.0;
inline constexpr size_t kFramesPerSecond = kSampleRate / kFrameSamples;
inline constexpr size_t kVocabSize = 9;  // blank + 8 tokens

struct SpeakerProfile {
  size_t speaker_id = 0;
  double f0 = 100.0;            // fundamental, drives the vibrato rate
  double band_offset_hz = 0.0;  // shifts all token bands for this speaker
  double h2 = 0.2;              // second-harmonic weight
  size_t dur_min_frames = 10;
  size_t dur_max_frames = 14;

  // Stock voices sit in partially overlapping band windows: voice idx
  // covers [300 + 630*idx, 1280 + 630*idx] Hz, so adjacent voices share
  // ~36% of their bands while colliding tokens stay 70 Hz off-grid.
  // h2 = 0 keeps stock harmonics from leaking into higher windows.
  static SpeakerProfile make(size_t idx) {
    SpeakerProfile p;
    p.speaker_id = idx;
    p.f0 = 100.0 + 40.0 * static_cast<double>(idx);
    p.band_offset_hz = 630.0 * static_cast<double>(idx);
    p.h2 = 0.0;
    return p;
  }

  double token_hz(int token) const {
    return 300.0 + 140.0 * static_cast<double>(token - 1) + band_offset_hz;
  }
};

struct Utterance {
  std::vector<double> waveform;
  CtcTarget transcript;
  size_t speaker_id = 0;
  std::vector<size_t> token_end_frames;  // cumulative, sorted

  size_t frames() const { return waveform.size() / kFrameSamples; }
};

namespace detail {

inline void render_token(std::vector<double>& wave, size_t start_frame, size_t dur_frames,
                         int token, const SpeakerProfile& prof) {
  double hz = prof.token_hz(token);
  size_t n = dur_frames * kFrameSamples;
  size_t off = start_frame * kFrameSamples;
  double vib_hz = prof.f0 / 20.0;
  size_t ramp = kSampleRate / 200;  // 5 ms attack/release
  for (size_t i = 0; i < n; ++i) {
    if (off + i >= wave.size()) break;
    double t = static_cast<double>(i) / kSampleRate;
    double span = static_cast<double>(n) / kSampleRate;
    double f = hz * (1.0 + 0.03 * t / span);  // slight upward chirp
    double s = std::sin(2.0 * kPi * f * t) + prof.h2 * std::sin(2.0 * kPi * 2.0 * f * t);
    double am = 1.0 + 0.2 * std::sin(2.0 * kPi * vib_hz * t);
    double env = 1.0;
    if (i < ramp) env = static_cast<double>(i) / static_cast<double>(ramp);
    if (n - 1 - i < ramp) env = std::min(env, static_cast<double>(n - 1 - i) / ramp);
    wave[off + i] += 0.4 * s * am * env;
  }
}

}  // namespace detail

// Deterministic for (profile, transcript, seed); the seed only drives token
// durations here.
inline Utterance gen_utterance_tokens(const SpeakerProfile& prof, const CtcTarget& transcript,
                                      uint64_t seed) {
  if (transcript.empty()) throw ShapeError("gen_utterance: transcript must be non-empty");
  detail::validate_ctc_target(transcript, kVocabSize);
  Rng rng(derive_seed(seed, "utt-dur", prof.speaker_id));
  Utterance u;
  u.speaker_id = prof.speaker_id;
  u.transcript = transcript;
  std::vector<size_t> durs;
  size_t total = 0;
  for (size_t i = 0; i < transcript.size(); ++i) {
    size_t d = static_cast<size_t>(rng.uniform_int(
        static_cast<int64_t>(prof.dur_min_frames), static_cast<int64_t>(prof.dur_max_frames)));
    durs.push_back(d);
    total += d;
    u.token_end_frames.push_back(total);
  }
  u.waveform.assign(total * kFrameSamples, 0.0);
  size_t at = 0;
  for (size_t i = 0; i < transcript.size(); ++i) {
    detail::render_token(u.waveform, at, durs[i], transcript[i], prof);
    at += durs[i];
  }
  return u;
}

inline Utterance gen_utterance(const SpeakerProfile& prof, size_t transcript_length,
                               uint64_t seed) {
  if (transcript_length == 0) throw ShapeError("gen_utterance: transcript_length must be >= 1");
  Rng rng(derive_seed(seed, "utt-tok", prof.speaker_id));
  CtcTarget transcript(transcript_length);
  for (auto& tok : transcript) {
    tok = static_cast<int>(rng.uniform_int(1, static_cast<int64_t>(kVocabSize) - 1));
  }
  return gen_utterance_tokens(prof, transcript, seed);
}

struct Mixture {
  std::vector<double> waveform;
  std::vector<size_t> speaker_ids;
  std::vector<CtcTarget> transcripts;
  std::vector<double> onsets;  // seconds, frame-aligned
  Tensor activity;             // (S, T) binary, 20 ms frames

  size_t frames() const { return waveform.size() / kFrameSamples; }
};

namespace detail {

inline Mixture mix_at_offsets(const std::vector<Utterance>& utts,
                              const std::vector<size_t>& onset_frames,
                              const std::vector<double>& gains) {
  size_t S = utts.size();
  size_t total_frames = 0;
  for (size_t s = 0; s < S; ++s) {
    total_frames = std::max(total_frames, onset_frames[s] + utts[s].frames());
  }
  Mixture m;
  m.waveform.assign(total_frames * kFrameSamples, 0.0);
  m.activity = Tensor::zeros({S, total_frames});
  for (size_t s = 0; s < S; ++s) {
    const auto& u = utts[s];
    size_t off = onset_frames[s] * kFrameSamples;
    double g = gains.empty() ? 1.0 : gains[s];
    for (size_t i = 0; i < u.waveform.size(); ++i) m.waveform[off + i] += g * u.waveform[i];
    for (size_t t = 0; t < u.frames(); ++t) {
      m.activity.values()[s * total_frames + onset_frames[s] + t] = 1.0;
    }
    m.speaker_ids.push_back(u.speaker_id);
    m.transcripts.push_back(u.transcript);
    m.onsets.push_back(static_cast<double>(onset_frames[s]) * kFrameSeconds);
  }
  return m;
}

inline void check_mix_inputs(const std::vector<Utterance>& utts) {
  if (utts.size() < 2) throw ShapeError("mix: need at least 2 utterances");
  for (size_t a = 0; a < utts.size(); ++a) {
    for (size_t b = a + 1; b < utts.size(); ++b) {
      if (utts[a].speaker_id == utts[b].speaker_id) {
        throw DataError(str_cat("mix: duplicate speaker id ", utts[a].speaker_id));
      }
    }
  }
}

}  // namespace detail

inline size_t onset_to_frame(double onset_seconds) {
  double frames = onset_seconds / kFrameSeconds;
  auto rounded = std::llround(frames);
  if (rounded < 0 || std::fabs(frames - static_cast<double>(rounded)) > 1e-6) {
    throw DataError(str_cat("onset ", onset_seconds, " is not aligned to the 20 ms frame grid"));
  }
  return static_cast<size_t>(rounded);
}

// All sources start at zero; the shorter ones are fully overlapped.
inline Mixture mix_left_aligned(const std::vector<Utterance>& utts,
                                const std::vector<double>& gains = {}) {
  detail::check_mix_inputs(utts);
  return detail::mix_at_offsets(utts, std::vector<size_t>(utts.size(), 0), gains);
}

// Explicit, frame-aligned onsets in seconds.
inline Mixture mix_at(const std::vector<Utterance>& utts, const std::vector<double>& onsets,
                      const std::vector<double>& gains = {}) {
  detail::check_mix_inputs(utts);
  if (onsets.size() != utts.size()) throw ShapeError("mix_at: one onset per utterance");
  std::vector<size_t> frames;
  frames.reserve(onsets.size());
  for (double o : onsets) frames.push_back(onset_to_frame(o));
  return detail::mix_at_offsets(utts, frames, gains);
}

// First source at zero; each later source gets a frame-aligned onset drawn
// uniformly in [0, end of the mixture so far], so zero overlap sits at the
// top of the range.
inline Mixture mix_delayed(const std::vector<Utterance>& utts, uint64_t seed,
                           const std::vector<double>& gains = {}) {
  detail::check_mix_inputs(utts);
  Rng rng(derive_seed(seed, "mix-delay", 0));
  std::vector<size_t> onsets(utts.size(), 0);
  size_t end_so_far = utts[0].frames();
  for (size_t s = 1; s < utts.size(); ++s) {
    onsets[s] = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(end_so_far)));
    end_so_far = std::max(end_so_far, onsets[s] + utts[s].frames());
  }
  return detail::mix_at_offsets(utts, onsets, gains);
}

struct ConversationModel {
  double mean_turn_seconds = 3.0;
  double min_turn_seconds = 0.6;
  double overlap_prob = 0.2;
  double max_overlap_seconds = 1.0;
};

struct Conversation {
  Mixture mixture;
  DiarTimeline timeline;
};

// Two speakers alternate; turn lengths are exponential (clamped below), and a
// turn boundary overlaps the next turn with probability overlap_prob. The
// returned timeline is exact and frame-aligned.
inline Conversation gen_conversation(const SpeakerProfile& a, const SpeakerProfile& b,
                                     double total_seconds, const ConversationModel& model,
                                     uint64_t seed) {
  if (a.speaker_id == b.speaker_id) throw DataError("gen_conversation: duplicate speaker id");
  if (total_seconds <= model.min_turn_seconds) {
    throw ShapeError("gen_conversation: total_seconds too small");
  }
  size_t total_frames =
      static_cast<size_t>(std::llround(total_seconds * kFramesPerSecond));
  Rng rng(derive_seed(seed, "conv", a.speaker_id * 7919 + b.speaker_id));
  const SpeakerProfile* profs[2] = {&a, &b};

  Conversation out;
  out.mixture.waveform.assign(total_frames * kFrameSamples, 0.0);
  out.mixture.activity = Tensor::zeros({2, total_frames});
  out.mixture.speaker_ids = {a.speaker_id, b.speaker_id};
  out.mixture.transcripts.resize(2);
  out.mixture.onsets = {0.0, 0.0};

  size_t cur = 0;
  size_t t = 0;
  size_t last_end[2] = {0, 0};
  while (t < total_frames) {
    const SpeakerProfile& prof = *profs[cur];
    double target_s = std::max(model.min_turn_seconds, rng.exponential(model.mean_turn_seconds));
    auto target_frames = static_cast<size_t>(std::llround(target_s * kFramesPerSecond));
    CtcTarget tokens;
    std::vector<size_t> durs;
    size_t turn_frames = 0;
    while (turn_frames < target_frames) {
      int tok = static_cast<int>(rng.uniform_int(1, static_cast<int64_t>(kVocabSize) - 1));
      size_t d = static_cast<size_t>(rng.uniform_int(
          static_cast<int64_t>(prof.dur_min_frames), static_cast<int64_t>(prof.dur_max_frames)));
      tokens.push_back(tok);
      durs.push_back(d);
      turn_frames += d;
    }
    size_t end = std::min(t + turn_frames, total_frames);
    size_t at = t;
    for (size_t i = 0; i < tokens.size() && at < end; ++i) {
      detail::render_token(out.mixture.waveform, at, std::min(durs[i], end - at), tokens[i],
                           prof);
      out.mixture.transcripts[cur].push_back(tokens[i]);
      at += durs[i];
    }
    for (size_t f = t; f < end; ++f) {
      out.mixture.activity.values()[cur * total_frames + f] = 1.0;
    }
    out.timeline.push_back({speaker_name(cur), static_cast<double>(t) * kFrameSeconds,
                            static_cast<double>(end) * kFrameSeconds});
    last_end[cur] = end;
    size_t next = t + turn_frames;
    if (rng.uniform() < model.overlap_prob) {
      double ov_s = rng.uniform(0.0, model.max_overlap_seconds);
      auto ov = static_cast<size_t>(std::llround(ov_s * kFramesPerSecond));
      ov = std::min(ov, turn_frames);
      next = t + turn_frames - ov;
    }
    cur = 1 - cur;
    t = std::max(next, last_end[cur]);  // a speaker never overlaps themselves
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus manifest: one JSON line per mixture, audio in the flat tensor
// container, references as RTTM.

inline std::string mixture_id(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "mix%05zu", index);
  return buf;
}

inline std::filesystem::path write_manifest(const std::vector<Mixture>& mixtures,
                                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto manifest_path = dir / "manifest.jsonl";
  std::ofstream mf(manifest_path);
  if (!mf) throw DataError(str_cat("write_manifest: cannot open ", manifest_path.string()));
  for (size_t i = 0; i < mixtures.size(); ++i) {
    const Mixture& m = mixtures[i];
    std::string id = mixture_id(i);
    auto audio_path = dir / (id + ".sdtn");
    auto rttm_path = dir / (id + ".rttm");
    save_tensor(audio_path, Tensor::from_values({m.waveform.size()}, m.waveform));
    {
      std::ofstream rf(rttm_path);
      if (!rf) throw DataError(str_cat("write_manifest: cannot open ", rttm_path.string()));
      rf << to_rttm(timeline_from_activity(m.activity, kFrameMs), id);
    }
    nlohmann::json j;
    j["id"] = id;
    j["audio_path"] = audio_path.filename().string();
    j["rttm_path"] = rttm_path.filename().string();
    j["speakers"] = nlohmann::json::array();
    for (size_t s = 0; s < m.speaker_ids.size(); ++s) {
      nlohmann::json spk;
      spk["id"] = str_cat("spk", m.speaker_ids[s]);
      spk["transcript"] = m.transcripts[s];
      spk["onset"] = m.onsets[s];
      j["speakers"].push_back(spk);
    }
    mf << j.dump() << "\n";
  }
  if (!mf) throw DataError(str_cat("write_manifest: write failed for ", manifest_path.string()));
  return manifest_path;
}

struct ManifestEntry {
  std::string id;
  std::vector<double> waveform;
  std::vector<size_t> speaker_ids;
  std::vector<CtcTarget> transcripts;
  std::vector<double> onsets;
  DiarTimeline reference;  // parsed from the RTTM file
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError(str_cat("read_manifest: cannot open ", manifest_path.string()));
  auto dir = manifest_path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(mf, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(str_cat("read_manifest: line ", line_no, ": ", e.what()));
    }
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    Tensor audio = load_tensor(dir / j.at("audio_path").get<std::string>());
    e.waveform = audio.values();
    for (const auto& spk : j.at("speakers")) {
      std::string sid = spk.at("id").get<std::string>();
      if (sid.rfind("spk", 0) != 0) {
        throw DataError(str_cat("read_manifest: bad speaker id '", sid, "'"));
      }
      e.speaker_ids.push_back(std::stoul(sid.substr(3)));
      e.transcripts.push_back(spk.at("transcript").get<CtcTarget>());
      e.onsets.push_back(spk.at("onset").get<double>());
    }
    std::ifstream rf(dir / j.at("rttm_path").get<std::string>());
    if (rf) {
      std::string rttm((std::istreambuf_iterator<char>(rf)), std::istreambuf_iterator<char>());
      e.reference = parse_rttm(rttm);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace smtl
