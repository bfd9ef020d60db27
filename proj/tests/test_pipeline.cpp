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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "smtl/pipeline.hpp"

namespace smtl {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("smtl_pipeline_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SidecarConfig small_sidecar(size_t speakers = 2) {
  SidecarConfig cfg;
  cfg.io_channels = 64;
  cfg.bottleneck_channels = 8;
  cfg.hidden_channels = 12;
  cfg.kernel = 3;
  cfg.blocks_per_repeat = 2;
  cfg.repeats = 1;
  cfg.n_speakers = speakers;
  return cfg;
}

CorpusSpec tiny_spec(CorpusStyle style, size_t count) {
  CorpusSpec spec;
  spec.style = style;
  spec.count = count;
  spec.transcript_min = 2;
  spec.transcript_max = 2;
  return spec;
}

TEST(ConfigJson, BackboneRoundTrip) {
  BackboneConfig a = BackboneConfig::paper_scale();
  BackboneConfig b = backbone_config_from_json(backbone_config_json(a));
  EXPECT_EQ(b.sample_rate, a.sample_rate);
  EXPECT_EQ(b.frame_ms, a.frame_ms);
  ASSERT_EQ(b.extractor_spec.size(), a.extractor_spec.size());
  for (size_t i = 0; i < a.extractor_spec.size(); ++i) {
    EXPECT_EQ(b.extractor_spec[i].kernel, a.extractor_spec[i].kernel);
    EXPECT_EQ(b.extractor_spec[i].stride, a.extractor_spec[i].stride);
    EXPECT_EQ(b.extractor_spec[i].channels, a.extractor_spec[i].channels);
  }
  EXPECT_EQ(b.d_model, a.d_model);
  EXPECT_EQ(b.n_layers, a.n_layers);
  EXPECT_EQ(b.n_heads, a.n_heads);
  EXPECT_EQ(b.ffn_dim, a.ffn_dim);
  EXPECT_EQ(b.vocab, a.vocab);
  EXPECT_EQ(b.insertion_layer, a.insertion_layer);
  EXPECT_EQ(b.distance_bias, a.distance_bias);
}

TEST(ConfigJson, SidecarAndPlanRoundTrip) {
  SidecarConfig a = SidecarConfig::paper_scale(3);
  SidecarConfig b = sidecar_config_from_json(sidecar_config_json(a));
  EXPECT_EQ(b.io_channels, a.io_channels);
  EXPECT_EQ(b.bottleneck_channels, a.bottleneck_channels);
  EXPECT_EQ(b.hidden_channels, a.hidden_channels);
  EXPECT_EQ(b.kernel, a.kernel);
  EXPECT_EQ(b.blocks_per_repeat, a.blocks_per_repeat);
  EXPECT_EQ(b.repeats, a.repeats);
  EXPECT_EQ(b.n_speakers, a.n_speakers);

  SegmentPlan p;
  p.segment_seconds = 6.0;
  p.shared_seconds = 3.0;
  SegmentPlan q = plan_from_json(plan_json(p));
  EXPECT_EQ(q.segment_frames(), p.segment_frames());
  EXPECT_EQ(q.shared_frames(), p.shared_frames());
}

TEST(ConfigJson, UnknownKeysRejected) {
  EXPECT_THROW(backbone_config_from_json({{"d_model", 64}, {"bogus", 1}}), DataError);
  EXPECT_THROW(sidecar_config_from_json({{"bogus", 1}}), DataError);
  EXPECT_THROW(plan_from_json({{"bogus", 1}}), DataError);
  EXPECT_THROW(backbone_config_from_json(nlohmann::json::array()), DataError);
  EXPECT_THROW(backbone_config_from_json({{"d_model", "not a number"}}), DataError);
}

TEST(ConfigJson, MissingKeysKeepDefaults) {
  BackboneConfig c = backbone_config_from_json({{"d_model", 32}});
  EXPECT_EQ(c.d_model, 32u);
  EXPECT_EQ(c.n_layers, BackboneConfig{}.n_layers);
  EXPECT_EQ(c.vocab, BackboneConfig::default_vocab());
}

TEST(Corpus, SingleStyleShapes) {
  CorpusSpec spec = tiny_spec(CorpusStyle::kSingle, 5);
  spec.transcript_max = 3;
  spec.speaker_pool = 3;
  auto corpus = gen_corpus(spec, 9);
  ASSERT_EQ(corpus.size(), 5u);
  for (const Mixture& m : corpus) {
    ASSERT_EQ(m.speaker_ids.size(), 1u);
    ASSERT_EQ(m.transcripts.size(), 1u);
    ASSERT_GE(m.transcripts[0].size(), 2u);
    ASSERT_LE(m.transcripts[0].size(), 3u);
    ASSERT_EQ(m.activity.dim(0), 1u);
    ASSERT_EQ(m.activity.dim(1), m.frames());
    for (double v : m.activity.values()) ASSERT_EQ(v, 1.0);
  }
  auto again = gen_corpus(spec, 9);
  for (size_t i = 0; i < corpus.size(); ++i) {
    ASSERT_EQ(corpus[i].waveform, again[i].waveform);
    ASSERT_EQ(corpus[i].transcripts, again[i].transcripts);
  }
  EXPECT_NE(gen_corpus(spec, 10)[0].waveform, corpus[0].waveform);
}

TEST(Corpus, MultiTalkerStyles) {
  CorpusSpec spec = tiny_spec(CorpusStyle::kLeftAligned, 4);
  spec.speakers = 3;
  auto left = gen_corpus(spec, 3);
  ASSERT_EQ(left.size(), 4u);
  for (const Mixture& m : left) {
    ASSERT_EQ(m.transcripts.size(), 3u);
    ASSERT_EQ(m.activity.dim(0), 3u);
    for (double o : m.onsets) ASSERT_EQ(o, 0.0);
  }
  spec.style = CorpusStyle::kDelayed;
  auto delayed = gen_corpus(spec, 3);
  for (const Mixture& m : delayed) {
    ASSERT_EQ(m.onsets[0], 0.0);
    ASSERT_EQ(m.transcripts.size(), 3u);
  }
}

TEST(Corpus, ConversationStyle) {
  CorpusSpec spec = tiny_spec(CorpusStyle::kConversation, 2);
  spec.conversation_seconds = 8.0;
  auto corpus = gen_corpus(spec, 11);
  ASSERT_EQ(corpus.size(), 2u);
  for (const Mixture& m : corpus) {
    EXPECT_EQ(m.speaker_ids.size(), 2u);
    EXPECT_EQ(m.activity.dim(0), 2u);
    EXPECT_EQ(m.frames(), 400u);
  }
}

TEST(Corpus, GainJitterChangesAudioOnly) {
  CorpusSpec spec = tiny_spec(CorpusStyle::kLeftAligned, 2);
  auto plain = gen_corpus(spec, 21);
  spec.gain_jitter = true;
  auto jittered = gen_corpus(spec, 21);
  EXPECT_EQ(plain[0].transcripts, jittered[0].transcripts);
  EXPECT_NE(plain[0].waveform, jittered[0].waveform);
}

TEST(Corpus, ValidationAndStyleNames) {
  CorpusSpec bad = tiny_spec(CorpusStyle::kSingle, 0);
  EXPECT_THROW(gen_corpus(bad, 1), ShapeError);
  CorpusSpec conv3 = tiny_spec(CorpusStyle::kConversation, 1);
  conv3.speakers = 3;
  EXPECT_THROW(gen_corpus(conv3, 1), DataError);
  CorpusSpec lens = tiny_spec(CorpusStyle::kSingle, 1);
  lens.transcript_min = 4;
  lens.transcript_max = 3;
  EXPECT_THROW(gen_corpus(lens, 1), ShapeError);
  EXPECT_EQ(parse_style("left-aligned"), CorpusStyle::kLeftAligned);
  EXPECT_EQ(style_name(CorpusStyle::kDelayed), "delayed");
  EXPECT_THROW(parse_style("bogus"), DataError);
}

TEST(Corpus, ManifestRoundTripThroughLoadCorpus) {
  auto dir = fresh_dir("corpus_rt");
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kLeftAligned, 3), 17);
  fs::path manifest = write_manifest(corpus, dir);
  auto loaded = load_corpus(manifest);
  ASSERT_EQ(loaded.size(), corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    ASSERT_EQ(loaded[i].waveform, corpus[i].waveform);
    ASSERT_EQ(loaded[i].transcripts, corpus[i].transcripts);
    ASSERT_EQ(loaded[i].onsets, corpus[i].onsets);
    ASSERT_EQ(loaded[i].activity.shape(), corpus[i].activity.shape());
    ASSERT_EQ(loaded[i].activity.values(), corpus[i].activity.values());
  }
  EXPECT_THROW(load_corpus(dir / "missing.jsonl"), DataError);
}

TEST(Pretrain, ZeroStepsLeavesInitUnchanged) {
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kSingle, 2), 5);
  BackboneConfig cfg;
  auto out = pretrain_single_talker(corpus, cfg, AdamConfig{}, 0, 1, 33);
  EXPECT_TRUE(out.log.empty());
  EXPECT_EQ(params_digest(out.backbone.params), params_digest(Backbone::init(cfg, 33).params));
}

TEST(Pretrain, LossDecreasesOnTinyTask) {
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kSingle, 4), 7);
  AdamConfig adam;
  adam.lr = 3e-3;
  auto out = pretrain_single_talker(corpus, BackboneConfig{}, adam, 60, 1, 41);
  ASSERT_EQ(out.log.size(), 60u);
  double head = 0, tail = 0;
  for (size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(out.log[i].step, i);
    head += out.log[i].loss;
    tail += out.log[50 + i].loss;
  }
  EXPECT_LT(tail, head);
  for (const StepLog& sl : out.log) {
    EXPECT_TRUE(std::isfinite(sl.loss));
    EXPECT_EQ(sl.diar, 0.0);
  }
}

TEST(Pretrain, DeterministicAcrossRuns) {
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kSingle, 3), 13);
  auto a = pretrain_single_talker(corpus, BackboneConfig{}, AdamConfig{}, 8, 2, 5);
  auto b = pretrain_single_talker(corpus, BackboneConfig{}, AdamConfig{}, 8, 2, 5);
  EXPECT_EQ(params_digest(a.backbone.params), params_digest(b.backbone.params));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
}

TEST(Pretrain, InputValidation) {
  auto multi = gen_corpus(tiny_spec(CorpusStyle::kLeftAligned, 2), 3);
  EXPECT_THROW(pretrain_single_talker(multi, BackboneConfig{}, AdamConfig{}, 1, 1, 0), DataError);
  EXPECT_THROW(pretrain_single_talker({}, BackboneConfig{}, AdamConfig{}, 1, 1, 0), DataError);
  auto single = gen_corpus(tiny_spec(CorpusStyle::kSingle, 1), 3);
  EXPECT_THROW(pretrain_single_talker(single, BackboneConfig{}, AdamConfig{}, 1, 0, 0),
               ShapeError);
}

TEST(TrainSidecar, RequiresFrozenBackbone) {
  Backbone bb = Backbone::init(BackboneConfig{}, 2);
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kLeftAligned, 1), 3);
  EXPECT_THROW(
      train_sidecar(bb, small_sidecar(), corpus, AdamConfig{}, 0.01, 1, 1, 0), DataError);
}

TEST(TrainSidecar, TrainsSidecarAndLeavesBackboneUntouched) {
  Backbone bb = Backbone::init(BackboneConfig{}, 2);
  bb.freeze();
  std::string bb_digest = params_digest(bb.params);
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kLeftAligned, 3), 19);
  AdamConfig adam;
  adam.lr = 1e-3;
  auto out = train_sidecar(bb, small_sidecar(), corpus, adam, 0.01, 4, 1, 23);
  ASSERT_EQ(out.log.size(), 4u);
  EXPECT_NEAR(out.log[0].diar, 0.25, 1e-12);
  for (const StepLog& sl : out.log) {
    EXPECT_TRUE(std::isfinite(sl.loss));
    EXPECT_GT(sl.ctc, 0.0);
  }
  EXPECT_EQ(params_digest(bb.params), bb_digest);
  EXPECT_NE(params_digest(out.sidecar.params),
            params_digest(Sidecar::init(small_sidecar(), 23).params));
}

TEST(TrainSidecar, LambdaZeroKeepsDiarBranchAtZero) {
  Backbone bb = Backbone::init(BackboneConfig{}, 2);
  bb.freeze();
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kLeftAligned, 2), 29);
  auto out = train_sidecar(bb, small_sidecar(), corpus, AdamConfig{}, 0.0, 3, 1, 31);
  for (double v : out.sidecar.params.at("diar.w").values()) EXPECT_EQ(v, 0.0);
  for (const StepLog& sl : out.log) EXPECT_EQ(sl.diar, 0.0);
}

TEST(TrainSidecar, DeterministicAndValidated) {
  Backbone bb = Backbone::init(BackboneConfig{}, 2);
  bb.freeze();
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kLeftAligned, 2), 37);
  auto a = train_sidecar(bb, small_sidecar(), corpus, AdamConfig{}, 0.01, 3, 1, 43);
  auto b = train_sidecar(bb, small_sidecar(), corpus, AdamConfig{}, 0.01, 3, 1, 43);
  EXPECT_EQ(params_digest(a.sidecar.params), params_digest(b.sidecar.params));

  CorpusSpec spec3 = tiny_spec(CorpusStyle::kLeftAligned, 1);
  spec3.speakers = 3;
  auto corpus3 = gen_corpus(spec3, 3);
  EXPECT_THROW(train_sidecar(bb, small_sidecar(2), corpus3, AdamConfig{}, 0.01, 1, 1, 0),
               DataError);
  SidecarConfig narrow = small_sidecar();
  narrow.io_channels = 32;
  EXPECT_THROW(train_sidecar(bb, narrow, corpus, AdamConfig{}, 0.01, 1, 1, 0), ShapeError);
}

TEST(AdaptDiar, RunsImprovesAndIsDeterministic) {
  Backbone bb = Backbone::init(BackboneConfig{}, 2);
  bb.freeze();
  CorpusSpec spec = tiny_spec(CorpusStyle::kConversation, 2);
  spec.conversation_seconds = 6.0;
  auto corpus = gen_corpus(spec, 47);
  SegmentPlan plan;
  plan.segment_seconds = 2.0;
  plan.shared_seconds = 1.0;
  AdamConfig adam;
  adam.lr = 1e-3;
  Sidecar init = Sidecar::init(small_sidecar(), 53);
  auto out = adapt_diar(bb, init, corpus, plan, adam, 30);
  ASSERT_EQ(out.log.size(), 30u);
  EXPECT_DOUBLE_EQ(out.log[0].loss, 0.25);
  EXPECT_LT(out.log.back().loss, out.log.front().loss);
  for (const StepLog& sl : out.log) {
    EXPECT_TRUE(std::isfinite(sl.loss));
    EXPECT_EQ(sl.ctc, 0.0);
  }
  auto again = adapt_diar(bb, Sidecar::init(small_sidecar(), 53), corpus, plan, adam, 30);
  EXPECT_EQ(params_digest(out.sidecar.params), params_digest(again.sidecar.params));
}

TEST(AdaptDiar, Validation) {
  Backbone bb = Backbone::init(BackboneConfig{}, 2);
  CorpusSpec spec = tiny_spec(CorpusStyle::kConversation, 1);
  spec.conversation_seconds = 6.0;
  auto corpus = gen_corpus(spec, 3);
  SegmentPlan plan;
  plan.segment_seconds = 2.0;
  plan.shared_seconds = 1.0;
  Sidecar sc = Sidecar::init(small_sidecar(), 1);
  EXPECT_THROW(adapt_diar(bb, sc, corpus, plan, AdamConfig{}, 1), DataError);
  bb.freeze();
  SegmentPlan bad;
  bad.segment_seconds = 1.0;
  bad.shared_seconds = 2.0;
  EXPECT_THROW(adapt_diar(bb, sc, corpus, bad, AdamConfig{}, 1), ShapeError);
}

TEST(Eval, TokensToWords) {
  auto vocab = BackboneConfig::default_vocab();
  EXPECT_EQ(tokens_to_words({1, 2, 3}, vocab), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_THROW(tokens_to_words({0}, vocab), DataError);
  EXPECT_THROW(tokens_to_words({99}, vocab), DataError);
}

TEST(Eval, AsrSingleCountsTokens) {
  Backbone bb = Backbone::init(BackboneConfig{}, 59);
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kSingle, 3), 61);
  AsrReport rep = eval_asr_single(bb, corpus);
  EXPECT_EQ(rep.items, 3u);
  size_t want_ref = 0;
  for (const Mixture& m : corpus) want_ref += m.transcripts[0].size();
  EXPECT_EQ(rep.pooled.reference_words, want_ref);
  EXPECT_GE(rep.pooled.wer, 0.0);
  EXPECT_TRUE(std::isfinite(rep.pooled.wer));
  EXPECT_THROW(eval_asr_single(bb, gen_corpus(tiny_spec(CorpusStyle::kLeftAligned, 1), 3)),
               DataError);
}

TEST(Eval, AsrMultiChecksStreams) {
  Backbone bb = Backbone::init(BackboneConfig{}, 67);
  bb.freeze();
  Sidecar sc = Sidecar::init(small_sidecar(), 71);
  auto corpus = gen_corpus(tiny_spec(CorpusStyle::kLeftAligned, 2), 73);
  AsrReport rep = eval_asr_multi(bb, sc, corpus);
  EXPECT_EQ(rep.items, 2u);
  EXPECT_GT(rep.pooled.reference_words, 0u);
  CorpusSpec spec3 = tiny_spec(CorpusStyle::kLeftAligned, 1);
  spec3.speakers = 3;
  EXPECT_THROW(eval_asr_multi(bb, sc, gen_corpus(spec3, 3)), DataError);
}

TEST(Eval, DerPoolingAndCollarMonotonicity) {
  Backbone bb = Backbone::init(BackboneConfig{}, 79);
  bb.freeze();
  Sidecar sc = Sidecar::init(small_sidecar(), 83);
  CorpusSpec spec = tiny_spec(CorpusStyle::kLeftAligned, 2);
  spec.transcript_min = spec.transcript_max = 3;  // keep speech outside the collar
  auto corpus = gen_corpus(spec, 89);
  DerReport wide = eval_der_corpus(bb, sc, corpus, 0.25);
  DerReport tight = eval_der_corpus(bb, sc, corpus, 0.0);
  EXPECT_EQ(wide.items, 2u);
  EXPECT_GE(tight.pooled.der, wide.pooled.der);
  EXPECT_DOUBLE_EQ(tight.pooled.der, tight.pooled.mi + tight.pooled.fa + tight.pooled.cf);
  EXPECT_GT(tight.pooled.scored_speech_seconds, 0.0);
}

TEST(Diarize, SegmentArithmeticMatchesPlan) {
  SegmentPlan plan;  // 30 s / 15 s default
  EXPECT_EQ(plan_segments(3000, plan).size(), 3u);  // a 60 s recording

  Backbone bb = Backbone::init(BackboneConfig{}, 97);
  bb.freeze();
  Sidecar sc = Sidecar::init(small_sidecar(), 101);
  CorpusSpec spec = tiny_spec(CorpusStyle::kConversation, 1);
  spec.conversation_seconds = 12.0;
  Mixture conv = gen_corpus(spec, 103)[0];
  SegmentPlan small;
  small.segment_seconds = 5.0;
  small.shared_seconds = 2.5;
  DiarizeResult res = diarize_recording(bb, sc, conv.waveform, small);
  EXPECT_EQ(res.total_frames, 600u);
  EXPECT_EQ(res.segments, plan_segments(600, small).size());
  for (const DiarInterval& iv : res.timeline) {
    EXPECT_TRUE(iv.speaker == "spk0" || iv.speaker == "spk1");
  }
  EXPECT_THROW(diarize_recording(bb, sc, std::vector<double>(100, 0.0), small), DataError);
}

TEST(Checkpoints, BackboneRoundTrip) {
  auto dir = fresh_dir("ck_backbone");
  Backbone bb = Backbone::init(BackboneConfig{}, 107);
  bb.freeze();
  save_backbone(dir, bb);
  Backbone loaded = load_backbone(dir);
  EXPECT_EQ(params_digest(loaded.params), params_digest(bb.params));
  EXPECT_TRUE(loaded.frozen);
  EXPECT_EQ(loaded.config.d_model, bb.config.d_model);
  EXPECT_EQ(loaded.config.vocab, bb.config.vocab);
  for (const auto& [name, p] : loaded.params) EXPECT_FALSE(p.requires_grad()) << name;

  auto dir2 = fresh_dir("ck_backbone_live");
  Backbone live = Backbone::init(BackboneConfig{}, 109);
  save_backbone(dir2, live);
  Backbone loaded2 = load_backbone(dir2);
  EXPECT_FALSE(loaded2.frozen);
  for (const auto& [name, p] : loaded2.params) EXPECT_TRUE(p.requires_grad()) << name;
}

TEST(Checkpoints, SidecarRoundTripAndKindCheck) {
  auto dir = fresh_dir("ck_sidecar");
  Sidecar sc = Sidecar::init(small_sidecar(3), 113);
  save_sidecar(dir, sc);
  Sidecar loaded = load_sidecar(dir, true);
  EXPECT_EQ(params_digest(loaded.params), params_digest(sc.params));
  EXPECT_EQ(loaded.config.n_speakers, 3u);
  for (const auto& [name, p] : loaded.params) EXPECT_TRUE(p.requires_grad()) << name;
  Sidecar frozen = load_sidecar(dir, false);
  for (const auto& [name, p] : frozen.params) EXPECT_FALSE(p.requires_grad()) << name;

  EXPECT_THROW(load_backbone(dir), DataError);
  auto bdir = fresh_dir("ck_kind");
  Backbone bb = Backbone::init(BackboneConfig{}, 127);
  save_backbone(bdir, bb);
  EXPECT_THROW(load_sidecar(bdir, true), DataError);
}

TEST(MetricsLog, AppendJsonlLeavesParseableLines) {
  auto dir = fresh_dir("jsonl");
  fs::path log = dir / "metrics.jsonl";
  append_jsonl(log, step_log_json({0, 1.5, 1.25, 0.25}));
  append_jsonl(log, step_log_json({1, 1.25, 1.0, 0.25}));
  std::ifstream f(log);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(f, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].at("step").get<size_t>(), 0u);
  EXPECT_DOUBLE_EQ(rows[1].at("loss").get<double>(), 1.25);
  EXPECT_DOUBLE_EQ(rows[0].at("ctc").get<double>(), 1.25);
  EXPECT_DOUBLE_EQ(rows[0].at("diar").get<double>(), 0.25);
  append_jsonl(log, step_log_json({2, 1.0, 0.75, 0.25}));
  std::ifstream f2(log);
  size_t n = 0;
  while (std::getline(f2, line)) ++n;
  EXPECT_EQ(n, 3u);
}

}  // namespace
}  // namespace smtl
