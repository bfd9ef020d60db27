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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "smtl/backbone.hpp"
#include "smtl/mixer.hpp"
#include "smtl/optim.hpp"

namespace smtl {
namespace {

std::vector<double> sine_wave(size_t samples, double hz) {
  std::vector<double> w(samples);
  for (size_t i = 0; i < samples; ++i) {
    w[i] = 0.5 * std::sin(2.0 * kPi * hz * static_cast<double>(i) / 8000.0);
  }
  return w;
}

TEST(BackboneConfig, ToyDefaultsValidate) {
  BackboneConfig cfg = BackboneConfig::toy();
  cfg.validate();
  EXPECT_EQ(cfg.stride_product(), 160u);
  EXPECT_EQ(cfg.frame_samples(), 160u);
  EXPECT_EQ(cfg.receptive_field_samples(), 45u);
  EXPECT_EQ(cfg.vocab_size(), kVocabSize);
  BackboneConfig::paper_scale().validate();
}

TEST(BackboneConfig, InvalidConfigsThrow) {
  BackboneConfig cfg;
  cfg.insertion_layer = 0;
  EXPECT_THROW(cfg.validate(), ShapeError);
  cfg = BackboneConfig::toy();
  cfg.insertion_layer = cfg.n_layers;
  EXPECT_THROW(cfg.validate(), ShapeError);
  cfg = BackboneConfig::toy();
  cfg.extractor_spec[1].stride = 16;
  EXPECT_THROW(cfg.validate(), ShapeError);
  cfg = BackboneConfig::toy();
  cfg.n_heads = 3;
  EXPECT_THROW(cfg.validate(), ShapeError);
}

TEST(ExtractFeatures, OneSecondIsFiftyFrames) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 1);
  Tensor f = bb.extract_features(sine_wave(8000, 440.0));
  ASSERT_EQ(f.rank(), 2u);
  EXPECT_EQ(f.dim(0), 64u);
  EXPECT_EQ(f.dim(1), 50u);
}

TEST(ExtractFeatures, FloorSemanticsAtAlmostOneSecond) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 1);
  Tensor f = bb.extract_features(sine_wave(7992, 440.0));  // 0.999 s
  EXPECT_EQ(f.dim(1), 49u);
}

TEST(ExtractFeatures, ZeroWaveformIsFinite) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 1);
  Tensor f = bb.extract_features(std::vector<double>(1600, 0.0));
  for (double v : f.values()) ASSERT_TRUE(std::isfinite(v));
}

TEST(ExtractFeatures, TooShortThrows) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 1);
  EXPECT_THROW(bb.extract_features(sine_wave(159, 440.0)), DataError);
}

TEST(Encoder, LowerOutputShapeAndDeterminism) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 2);
  Tensor f = bb.extract_features(sine_wave(1600, 300.0));
  Tensor a = bb.encode_lower(f);
  Tensor b = bb.encode_lower(f);
  ASSERT_EQ(a.shape(), (Shape{1, 64, 10}));
  EXPECT_EQ(0, std::memcmp(a.values().data(), b.values().data(),
                           a.numel() * sizeof(double)));
}

TEST(Encoder, DistanceBiasToggleIsLive) {
  BackboneConfig on = BackboneConfig::toy();
  BackboneConfig off = BackboneConfig::toy();
  off.distance_bias = false;
  Backbone bb_on = Backbone::init(on, 3);
  Backbone bb_off = Backbone::init(off, 3);  // identical parameters
  Tensor f = bb_on.extract_features(sine_wave(480, 500.0));  // T = 3
  Tensor a = bb_on.encode_lower(f);
  Tensor b = bb_off.encode_lower(f);
  double max_diff = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) {
    max_diff = std::max(max_diff, std::fabs(a.values()[i] - b.values()[i]));
  }
  EXPECT_GT(max_diff, 1e-9);
}

TEST(Encoder, SplitComposesToMonolithicForward) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 4);
  Tensor f = bb.extract_features(sine_wave(1600, 350.0));
  Tensor split = bb.encode_upper(bb.encode_lower(f));
  Tensor mono = bb.encode_full(f);
  ASSERT_EQ(split.shape(), mono.shape());
  for (size_t i = 0; i < split.numel(); ++i) {
    ASSERT_LT(std::fabs(split.values()[i] - mono.values()[i]), 1e-12);
  }
}

TEST(Encoder, UpperRejectsBadShapes) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 4);
  EXPECT_THROW(bb.encode_upper(Tensor::zeros({1, 32, 5})), ShapeError);
  EXPECT_THROW(bb.encode_upper(Tensor::zeros({1, 64, 0})), ShapeError);
  EXPECT_THROW(bb.encode_upper(Tensor::zeros({64, 5})), ShapeError);
}

TEST(Encoder, UpperPreservesExpandedBatch) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 5);
  Tensor emb = Tensor::from_values({4, 64, 6}, [] {
    std::vector<double> v(4 * 64 * 6);
    Rng rng(11);
    for (auto& x : v) x = rng.normal();
    return v;
  }());
  Tensor out = bb.encode_upper(emb);
  EXPECT_EQ(out.shape(), emb.shape());
}

TEST(AttentionScores, SlopesAndDiagonal) {
  EXPECT_DOUBLE_EQ(alibi_slope(7, 8), std::exp2(-8.0));
  EXPECT_DOUBLE_EQ(alibi_slope(0, 8), std::exp2(-1.0));
  Rng rng(17);
  std::vector<double> qv(8 * 4 * 2), kv(8 * 4 * 2);
  for (auto& x : qv) x = rng.normal();
  for (auto& x : kv) x = rng.normal();
  Tensor q = Tensor::from_values({8, 4, 2}, qv);
  Tensor k = Tensor::from_values({8, 4, 2}, kv);
  Tensor plain = attention_scores(q, k, 8, false);
  Tensor biased = attention_scores(q, k, 8, true);
  for (size_t bh = 0; bh < 8; ++bh) {
    double slope = alibi_slope(bh % 8, 8);
    for (size_t i = 0; i < 4; ++i) {
      EXPECT_DOUBLE_EQ(biased.at({bh, i, i}), plain.at({bh, i, i}));
      for (size_t j = 0; j < 4; ++j) {
        double want = plain.at({bh, i, j}) -
                      slope * std::fabs(static_cast<double>(i) - static_cast<double>(j));
        EXPECT_NEAR(biased.at({bh, i, j}), want, 1e-15);
      }
    }
  }
}

TEST(Decode, ShapeAndDeterminism) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 6);
  Tensor hidden = Tensor::filled({2, 64, 7}, 0.25);
  Tensor a = bb.decode(hidden);
  Tensor b = bb.decode(hidden);
  ASSERT_EQ(a.shape(), (Shape{2, 7, kVocabSize}));
  EXPECT_EQ(0, std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)));
  for (double v : a.values()) ASSERT_TRUE(std::isfinite(v));
  EXPECT_THROW(bb.decode(Tensor::zeros({2, 32, 7})), ShapeError);
}

TEST(Backbone, ParamCountFormulaMatchesInstance) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 7);
  size_t total = 0;
  for (const auto& [name, p] : bb.params) total += p.numel();
  EXPECT_EQ(total, backbone_param_count(BackboneConfig::toy()));
}

TEST(Backbone, FreezeStopsGradientsAndIsIdempotent) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 8);
  bb.freeze();
  bb.freeze();
  EXPECT_TRUE(bb.frozen);
  for (const auto& [name, p] : bb.params) EXPECT_FALSE(p.requires_grad());

  Tape tape;
  std::vector<double> before;
  for (const auto& [name, p] : bb.params) {
    before.insert(before.end(), p.values().begin(), p.values().end());
  }
  Adam opt;
  Tensor dummy = Tensor::from_values({1}, {0.5}, true);  // plays the sidecar role
  bb.params.emplace("zz.dummy", dummy);
  Tensor loss;
  {
    TapeScope scope(tape);
    Tensor logits = bb.asr_logits(sine_wave(1600, 420.0));
    loss = ops::mul(ops::mean(logits), dummy);
  }
  opt.zero_grad(bb.params);
  tape.backward(loss);
  opt.step(bb.params);
  EXPECT_NE(dummy.values()[0], 0.5);  // the trainable side still moves
  bb.params.erase("zz.dummy");
  std::vector<double> after;
  for (const auto& [name, p] : bb.params) {
    after.insert(after.end(), p.values().begin(), p.values().end());
  }
  ASSERT_EQ(before.size(), after.size());
  EXPECT_EQ(0, std::memcmp(before.data(), after.data(), before.size() * sizeof(double)));
}

TEST(Backbone, TrainableParamsGetGradients) {
  Backbone bb = Backbone::init(BackboneConfig::toy(), 9);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    Tensor logits = bb.asr_logits(sine_wave(800, 380.0));
    Tensor lp = ops::log_softmax(ops::reshape(logits, {logits.dim(1), logits.dim(2)}), 1);
    loss = ctc_loss(lp, {1, 2});
  }
  tape.backward(loss);
  for (const auto& [name, p] : bb.params) {
    ASSERT_TRUE(p.has_grad()) << name;
  }
}

TEST(GreedyCtc, CollapsesRepeatsAndDropsBlanks) {
  // argmax sequence: 1 1 0 2 2 0 0 1 -> collapse -> 1 2 1
  std::vector<int> arg = {1, 1, 0, 2, 2, 0, 0, 1};
  std::vector<double> v(arg.size() * 3, 0.0);
  for (size_t t = 0; t < arg.size(); ++t) v[t * 3 + arg[t]] = 5.0;
  CtcTarget out = greedy_ctc(Tensor::from_values({arg.size(), 3}, v));
  EXPECT_EQ(out, (CtcTarget{1, 2, 1}));

  // consecutive equal tokens separated by a blank survive as two tokens
  std::vector<int> arg2 = {1, 0, 1};
  std::vector<double> v2(arg2.size() * 3, 0.0);
  for (size_t t = 0; t < arg2.size(); ++t) v2[t * 3 + arg2[t]] = 5.0;
  EXPECT_EQ(greedy_ctc(Tensor::from_values({arg2.size(), 3}, v2)), (CtcTarget{1, 1}));
}

TEST(LrSchedule, WarmupHoldDecay) {
  LrSchedule sched{100, 0.1, 0.4};
  EXPECT_DOUBLE_EQ(sched.factor(0), 0.1);
  EXPECT_DOUBLE_EQ(sched.factor(4), 0.5);
  EXPECT_DOUBLE_EQ(sched.factor(9), 1.0);
  EXPECT_DOUBLE_EQ(sched.factor(10), 1.0);
  EXPECT_DOUBLE_EQ(sched.factor(49), 1.0);
  EXPECT_DOUBLE_EQ(sched.factor(50), 1.0);
  EXPECT_DOUBLE_EQ(sched.factor(75), 0.5);
  EXPECT_DOUBLE_EQ(sched.factor(99), 0.02);
  for (size_t s = 1; s < 100; ++s) {
    EXPECT_LE(sched.factor(s) - sched.factor(s - 1), 1.0);
  }
  LrSchedule none{0};
  EXPECT_DOUBLE_EQ(none.factor(1234), 1.0);
}

TEST(Adam, SingleStepMatchesHandComputation) {
  ParamMap params;
  params.emplace("w", Tensor::from_values({1}, {1.0}, true));
  Adam opt(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = ops::mul(params.at("w"), Tensor::scalar(0.5));
  }
  opt.zero_grad(params);
  tape.backward(loss);
  ASSERT_DOUBLE_EQ(params.at("w").grad()[0], 0.5);
  opt.step(params);
  // m=0.05, v=2.5e-4, mhat=0.5, vhat=0.25 -> w = 1 - 0.1*0.5/(0.5+1e-8)
  EXPECT_NEAR(params.at("w").values()[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
}

TEST(Adam, UnusedTrainableParamIsUnchanged) {
  ParamMap params;
  params.emplace("used", Tensor::from_values({1}, {2.0}, true));
  params.emplace("unused", Tensor::from_values({1}, {3.0}, true));
  Adam opt;
  for (int s = 0; s < 5; ++s) {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = ops::mul(params.at("used"), params.at("used"));
    }
    opt.zero_grad(params);
    tape.backward(loss);
    opt.step(params);
  }
  EXPECT_NE(params.at("used").values()[0], 2.0);
  EXPECT_EQ(params.at("unused").values()[0], 3.0);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    ParamMap params;
    params.emplace("w", Tensor::from_values({2}, {0.5, -0.25}, true));
    Adam opt;
    for (int s = 0; s < 10; ++s) {
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = ops::sum(ops::mul(params.at("w"), params.at("w")));
      }
      opt.zero_grad(params);
      tape.backward(loss);
      opt.step(params);
    }
    return params.at("w").values();
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace smtl
