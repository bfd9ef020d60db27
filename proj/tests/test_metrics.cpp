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

#include "smtl/metrics.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "smtl/common.hpp"
#include "smtl/diarize.hpp"

namespace smtl {
namespace {

// plain recursive alignment enumeration over (cost, subs), no memoization
std::pair<size_t, size_t> brute_align(const std::vector<std::string>& ref,
                                      const std::vector<std::string>& hyp, size_t i, size_t j) {
  if (i == ref.size() && j == hyp.size()) return {0, 0};
  std::pair<size_t, size_t> best = {SIZE_MAX, SIZE_MAX};
  auto consider = [&](std::pair<size_t, size_t> cand) {
    if (cand.first != best.first ? cand.first < best.first : cand.second < best.second) {
      best = cand;
    }
  };
  if (i < ref.size() && j < hyp.size()) {
    auto sub = brute_align(ref, hyp, i + 1, j + 1);
    bool eq = ref[i] == hyp[j];
    consider({sub.first + (eq ? 0 : 1), sub.second + (eq ? 0 : 1)});
  }
  if (i < ref.size()) {
    auto del = brute_align(ref, hyp, i + 1, j);
    consider({del.first + 1, del.second});
  }
  if (j < hyp.size()) {
    auto ins = brute_align(ref, hyp, i, j + 1);
    consider({ins.first + 1, ins.second});
  }
  return best;
}

TEST(EditDistance, HandCases) {
  auto c0 = edit_distance(split_words("a b c"), split_words("a b c"));
  EXPECT_EQ(c0.substitutions, 0u);
  EXPECT_EQ(c0.insertions, 0u);
  EXPECT_EQ(c0.deletions, 0u);

  auto c1 = edit_distance(split_words("a b"), split_words("a x b"));
  EXPECT_EQ(c1.total(), 1u);
  EXPECT_EQ(c1.insertions, 1u);

  // distance 2; the fewest-substitution minimal alignment deletes b and
  // inserts x (any triple with a substitution would violate D - I == 0)
  auto c2 = edit_distance(split_words("a b c d"), split_words("a c x d"));
  EXPECT_EQ(c2.total(), 2u);
  EXPECT_EQ(c2.substitutions, 0u);
  EXPECT_EQ(c2.insertions, 1u);
  EXPECT_EQ(c2.deletions, 1u);

  auto c3 = edit_distance(split_words("a b c"), {});
  EXPECT_EQ(c3.deletions, 3u);
  auto c4 = edit_distance({}, split_words("x y"));
  EXPECT_EQ(c4.insertions, 2u);
}

TEST(EditDistance, MatchesBruteForceEnumeration) {
  Rng rng(55);
  const char* vocab[] = {"a", "b", "c"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> ref, hyp;
    size_t rl = static_cast<size_t>(rng.uniform_int(0, 5));
    size_t hl = static_cast<size_t>(rng.uniform_int(0, 5));
    for (size_t i = 0; i < rl; ++i) ref.push_back(vocab[rng.uniform_int(0, 2)]);
    for (size_t i = 0; i < hl; ++i) hyp.push_back(vocab[rng.uniform_int(0, 2)]);
    auto got = edit_distance(ref, hyp);
    auto want = brute_align(ref, hyp, 0, 0);
    EXPECT_EQ(got.total(), want.first) << "trial " << trial;
    EXPECT_EQ(got.substitutions, want.second) << "trial " << trial;
    // D - I is pinned by the length difference
    EXPECT_EQ(static_cast<long>(got.deletions) - static_cast<long>(got.insertions),
              static_cast<long>(rl) - static_cast<long>(hl));
  }
}

TEST(PermutedWer, SwapAndExamples) {
  auto [w0, p0] = permuted_wer({split_words("a b c"), split_words("d e")},
                               {split_words("d e"), split_words("a b c")});
  EXPECT_EQ(w0.wer, 0.0);
  EXPECT_EQ(p0, (Permutation{1, 0}));

  auto [w1, p1] = permuted_wer({split_words("a b"), split_words("c d")},
                               {split_words("a x"), split_words("c d e")});
  EXPECT_EQ(p1, (Permutation{0, 1}));
  EXPECT_EQ(w1.substitutions, 1u);
  EXPECT_EQ(w1.insertions, 1u);
  EXPECT_EQ(w1.deletions, 0u);
  EXPECT_EQ(w1.reference_words, 4u);
  EXPECT_DOUBLE_EQ(w1.wer, 0.5);

  auto [w2, p2] = permuted_wer({split_words("a b c")}, {{}});
  EXPECT_EQ(w2.deletions, 3u);
  EXPECT_DOUBLE_EQ(w2.wer, 1.0);

  // missing hypothesis stream is padded with an empty sequence
  auto [w3, p3] = permuted_wer({split_words("a"), split_words("b c")}, {split_words("b c")});
  EXPECT_EQ(w3.deletions, 1u);
  EXPECT_EQ(w3.substitutions + w3.insertions, 0u);
}

TEST(PermutedWer, SelfIsZeroAndJointPermutationInvariant) {
  Rng rng(66);
  const char* vocab[] = {"w", "x", "y", "z"};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<std::string>> refs(3), hyps(3);
    for (size_t s = 0; s < 3; ++s) {
      size_t rl = static_cast<size_t>(rng.uniform_int(1, 6));
      for (size_t i = 0; i < rl; ++i) refs[s].push_back(vocab[rng.uniform_int(0, 3)]);
      size_t hl = static_cast<size_t>(rng.uniform_int(0, 6));
      for (size_t i = 0; i < hl; ++i) hyps[s].push_back(vocab[rng.uniform_int(0, 3)]);
    }
    EXPECT_DOUBLE_EQ(permuted_wer(refs, refs).first.wer, 0.0);

    double base = permuted_wer(refs, hyps).first.wer;
    for (const auto& p : permutations_of(3)) {
      std::vector<std::vector<std::string>> pr(3), ph(3);
      for (size_t s = 0; s < 3; ++s) {
        pr[s] = refs[p[s]];
        ph[s] = hyps[p[s]];
      }
      EXPECT_DOUBLE_EQ(permuted_wer(pr, ph).first.wer, base);
    }
  }
}

TEST(Der, IdentityAndCollarExample) {
  DiarTimeline ref = {{"A", 0.0, 10.0}};
  DerBreakdown same = der(ref, ref, 0.25);
  EXPECT_DOUBLE_EQ(same.der, 0.0);
  EXPECT_DOUBLE_EQ(same.scored_speech_seconds, 9.5);

  DiarTimeline hyp = {{"A", 0.0, 8.0}};
  DerBreakdown d = der(ref, hyp, 0.25);
  EXPECT_NEAR(d.scored_speech_seconds, 9.5, 1e-9);
  EXPECT_NEAR(d.miss_seconds, 1.75, 1e-9);
  EXPECT_NEAR(d.falarm_seconds, 0.0, 1e-12);
  EXPECT_NEAR(d.confusion_seconds, 0.0, 1e-12);
  EXPECT_NEAR(d.der, 1.75 / 9.5, 1e-9);
  EXPECT_NEAR(d.der, 0.1842105263, 1e-6);
}

TEST(Der, MappingAbsorbsLabels) {
  DiarTimeline ref = {{"A", 0.0, 4.0}, {"B", 4.0, 8.0}};
  DiarTimeline hyp = {{"B", 0.0, 4.0}, {"A", 4.0, 8.0}};
  DerBreakdown d = der(ref, hyp, 0.0);
  EXPECT_DOUBLE_EQ(d.confusion_seconds, 0.0);
  EXPECT_DOUBLE_EQ(d.der, 0.0);

  DiarTimeline weird = {{"zz9", 0.0, 4.0}, {"qq", 4.0, 8.0}};
  EXPECT_DOUBLE_EQ(der(ref, weird, 0.0).der, 0.0);
}

TEST(Der, DecompositionAndOverlapScoring) {
  // ref: A [0,6), B [4,10) (overlap [4,6)); hyp: A [0,5), C [7,9)
  DiarTimeline ref = {{"A", 0.0, 6.0}, {"B", 4.0, 10.0}};
  DiarTimeline hyp = {{"A", 0.0, 5.0}, {"C", 7.0, 9.0}};
  DerBreakdown d = der(ref, hyp, 0.0);
  // scored speech counts overlap twice
  EXPECT_DOUBLE_EQ(d.scored_speech_seconds, 12.0);
  EXPECT_DOUBLE_EQ(d.der, d.mi + d.fa + d.cf);
  EXPECT_GT(d.miss_seconds, 0.0);

  DerBreakdown big = der(ref, hyp, 0.0);
  EXPECT_NEAR(big.mi + big.fa + big.cf, big.der, 1e-15);
}

TEST(Der, ZeroScoredSpeechThrows) {
  DiarTimeline ref = {{"A", 0.0, 0.4}};
  EXPECT_THROW(der(ref, ref, 0.25), DataError);
}

TEST(Der, CollarMonotone) {
  Rng rng(88);
  DiarTimeline ref;
  double t = 0;
  for (int i = 0; i < 8; ++i) {
    double on = t + rng.uniform(0.3, 1.0);
    double off = on + rng.uniform(0.5, 2.0);
    ref.push_back({speaker_name(i % 2), on, off});
    t = off;
  }
  double prev = 1e18;
  for (double collar : {0.0, 0.1, 0.25, 0.5}) {
    DerBreakdown d = der(ref, ref, collar);
    EXPECT_LE(d.scored_speech_seconds, prev);
    prev = d.scored_speech_seconds;
    EXPECT_DOUBLE_EQ(d.der, 0.0);
  }
}

TEST(Der, MatchesFrameCountingOracleAtZeroCollar) {
  Rng rng(101);
  const double frame_ms = 20.0;
  for (int trial = 0; trial < 10; ++trial) {
    size_t T = 200;
    std::vector<double> rv(2 * T), hv(2 * T);
    for (auto& v : rv) v = rng.uniform() > 0.55 ? 1.0 : 0.0;
    for (auto& v : hv) v = rng.uniform() > 0.55 ? 1.0 : 0.0;
    Tensor refA = Tensor::from_values({2, T}, rv);
    Tensor hypA = Tensor::from_values({2, T}, hv);
    DiarTimeline ref = timeline_from_activity(refA, frame_ms);
    DiarTimeline hyp = timeline_from_activity(hypA, frame_ms);
    double ref_frames = 0;
    for (double v : rv) ref_frames += v;
    if (ref_frames == 0 || ref.empty()) continue;

    DerBreakdown d = der(ref, hyp, 0.0);

    // frame-domain oracle with its own exhaustive mapping
    double best_err = 1e18;
    for (const auto& p : permutations_of(2)) {
      double miss = 0, fa = 0, cf = 0;
      for (size_t t = 0; t < T; ++t) {
        int nr = static_cast<int>(rv[t]) + static_cast<int>(rv[T + t]);
        int nh = static_cast<int>(hv[t]) + static_cast<int>(hv[T + t]);
        int ncorrect = 0;
        for (size_t h = 0; h < 2; ++h) {
          if (hv[h * T + t] == 1.0 && rv[p[h] * T + t] == 1.0) ++ncorrect;
        }
        miss += std::max(0, nr - nh);
        fa += std::max(0, nh - nr);
        cf += std::min(nr, nh) - ncorrect;
      }
      best_err = std::min(best_err, miss + fa + cf);
    }
    double oracle_der = best_err / ref_frames;
    EXPECT_NEAR(d.der, oracle_der, (frame_ms / 1000.0) / (ref_frames * frame_ms / 1000.0) +
                                       1e-9)
        << "trial " << trial;
  }
}

TEST(Rttm, ParseRoundTrip) {
  Rng rng(202);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> v(3 * 60);
    for (auto& x : v) x = rng.uniform() > 0.5 ? 1.0 : 0.0;
    DiarTimeline tl = timeline_from_activity(Tensor::from_values({3, 60}, v), 20.0);
    DiarTimeline back = parse_rttm(to_rttm(tl, "rec7"));
    ASSERT_EQ(back.size(), tl.size());
    // to_rttm sorts; sort the original the same way before comparing
    DiarTimeline sorted = tl;
    std::sort(sorted.begin(), sorted.end(), [](const DiarInterval& a, const DiarInterval& b) {
      if (a.onset != b.onset) return a.onset < b.onset;
      return a.speaker < b.speaker;
    });
    for (size_t i = 0; i < back.size(); ++i) {
      EXPECT_EQ(back[i].speaker, sorted[i].speaker);
      EXPECT_NEAR(back[i].onset, sorted[i].onset, 1e-9);
      EXPECT_NEAR(back[i].offset, sorted[i].offset, 1e-9);
    }
  }
}

TEST(Rttm, ParseErrors) {
  EXPECT_TRUE(parse_rttm("").empty());
  EXPECT_TRUE(parse_rttm("\n\n").empty());
  try {
    parse_rttm("SPEAKER rec 1 0.00 0.10 <NA> <NA> spk0 <NA> <NA>\nGARBAGE line\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  try {
    parse_rttm("SPEAKER rec 1 abc 0.10 <NA> <NA> spk0 <NA> <NA>\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  EXPECT_THROW(parse_rttm("SPEAKER rec 1 1.00 -0.10 <NA> <NA> spk0 <NA> <NA>\n"), DataError);
}

}  // namespace
}  // namespace smtl
