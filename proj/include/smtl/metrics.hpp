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

// Evaluation: permutation-minimized WER over parallel streams and
// collar-based DER with miss / false-alarm / confusion decomposition.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "smtl/common.hpp"
#include "smtl/diarize.hpp"
#include "smtl/perm.hpp"

namespace smtl {

struct EditCounts {
  size_t substitutions = 0;
  size_t insertions = 0;
  size_t deletions = 0;
  size_t total() const { return substitutions + insertions + deletions; }
};

// Levenshtein with unit costs; among minimal alignments the one with the
// fewest substitutions is reported (cost, then substitution count, as a
// lexicographic DP objective). The (S,I,D) triple is unique under that
// objective since D-I is fixed by the length difference.
inline EditCounts edit_distance(const std::vector<std::string>& ref,
                                const std::vector<std::string>& hyp) {
  size_t R = ref.size(), H = hyp.size();
  struct Cell {
    size_t cost;
    size_t subs;
  };
  auto better = [](Cell a, Cell b) {
    return a.cost != b.cost ? a.cost < b.cost : a.subs < b.subs;
  };
  std::vector<Cell> dp((R + 1) * (H + 1));
  auto at = [&](size_t i, size_t j) -> Cell& { return dp[i * (H + 1) + j]; };
  for (size_t i = 0; i <= R; ++i) at(i, 0) = {i, 0};
  for (size_t j = 0; j <= H; ++j) at(0, j) = {j, 0};
  for (size_t i = 1; i <= R; ++i) {
    for (size_t j = 1; j <= H; ++j) {
      bool eq = ref[i - 1] == hyp[j - 1];
      Cell diag = at(i - 1, j - 1);
      Cell best = {diag.cost + (eq ? 0 : 1), diag.subs + (eq ? 0 : 1)};
      Cell del = {at(i - 1, j).cost + 1, at(i - 1, j).subs};
      if (better(del, best)) best = del;
      Cell ins = {at(i, j - 1).cost + 1, at(i, j - 1).subs};
      if (better(ins, best)) best = ins;
      at(i, j) = best;
    }
  }
  // backtrace, preferring match > sub > del > ins among optimal moves
  EditCounts out;
  size_t i = R, j = H;
  while (i > 0 || j > 0) {
    Cell cur = at(i, j);
    if (i > 0 && j > 0) {
      bool eq = ref[i - 1] == hyp[j - 1];
      Cell diag = at(i - 1, j - 1);
      if (cur.cost == diag.cost + (eq ? 0u : 1u) && cur.subs == diag.subs + (eq ? 0u : 1u)) {
        if (!eq) ++out.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && cur.cost == at(i - 1, j).cost + 1 && cur.subs == at(i - 1, j).subs) {
      ++out.deletions;
      --i;
      continue;
    }
    ++out.insertions;
    --j;
  }
  return out;
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream iss(text);
  std::string w;
  while (iss >> w) out.push_back(w);
  return out;
}

struct WerBreakdown {
  size_t substitutions = 0;
  size_t insertions = 0;
  size_t deletions = 0;
  size_t reference_words = 0;
  double wer = 0.0;
};

// Minimizes total (S+I+D) over bijections hyp -> ref; perm[ref] = hyp stream.
// Unequal stream counts are padded with empty sequences.
inline std::pair<WerBreakdown, Permutation> permuted_wer(
    std::vector<std::vector<std::string>> refs, std::vector<std::vector<std::string>> hyps) {
  size_t S = std::max(refs.size(), hyps.size());
  if (S == 0) throw ShapeError("permuted_wer: no streams");
  refs.resize(S);
  hyps.resize(S);
  std::vector<EditCounts> pair_counts(S * S);
  for (size_t h = 0; h < S; ++h) {
    for (size_t r = 0; r < S; ++r) pair_counts[h * S + r] = edit_distance(refs[r], hyps[h]);
  }
  Permutation best = best_permutation(S, [&](const Permutation& p) {
    size_t err = 0;
    for (size_t r = 0; r < S; ++r) err += pair_counts[p[r] * S + r].total();
    return static_cast<double>(err);
  });
  WerBreakdown out;
  for (size_t r = 0; r < S; ++r) {
    const EditCounts& c = pair_counts[best[r] * S + r];
    out.substitutions += c.substitutions;
    out.insertions += c.insertions;
    out.deletions += c.deletions;
    out.reference_words += refs[r].size();
  }
  out.wer = static_cast<double>(out.substitutions + out.insertions + out.deletions) /
            static_cast<double>(std::max<size_t>(1, out.reference_words));
  return {out, best};
}

struct DerBreakdown {
  double miss_seconds = 0;
  double falarm_seconds = 0;
  double confusion_seconds = 0;
  double scored_speech_seconds = 0;
  double mi = 0, fa = 0, cf = 0, der = 0;
};

namespace detail {

using Intervals = std::vector<std::pair<double, double>>;

inline Intervals merge_intervals(Intervals iv) {
  std::sort(iv.begin(), iv.end());
  Intervals out;
  for (const auto& [a, b] : iv) {
    if (b <= a) continue;
    if (!out.empty() && a <= out.back().second) {
      out.back().second = std::max(out.back().second, b);
    } else {
      out.emplace_back(a, b);
    }
  }
  return out;
}

inline std::map<std::string, Intervals> by_speaker(const DiarTimeline& tl) {
  std::map<std::string, Intervals> m;
  for (const auto& iv : tl) {
    if (iv.offset <= iv.onset) {
      throw DataError(str_cat("timeline: interval for ", iv.speaker,
                              " has offset <= onset (", iv.onset, ", ", iv.offset, ")"));
    }
    m[iv.speaker].emplace_back(iv.onset, iv.offset);
  }
  for (auto& [spk, iv] : m) iv = merge_intervals(std::move(iv));
  return m;
}

inline bool covered(const Intervals& iv, double t) {
  for (const auto& [a, b] : iv) {
    if (t >= a && t < b) return true;
  }
  return false;
}

}  // namespace detail

// NIST md-eval collar semantics: regions within +-collar of every reference
// interval boundary are excluded from scoring entirely. Overlapping speech is
// scored. The hyp->ref speaker mapping is the exhaustive bijection maximizing
// correctly attributed time. Fills only the *_seconds fields (rates stay 0),
// so results can be pooled over a corpus before dividing; zero scored speech
// is legal here.
inline DerBreakdown der_components(const DiarTimeline& reference, const DiarTimeline& hypothesis,
                                   double collar_seconds) {
  if (collar_seconds < 0) throw ShapeError("der: collar must be >= 0");
  auto ref = detail::by_speaker(reference);
  auto hyp = detail::by_speaker(hypothesis);
  std::vector<std::string> ref_spk, hyp_spk;
  for (const auto& [s, iv] : ref) ref_spk.push_back(s);
  for (const auto& [s, iv] : hyp) hyp_spk.push_back(s);
  size_t n = std::max(ref_spk.size(), hyp_spk.size());
  if (n > 4) throw ShapeError("der: more than 4 speakers on one side");

  detail::Intervals exclusions;
  for (const auto& [s, iv] : ref) {
    for (const auto& [a, b] : iv) {
      exclusions.emplace_back(a - collar_seconds, a + collar_seconds);
      exclusions.emplace_back(b - collar_seconds, b + collar_seconds);
    }
  }
  exclusions = detail::merge_intervals(std::move(exclusions));

  std::vector<double> points;
  auto add_edges = [&](const detail::Intervals& iv) {
    for (const auto& [a, b] : iv) {
      points.push_back(a);
      points.push_back(b);
    }
  };
  for (const auto& [s, iv] : ref) add_edges(iv);
  for (const auto& [s, iv] : hyp) add_edges(iv);
  add_edges(exclusions);
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  struct Slice {
    double dur;
    std::vector<size_t> refs;  // indices into ref_spk
    std::vector<size_t> hyps;  // indices into hyp_spk
  };
  std::vector<Slice> slices;
  for (size_t i = 0; i + 1 < points.size(); ++i) {
    double a = points[i], b = points[i + 1];
    double mid = 0.5 * (a + b);
    if (detail::covered(exclusions, mid)) continue;
    Slice sl;
    sl.dur = b - a;
    for (size_t r = 0; r < ref_spk.size(); ++r) {
      if (detail::covered(ref[ref_spk[r]], mid)) sl.refs.push_back(r);
    }
    for (size_t h = 0; h < hyp_spk.size(); ++h) {
      if (detail::covered(hyp[hyp_spk[h]], mid)) sl.hyps.push_back(h);
    }
    if (!sl.refs.empty() || !sl.hyps.empty()) slices.push_back(std::move(sl));
  }

  // mapping[h] = index of the ref speaker assigned to hyp speaker h, or >= n
  // for unmapped; exhaustive search maximizing correctly attributed time
  auto correct_time = [&](const Permutation& assign) {
    double total = 0;
    for (const auto& sl : slices) {
      size_t ncorrect = 0;
      for (size_t h : sl.hyps) {
        size_t r = assign[h];
        if (r < ref_spk.size() &&
            std::find(sl.refs.begin(), sl.refs.end(), r) != sl.refs.end()) {
          ++ncorrect;
        }
      }
      total += sl.dur * static_cast<double>(ncorrect);
    }
    return total;
  };
  Permutation mapping = best_permutation(n, [&](const Permutation& p) {
    return -correct_time(p);
  });

  DerBreakdown out;
  for (const auto& sl : slices) {
    double nref = static_cast<double>(sl.refs.size());
    double nhyp = static_cast<double>(sl.hyps.size());
    size_t ncorrect = 0;
    for (size_t h : sl.hyps) {
      size_t r = mapping[h];
      if (r < ref_spk.size() &&
          std::find(sl.refs.begin(), sl.refs.end(), r) != sl.refs.end()) {
        ++ncorrect;
      }
    }
    out.scored_speech_seconds += sl.dur * nref;
    out.miss_seconds += sl.dur * std::max(0.0, nref - nhyp);
    out.falarm_seconds += sl.dur * std::max(0.0, nhyp - nref);
    out.confusion_seconds += sl.dur * (std::min(nref, nhyp) - static_cast<double>(ncorrect));
  }
  return out;
}

// Turns pooled components into rates; DER is undefined without scored speech.
inline DerBreakdown finish_der(DerBreakdown out) {
  if (out.scored_speech_seconds <= 0) {
    throw DataError("der: zero scored reference speech; DER undefined");
  }
  out.mi = out.miss_seconds / out.scored_speech_seconds;
  out.fa = out.falarm_seconds / out.scored_speech_seconds;
  out.cf = out.confusion_seconds / out.scored_speech_seconds;
  out.der = out.mi + out.fa + out.cf;
  return out;
}

inline DerBreakdown der(const DiarTimeline& reference, const DiarTimeline& hypothesis,
                        double collar_seconds) {
  return finish_der(der_components(reference, hypothesis, collar_seconds));
}

// Inverse of to_rttm; tolerates extra whitespace and any recording id.
inline DiarTimeline parse_rttm(const std::string& text) {
  DiarTimeline out;
  std::istringstream iss(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(iss, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok[0] != "SPEAKER" || tok.size() < 8) {
      throw DataError(str_cat("parse_rttm: line ", line_no, ": malformed line '", line, "'"));
    }
    double onset, dur;
    try {
      size_t pos = 0;
      onset = std::stod(tok[3], &pos);
      if (pos != tok[3].size()) throw std::invalid_argument(tok[3]);
      dur = std::stod(tok[4], &pos);
      if (pos != tok[4].size()) throw std::invalid_argument(tok[4]);
    } catch (const std::exception&) {
      throw DataError(str_cat("parse_rttm: line ", line_no, ": non-numeric onset/duration"));
    }
    if (dur <= 0) {
      throw DataError(str_cat("parse_rttm: line ", line_no, ": non-positive duration"));
    }
    out.push_back({tok[7], onset, onset + dur});
  }
  return out;
}

}  // namespace smtl
