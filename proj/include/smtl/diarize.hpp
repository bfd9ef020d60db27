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

// Long-recording diarization: overlapping segmentation, Euclidean stream
// alignment across adjacent segments, shared-interval averaging, and RTTM
// emission.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "smtl/common.hpp"
#include "smtl/perm.hpp"
#include "smtl/tensor.hpp"

namespace smtl {

struct SegmentPlan {
  double segment_seconds = 30.0;
  double shared_seconds = 15.0;
  double frame_ms = 20.0;

  size_t segment_frames() const {
    return static_cast<size_t>(std::llround(segment_seconds * 1000.0 / frame_ms));
  }
  size_t shared_frames() const {
    return static_cast<size_t>(std::llround(shared_seconds * 1000.0 / frame_ms));
  }

  void validate() const {
    size_t seg = segment_frames(), sh = shared_frames();
    if (seg == 0 || sh == 0 || sh >= seg) {
      throw ShapeError(str_cat("SegmentPlan: need 0 < shared < segment, got ",
                               sh, " / ", seg, " frames"));
    }
    if (seg < 2 * sh) {
      throw ShapeError(str_cat("SegmentPlan: segment must cover two shared intervals (",
                               seg, " < 2*", sh, "); frames would be triple-covered"));
    }
  }
};

struct FrameSpan {
  size_t start = 0;
  size_t end = 0;  // exclusive
};

inline std::vector<FrameSpan> plan_segments(size_t total_frames, const SegmentPlan& plan) {
  plan.validate();
  if (total_frames == 0) throw ShapeError("plan_segments: total_frames must be >= 1");
  size_t seg = plan.segment_frames();
  size_t hop = seg - plan.shared_frames();
  std::vector<FrameSpan> out;
  size_t start = 0;
  while (true) {
    size_t end = std::min(start + seg, total_frames);
    out.push_back({start, end});
    if (end >= total_frames) break;
    start += hop;
  }
  return out;
}

// Argmin over stream bijections of sum over (s,t) of
// (prev(s,t) - next(sigma(s),t))^2; ties break to the lexicographically
// smallest sigma. sigma[slot] = stream index in `next`.
inline Permutation align_permutation(const Tensor& prev_shared, const Tensor& next_shared) {
  if (prev_shared.rank() != 2 || next_shared.rank() != 2 ||
      prev_shared.shape() != next_shared.shape()) {
    throw ShapeError(str_cat("align_permutation: shapes ", shape_str(prev_shared.shape()),
                             " vs ", shape_str(next_shared.shape())));
  }
  size_t S = prev_shared.dim(0), T = prev_shared.dim(1);
  const auto& pv = prev_shared.values();
  const auto& nv = next_shared.values();
  std::vector<double> pair_cost(S * S);
  for (size_t a = 0; a < S; ++a) {
    for (size_t b = 0; b < S; ++b) {
      double c = 0;
      for (size_t t = 0; t < T; ++t) {
        double d = pv[a * T + t] - nv[b * T + t];
        c += d * d;
      }
      pair_cost[a * S + b] = c;
    }
  }
  return best_permutation(S, [&](const Permutation& p) {
    double c = 0;
    for (size_t s = 0; s < S; ++s) c += pair_cost[s * S + p[s]];
    return c;
  });
}

struct SegmentActivity {
  Tensor d;            // (S, T_seg)
  size_t start_frame = 0;
};

// Chains alignments left to right and averages shared intervals. Returns the
// global activity tensor (S, T_total).
inline Tensor stitch(const std::vector<SegmentActivity>& segments) {
  if (segments.empty()) throw ShapeError("stitch: empty segment list");
  const Tensor& d0 = segments[0].d;
  if (d0.rank() != 2) throw ShapeError("stitch: segment tensors must be (S, T)");
  size_t S = d0.dim(0);
  if (segments[0].start_frame != 0) throw ShapeError("stitch: first segment must start at 0");
  size_t total = 0;
  size_t prev_start = 0, prev_end = 0;
  for (size_t k = 0; k < segments.size(); ++k) {
    const auto& seg = segments[k];
    if (seg.d.rank() != 2 || seg.d.dim(0) != S) {
      throw ShapeError(str_cat("stitch: segment ", k, " shape ", shape_str(seg.d.shape()),
                               " does not match S=", S));
    }
    size_t end = seg.start_frame + seg.d.dim(1);
    if (k > 0) {
      if (seg.start_frame <= prev_start || seg.start_frame >= prev_end || end <= prev_end) {
        throw ShapeError(str_cat("stitch: segment ", k, " offsets [", seg.start_frame, ",",
                                 end, ") inconsistent with previous [", prev_start, ",",
                                 prev_end, ")"));
      }
    }
    prev_start = seg.start_frame;
    prev_end = end;
    total = end;
  }

  std::vector<double> acc(S * total, 0.0);
  std::vector<int> cover(total, 0);
  auto write_segment = [&](const Tensor& d, const Permutation& sigma, size_t start) {
    size_t T = d.dim(1);
    for (size_t s = 0; s < S; ++s) {
      const double* src = d.values().data() + sigma[s] * T;
      double* dst = acc.data() + s * total + start;
      for (size_t t = 0; t < T; ++t) dst[t] += src[t];
    }
    for (size_t t = 0; t < T; ++t) cover[start + t] += 1;
  };

  write_segment(d0, identity_permutation(S), 0);
  size_t written_end = d0.dim(1);
  for (size_t k = 1; k < segments.size(); ++k) {
    const auto& seg = segments[k];
    size_t start = seg.start_frame;
    size_t overlap = std::min(written_end, start + seg.d.dim(1)) - start;
    // previous segment is the sole writer of the overlap so far
    Tensor prev_shared = Tensor::zeros({S, overlap});
    for (size_t s = 0; s < S; ++s) {
      for (size_t t = 0; t < overlap; ++t) {
        prev_shared.values()[s * overlap + t] = acc[s * total + start + t];
      }
    }
    Tensor next_shared = Tensor::zeros({S, overlap});
    size_t T = seg.d.dim(1);
    for (size_t s = 0; s < S; ++s) {
      for (size_t t = 0; t < overlap; ++t) {
        next_shared.values()[s * overlap + t] = seg.d.values()[s * T + t];
      }
    }
    Permutation sigma = align_permutation(prev_shared, next_shared);
    write_segment(seg.d, sigma, start);
    written_end = start + T;
  }

  for (size_t s = 0; s < S; ++s) {
    for (size_t t = 0; t < total; ++t) {
      acc[s * total + t] /= static_cast<double>(cover[t]);
    }
  }
  return Tensor::from_values({S, total}, std::move(acc));
}

// Speech decision: probability strictly greater than 0.5.
inline Tensor binarize_activity(const Tensor& d, double threshold = 0.5) {
  std::vector<double> v(d.numel());
  for (size_t i = 0; i < v.size(); ++i) v[i] = d.values()[i] > threshold ? 1.0 : 0.0;
  return Tensor::from_values(d.shape(), std::move(v));
}

struct DiarInterval {
  std::string speaker;
  double onset = 0;   // seconds
  double offset = 0;  // seconds, exclusive
};

using DiarTimeline = std::vector<DiarInterval>;

inline std::string speaker_name(size_t idx) { return str_cat("spk", idx); }

inline DiarTimeline timeline_from_activity(const Tensor& d_binary, double frame_ms) {
  if (d_binary.rank() != 2) throw ShapeError("timeline_from_activity: wants (S, T)");
  size_t S = d_binary.dim(0), T = d_binary.dim(1);
  DiarTimeline out;
  double fs = frame_ms / 1000.0;
  for (size_t s = 0; s < S; ++s) {
    const double* row = d_binary.values().data() + s * T;
    size_t t = 0;
    while (t < T) {
      if (row[t] == 0.0) {
        ++t;
        continue;
      }
      size_t run_start = t;
      while (t < T && row[t] != 0.0) ++t;
      out.push_back({speaker_name(s), run_start * fs, t * fs});
    }
  }
  return out;
}

// Inverse of timeline_from_activity for frame-aligned timelines. Speakers
// are matched by name against speaker_name(0..S-1); unknown names error.
inline Tensor activity_from_timeline(const DiarTimeline& timeline, size_t S,
                                     size_t total_frames, double frame_ms) {
  Tensor d = Tensor::zeros({S, total_frames});
  double fs = frame_ms / 1000.0;
  for (const auto& iv : timeline) {
    size_t s = S;
    for (size_t k = 0; k < S; ++k) {
      if (iv.speaker == speaker_name(k)) {
        s = k;
        break;
      }
    }
    if (s == S) throw DataError(str_cat("activity_from_timeline: unknown speaker '",
                                        iv.speaker, "'"));
    auto t0 = static_cast<size_t>(std::llround(iv.onset / fs));
    auto t1 = static_cast<size_t>(std::llround(iv.offset / fs));
    t1 = std::min(t1, total_frames);
    for (size_t t = t0; t < t1; ++t) d.values()[s * total_frames + t] = 1.0;
  }
  return d;
}

inline std::string to_rttm(const DiarTimeline& timeline, const std::string& recording_id) {
  DiarTimeline sorted = timeline;
  std::sort(sorted.begin(), sorted.end(), [](const DiarInterval& a, const DiarInterval& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    return a.speaker < b.speaker;
  });
  std::string out;
  char buf[256];
  for (const auto& iv : sorted) {
    std::snprintf(buf, sizeof(buf), "SPEAKER %s 1 %.2f %.2f <NA> <NA> %s <NA> <NA>\n",
                  recording_id.c_str(), iv.onset, iv.offset - iv.onset, iv.speaker.c_str());
    out += buf;
  }
  return out;
}

}  // namespace smtl
