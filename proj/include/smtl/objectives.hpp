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

// Training objectives: CTC with analytic gradients, permutation invariant
// training over CTC, diarization MSE under a shared permutation, and the
// combined multi-task loss.

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "smtl/common.hpp"
#include "smtl/diarize.hpp"
#include "smtl/perm.hpp"
#include "smtl/tensor.hpp"

namespace smtl {

// Token indices without blanks; every index in [1, V-1]. Blank is index 0.
using CtcTarget = std::vector<int>;

inline constexpr double kLogZero = -1e30;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

inline double logsumexp2(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

inline void validate_ctc_target(const CtcTarget& target, size_t V) {
  for (int tok : target) {
    if (tok < 1 || static_cast<size_t>(tok) >= V) {
      throw DataError(str_cat("ctc: token index ", tok, " outside [1, ", V - 1, "]"));
    }
  }
}

inline size_t ctc_min_frames(const CtcTarget& target) {
  size_t need = target.size();
  for (size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++need;
  }
  return need;
}

struct CtcResult {
  double loss = 0.0;                 // -log P(target | log_probs); +inf if infeasible
  std::vector<double> gamma;        // (T, V) alignment posteriors; empty when infeasible
};

// Log-space forward-backward over the blank-augmented target (length 2L+1).
// lp points at a row-major (T, V) block of log-probabilities.
inline CtcResult ctc_forward_backward(const double* lp, size_t T, size_t V,
                                      const CtcTarget& target, bool want_grad) {
  validate_ctc_target(target, V);
  if (T == 0) throw ShapeError("ctc: zero-length input");
  CtcResult res;
  if (ctc_min_frames(target) > T) {
    res.loss = kInf;
    return res;
  }
  size_t L = target.size();
  size_t n = 2 * L + 1;
  auto lab = [&](size_t s) -> size_t {
    return s % 2 == 0 ? 0 : static_cast<size_t>(target[s / 2]);
  };
  auto skip_into = [&](size_t s) {  // transition s-2 -> s allowed
    return s >= 2 && s % 2 == 1 && lab(s) != lab(s - 2);
  };

  std::vector<double> alpha(T * n, kLogZero);
  alpha[0] = lp[lab(0)];
  if (n > 1) alpha[1] = lp[lab(1)];
  for (size_t t = 1; t < T; ++t) {
    const double* prev = alpha.data() + (t - 1) * n;
    double* cur = alpha.data() + t * n;
    for (size_t s = 0; s < n; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = logsumexp2(acc, prev[s - 1]);
      if (skip_into(s)) acc = logsumexp2(acc, prev[s - 2]);
      if (acc <= kLogZero) continue;
      cur[s] = acc + lp[t * V + lab(s)];
    }
  }
  double log_p = alpha[(T - 1) * n + n - 1];
  if (n > 1) log_p = logsumexp2(log_p, alpha[(T - 1) * n + n - 2]);
  if (log_p <= kLogZero / 2) {
    res.loss = kInf;
    return res;
  }
  res.loss = -log_p;
  if (!want_grad) return res;

  // beta excludes the emission at t, so gamma(t,s) = alpha + beta - log_p.
  std::vector<double> beta(T * n, kLogZero);
  beta[(T - 1) * n + n - 1] = 0.0;
  if (n > 1) beta[(T - 1) * n + n - 2] = 0.0;
  for (size_t t = T - 1; t-- > 0;) {
    const double* nxt = beta.data() + (t + 1) * n;
    double* cur = beta.data() + t * n;
    for (size_t s = 0; s < n; ++s) {
      double acc = nxt[s] <= kLogZero ? kLogZero : nxt[s] + lp[(t + 1) * V + lab(s)];
      if (s + 1 < n && nxt[s + 1] > kLogZero) {
        acc = logsumexp2(acc, nxt[s + 1] + lp[(t + 1) * V + lab(s + 1)]);
      }
      if (s + 2 < n && skip_into(s + 2) && nxt[s + 2] > kLogZero) {
        acc = logsumexp2(acc, nxt[s + 2] + lp[(t + 1) * V + lab(s + 2)]);
      }
      cur[s] = acc;
    }
  }
  res.gamma.assign(T * V, 0.0);
  for (size_t t = 0; t < T; ++t) {
    for (size_t s = 0; s < n; ++s) {
      double a = alpha[t * n + s], b = beta[t * n + s];
      if (a <= kLogZero || b <= kLogZero) continue;
      res.gamma[t * V + lab(s)] += std::exp(a + b - log_p);
    }
  }
  return res;
}

// Plain loss value for permutation search; no tape interaction.
inline double ctc_value(const double* lp, size_t T, size_t V, const CtcTarget& target) {
  return ctc_forward_backward(lp, T, V, target, false).loss;
}

}  // namespace detail

// CTC loss for one stream of a (S, T, V) or a plain (T, V) log-probability
// tensor. Rows must already be log-softmax outputs; the gradient placed on
// `log_probs` is minus the alignment posteriors, which composes with the
// log_softmax backward into softmax(logits) - posteriors.
inline Tensor ctc_loss_stream(const Tensor& log_probs, size_t stream, const CtcTarget& target) {
  size_t T, V, offset;
  if (log_probs.rank() == 3) {
    if (stream >= log_probs.dim(0)) {
      throw ShapeError(str_cat("ctc_loss: stream ", stream, " out of range for ",
                               shape_str(log_probs.shape())));
    }
    T = log_probs.dim(1);
    V = log_probs.dim(2);
    offset = stream * T * V;
  } else if (log_probs.rank() == 2 && stream == 0) {
    T = log_probs.dim(0);
    V = log_probs.dim(1);
    offset = 0;
  } else {
    throw ShapeError(str_cat("ctc_loss: wants (T,V) or (S,T,V), got ",
                             shape_str(log_probs.shape())));
  }
  bool rec = active_tape() && log_probs.requires_grad();
  auto fb = detail::ctc_forward_backward(log_probs.values().data() + offset, T, V, target, rec);
  Tensor out = Tensor::from_values({1}, {fb.loss}, rec);
  if (rec) {
    auto ln = log_probs.node();
    auto on = out.node();
    auto gamma = std::make_shared<std::vector<double>>(std::move(fb.gamma));
    TapeRecord record;
    record.op = "ctc_loss";
    record.output = on;
    record.inputs = {ln};
    record.backward = [ln, on, gamma, offset]() {
      if (!ln->requires_grad || gamma->empty()) return;
      double g = on->grad[0];
      auto& dl = ensure_grad(*ln);
      for (size_t i = 0; i < gamma->size(); ++i) dl[offset + i] -= g * (*gamma)[i];
    };
    active_tape()->push(std::move(record));
  }
  return out;
}

inline Tensor ctc_loss(const Tensor& log_probs, const CtcTarget& target) {
  if (log_probs.rank() != 2) {
    throw ShapeError(str_cat("ctc_loss: wants (T,V), got ", shape_str(log_probs.shape())));
  }
  return ctc_loss_stream(log_probs, 0, target);
}

// Test oracle: enumerate all V^T frame label paths, collapse (drop repeats,
// then blanks), and sum the probabilities of paths matching the target.
inline double ctc_brute_force(const Tensor& log_probs, const CtcTarget& target) {
  if (log_probs.rank() != 2) {
    throw ShapeError(str_cat("ctc_brute_force: wants (T,V), got ",
                             shape_str(log_probs.shape())));
  }
  size_t T = log_probs.dim(0), V = log_probs.dim(1);
  if (T > 8 || V > 4) {
    throw ShapeError(str_cat("ctc_brute_force: bounds exceeded (T=", T, ", V=", V,
                             "; need T <= 8, V <= 4)"));
  }
  detail::validate_ctc_target(target, V);
  const auto& lp = log_probs.values();
  std::vector<size_t> path(T, 0);
  double total = kLogZero;
  while (true) {
    // collapse: merge repeats, drop blanks
    CtcTarget collapsed;
    size_t prev = V;  // sentinel
    for (size_t t = 0; t < T; ++t) {
      size_t v = path[t];
      if (v != prev && v != 0) collapsed.push_back(static_cast<int>(v));
      prev = v;
    }
    if (collapsed == target) {
      double lpp = 0;
      for (size_t t = 0; t < T; ++t) lpp += lp[t * V + path[t]];
      total = detail::logsumexp2(total, lpp);
    }
    // next path in odometer order
    size_t i = T;
    while (i > 0) {
      --i;
      if (++path[i] < V) break;
      path[i] = 0;
      if (i == 0) return total <= kLogZero ? kInf : -total;
    }
  }
}

struct PitResult {
  Tensor loss;        // taped scalar, mean of the selected per-stream CTC losses
  Permutation perm;   // perm[reference] = model stream
};

// loss = min over bijections sigma of (1/S) sum_s ctc(stream sigma(s), target s).
// Candidate costs accumulate in reference order and scale by the reciprocal;
// ties (exact duplicates included) resolve to the lexicographically smallest
// sigma under that exact arithmetic.
inline PitResult pit_ctc(const Tensor& log_probs, const std::vector<CtcTarget>& targets) {
  if (log_probs.rank() != 3) {
    throw ShapeError(str_cat("pit_ctc: wants (S,T,V), got ", shape_str(log_probs.shape())));
  }
  size_t S = log_probs.dim(0), T = log_probs.dim(1), V = log_probs.dim(2);
  if (S == 0 || S > 4) throw ShapeError(str_cat("pit_ctc: S=", S, " outside [1,4]"));
  if (targets.size() != S) {
    throw ShapeError(str_cat("pit_ctc: ", targets.size(), " targets for S=", S, " streams"));
  }
  std::vector<double> val(S * S);  // val[stream * S + ref]
  for (size_t st = 0; st < S; ++st) {
    for (size_t ref = 0; ref < S; ++ref) {
      try {
        val[st * S + ref] = detail::ctc_value(log_probs.values().data() + st * T * V, T, V,
                                              targets[ref]);
      } catch (const DataError& e) {
        throw DataError(str_cat("pit_ctc: stream ", st, " vs target ", ref, ": ", e.what()));
      }
    }
  }
  double inv = 1.0 / static_cast<double>(S);
  Permutation perm = best_permutation(S, [&](const Permutation& p) {
    double acc = 0;
    for (size_t s = 0; s < S; ++s) acc += val[p[s] * S + s];
    return acc * inv;
  });
  std::vector<Tensor> losses;
  losses.reserve(S);
  for (size_t s = 0; s < S; ++s) losses.push_back(ctc_loss_stream(log_probs, perm[s], targets[s]));
  PitResult out;
  out.loss = S == 1 ? losses[0] : ops::mean(ops::concat(losses, 0));
  out.perm = perm;
  return out;
}

// Mean over (B,S,T) of (D(b, sigma(s), t) - ref(b, s, t))^2. `ref` is a
// constant; only D receives gradient.
inline Tensor diar_mse(const Tensor& d, const Tensor& ref, const Permutation& sigma) {
  if (d.rank() != 3 || ref.rank() != 3 || d.shape() != ref.shape()) {
    throw ShapeError(str_cat("diar_mse: shapes ", shape_str(d.shape()), " vs ",
                             shape_str(ref.shape())));
  }
  size_t B = d.dim(0), S = d.dim(1), T = d.dim(2);
  if (!is_permutation_of(sigma, S)) {
    throw ShapeError(str_cat("diar_mse: invalid permutation for S=", S));
  }
  double acc = 0;
  const auto& dv = d.values();
  const auto& rv = ref.values();
  for (size_t b = 0; b < B; ++b) {
    for (size_t s = 0; s < S; ++s) {
      const double* drow = dv.data() + (b * S + sigma[s]) * T;
      const double* rrow = rv.data() + (b * S + s) * T;
      for (size_t t = 0; t < T; ++t) {
        double diff = drow[t] - rrow[t];
        acc += diff * diff;
      }
    }
  }
  double inv = 1.0 / static_cast<double>(B * S * T);
  bool rec = active_tape() && d.requires_grad();
  Tensor out = Tensor::from_values({1}, {acc * inv}, rec);
  if (rec) {
    auto dn = d.node();
    auto rn = ref.node();
    auto on = out.node();
    auto sg = sigma;
    TapeRecord record;
    record.op = "diar_mse";
    record.output = on;
    record.inputs = {dn};
    record.backward = [dn, rn, on, sg, B, S, T, inv]() {
      if (!dn->requires_grad) return;
      double g = on->grad[0] * 2.0 * inv;
      auto& dd = ensure_grad(*dn);
      for (size_t b = 0; b < B; ++b) {
        for (size_t s = 0; s < S; ++s) {
          double* drow = dd.data() + (b * S + sg[s]) * T;
          const double* dval = dn->values.data() + (b * S + sg[s]) * T;
          const double* rrow = rn->values.data() + (b * S + s) * T;
          for (size_t t = 0; t < T; ++t) drow[t] += g * (dval[t] - rrow[t]);
        }
      }
    };
    active_tape()->push(std::move(record));
  }
  return out;
}

struct CombinedResult {
  Tensor loss;        // L = L_pit + lambda * L_diar(sigma*)
  Permutation perm;   // sigma*, chosen by the CTC term alone
  double pit_value = 0;
  double diar_value = 0;
};

// The permutation is selected by PIT-CTC only; the diarization term is then
// evaluated under that same permutation.
inline CombinedResult combined_loss(const Tensor& logits, const std::vector<CtcTarget>& targets,
                                    const Tensor& d, const Tensor& ref, double lambda) {
  if (lambda < 0) throw ShapeError("combined_loss: lambda must be >= 0");
  if (logits.rank() != 3) {
    throw ShapeError(str_cat("combined_loss: logits want (S,T,V), got ",
                             shape_str(logits.shape())));
  }
  Tensor lsm = ops::log_softmax(logits, 2);
  PitResult pit = pit_ctc(lsm, targets);
  CombinedResult out;
  out.perm = pit.perm;
  out.pit_value = pit.loss.value();
  if (lambda == 0.0) {
    out.loss = pit.loss;
    return out;
  }
  Tensor diar = diar_mse(d, ref, pit.perm);
  out.diar_value = diar.value();
  out.loss = ops::add(pit.loss, ops::scale(diar, lambda));
  return out;
}

// Diarization-only adaptation over a segmented long recording. The first
// segment's permutation is the exhaustive MSE argmin; later segments chain
// through align_permutation on the shared interval, mirroring inference
// stitching. Loss is the mean of per-segment MSE values. `shared_frames` is
// the plan's overlap between adjacent segments.
inline Tensor adaptation_loss(const std::vector<Tensor>& d_segments,
                              const std::vector<Tensor>& ref_segments, size_t shared_frames) {
  if (d_segments.empty()) throw ShapeError("adaptation_loss: empty segment list");
  if (shared_frames == 0) throw ShapeError("adaptation_loss: shared_frames must be >= 1");
  if (d_segments.size() != ref_segments.size()) {
    throw ShapeError(str_cat("adaptation_loss: ", d_segments.size(), " activity segments vs ",
                             ref_segments.size(), " reference segments"));
  }
  size_t S = 0;
  std::vector<Tensor> seg_losses;
  Tensor prev_reordered;  // (S, T_prev) plain values
  for (size_t k = 0; k < d_segments.size(); ++k) {
    const Tensor& d = d_segments[k];
    const Tensor& ref = ref_segments[k];
    if (d.rank() != 2 || ref.rank() != 2 || d.shape() != ref.shape()) {
      throw ShapeError(str_cat("adaptation_loss: segment ", k, " shapes ",
                               shape_str(d.shape()), " vs ", shape_str(ref.shape())));
    }
    if (k == 0) {
      S = d.dim(0);
    } else if (d.dim(0) != S) {
      throw ShapeError(str_cat("adaptation_loss: segment ", k, " speaker count changed"));
    }
    size_t T = d.dim(1);
    Permutation sigma;
    if (k == 0) {
      sigma = best_permutation(S, [&](const Permutation& p) {
        double acc = 0;
        for (size_t s = 0; s < S; ++s) {
          const double* drow = d.values().data() + p[s] * T;
          const double* rrow = ref.values().data() + s * T;
          for (size_t t = 0; t < T; ++t) {
            double diff = drow[t] - rrow[t];
            acc += diff * diff;
          }
        }
        return acc;
      });
    } else {
      size_t Tp = prev_reordered.dim(1);
      size_t overlap = std::min({shared_frames, Tp, T});
      Tensor prev_tail = Tensor::zeros({S, overlap});
      Tensor next_head = Tensor::zeros({S, overlap});
      for (size_t s = 0; s < S; ++s) {
        for (size_t t = 0; t < overlap; ++t) {
          prev_tail.values()[s * overlap + t] =
              prev_reordered.values()[s * Tp + (Tp - overlap) + t];
          next_head.values()[s * overlap + t] = d.values()[s * T + t];
        }
      }
      sigma = align_permutation(prev_tail, next_head);
    }
    std::vector<double> reordered(S * T);
    for (size_t s = 0; s < S; ++s) {
      for (size_t t = 0; t < T; ++t) reordered[s * T + t] = d.values()[sigma[s] * T + t];
    }
    prev_reordered = Tensor::from_values({S, T}, std::move(reordered));
    seg_losses.push_back(diar_mse(ops::reshape(d, {1, S, T}), ops::reshape(ref, {1, S, T}),
                                  sigma));
  }
  return seg_losses.size() == 1 ? seg_losses[0] : ops::mean(ops::concat(seg_losses, 0));
}

}  // namespace smtl
