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

// Minimal reverse-mode automatic differentiation over dense 64-bit tensors.
// Ops never mutate their inputs; every op yields a fresh tensor, and the
// active tape (if any) records a closure replaying the analytic backward.
// A single tape is single-threaded; distinct tapes over distinct tensors may
// run on distinct threads.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <istream>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "smtl/common.hpp"

namespace smtl {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

inline std::vector<size_t> row_major_strides(const Shape& s) {
  std::vector<size_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return filled(shape, 0.0, requires_grad);
  }

  static Tensor filled(const Shape& shape, double v, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->values.assign(shape_numel(shape), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_values(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError(str_cat("Tensor: shape ", shape_str(shape), " wants ",
                               shape_numel(shape), " values, got ", values.size()));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t rank() const { return node_->shape.size(); }
  size_t dim(size_t i) const { return node_->shape.at(i); }
  size_t numel() const { return node_->values.size(); }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& values() { return node_->values; }

  double value() const {
    if (numel() != 1) {
      throw ShapeError(str_cat("Tensor::value: tensor ", shape_str(shape()), " is not scalar"));
    }
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (node_->grad.empty()) throw ShapeError("Tensor::grad: no gradient present");
    return node_->grad;
  }
  void clear_grad() { node_->grad.clear(); }

  double at(std::initializer_list<size_t> idx) const { return node_->values[offset(idx)]; }
  double& at(std::initializer_list<size_t> idx) { return node_->values[offset(idx)]; }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  size_t offset(std::initializer_list<size_t> idx) const {
    if (idx.size() != rank()) {
      throw ShapeError(str_cat("Tensor::at: rank mismatch for ", shape_str(shape())));
    }
    auto strides = row_major_strides(shape());
    size_t off = 0, i = 0;
    for (size_t v : idx) {
      if (v >= shape()[i]) throw ShapeError("Tensor::at: index out of bounds");
      off += v * strides[i++];
    }
    return off;
  }

  std::shared_ptr<TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Tape

struct TapeRecord {
  std::shared_ptr<TensorNode> output;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void()> backward;
  const char* op = "";
};

inline std::vector<double>& ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
  return n.grad;
}

class Tape {
 public:
  void push(TapeRecord rec) { records_.push_back(std::move(rec)); }
  size_t size() const { return records_.size(); }

  // Populates grad on every requires_grad tensor reachable from `loss`.
  // Grads touched by this tape are reset first, so repeated backward calls
  // over the same graph are bit-identical.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
      throw ShapeError(str_cat("Tape::backward: loss must be scalar, got ",
                               shape_str(loss.shape())));
    }
    bool produced = false;
    for (const auto& r : records_) {
      if (r.output == loss.node()) produced = true;
    }
    if (!produced) {
      throw ShapeError("Tape::backward: loss tensor was not produced by this tape");
    }
    for (auto& r : records_) {
      r.output->grad.clear();
      for (auto& in : r.inputs) in->grad.clear();
    }
    ensure_grad(*loss.node())[0] = 1.0;
    for (size_t i = records_.size(); i-- > 0;) {
      auto& r = records_[i];
      if (r.output->grad.empty()) continue;  // not on a path to the loss
      r.backward();
    }
  }

 private:
  std::vector<TapeRecord> records_;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* t = nullptr;
  return t;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

// RAII guard making `tape` the active tape on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy alignment: trailing dims, size-1 stretches)

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(str_cat(op, ": cannot broadcast ", shape_str(a), " with ",
                               shape_str(b)));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Maps each linear index of out_shape to the linear index of in_shape under
// broadcasting. Empty result means identity (shapes equal).
inline std::vector<uint32_t> broadcast_index_map(const Shape& out_shape, const Shape& in_shape) {
  if (out_shape == in_shape) return {};
  size_t rank = out_shape.size();
  Shape in_pad(rank, 1);
  std::copy(in_shape.begin(), in_shape.end(), in_pad.begin() + (rank - in_shape.size()));
  auto out_strides = row_major_strides(out_shape);
  auto in_strides = row_major_strides(in_pad);
  size_t n = shape_numel(out_shape);
  std::vector<uint32_t> map(n);
  for (size_t lin = 0; lin < n; ++lin) {
    size_t rem = lin, in_lin = 0;
    for (size_t d = 0; d < rank; ++d) {
      size_t idx = rem / out_strides[d];
      rem %= out_strides[d];
      if (in_pad[d] != 1) in_lin += idx * in_strides[d];
    }
    map[lin] = static_cast<uint32_t>(in_lin);
  }
  return map;
}

namespace ops {

namespace detail {

inline bool should_record(std::initializer_list<const Tensor*> ins) {
  if (!active_tape()) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline void record(const char* op, Tensor out, std::vector<Tensor> ins,
                   std::function<void()> bwd) {
  TapeRecord rec;
  rec.op = op;
  rec.output = out.node();
  rec.inputs.reserve(ins.size());
  for (auto& t : ins) rec.inputs.push_back(t.node());
  rec.backward = std::move(bwd);
  active_tape()->push(std::move(rec));
}

// Accumulates `g` (shaped like out_shape) into in's grad, reducing over
// broadcast dims.
inline void reduce_into(const Shape& out_shape, const std::vector<double>& g,
                        TensorNode& in) {
  auto& dst = ensure_grad(in);
  auto map = broadcast_index_map(out_shape, in.shape);
  if (map.empty()) {
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  } else {
    for (size_t i = 0; i < g.size(); ++i) dst[map[i]] += g[i];
  }
}

}  // namespace detail

// ---- elementwise binary -----------------------------------------------------

inline Tensor binary_broadcast(const char* name, const Tensor& a, const Tensor& b,
                               double (*fwd)(double, double), bool is_mul) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto ma = broadcast_index_map(out_shape, a.shape());
  auto mb = broadcast_index_map(out_shape, b.shape());
  size_t n = shape_numel(out_shape);
  std::vector<double> vals(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < n; ++i) {
    double x = ma.empty() ? av[i] : av[ma[i]];
    double y = mb.empty() ? bv[i] : bv[mb[i]];
    vals[i] = fwd(x, y);
  }
  bool rec = detail::should_record({&a, &b});
  Tensor out = Tensor::from_values(out_shape, std::move(vals), rec);
  if (rec) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    detail::record(name, out, {a, b}, [an, bn, on, ma, mb, out_shape, is_mul]() {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& da = ensure_grad(*an);
        for (size_t i = 0; i < g.size(); ++i) {
          size_t ia = ma.empty() ? i : ma[i];
          double w = is_mul ? (mb.empty() ? bn->values[i] : bn->values[mb[i]]) : 1.0;
          da[ia] += g[i] * w;
        }
      }
      if (bn->requires_grad) {
        auto& db = ensure_grad(*bn);
        for (size_t i = 0; i < g.size(); ++i) {
          size_t ib = mb.empty() ? i : mb[i];
          double w = is_mul ? (ma.empty() ? an->values[i] : an->values[ma[i]]) : 1.0;
          db[ib] += g[i] * w;
        }
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast("add", a, b, [](double x, double y) { return x + y; }, false);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast("mul", a, b, [](double x, double y) { return x * y; }, true);
}

inline Tensor scale(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

// ---- elementwise unary ------------------------------------------------------

inline Tensor sigmoid(const Tensor& x) {
  size_t n = x.numel();
  std::vector<double> vals(n);
  const auto& xv = x.values();
  for (size_t i = 0; i < n; ++i) {
    double v = xv[i];
    vals[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  bool rec = detail::should_record({&x});
  Tensor out = Tensor::from_values(x.shape(), std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto on = out.node();
    detail::record("sigmoid", out, {x}, [xn, on]() {
      if (!xn->requires_grad) return;
      auto& dx = ensure_grad(*xn);
      for (size_t i = 0; i < on->grad.size(); ++i) {
        double s = on->values[i];
        dx[i] += on->grad[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  size_t n = x.numel();
  std::vector<double> vals(n);
  const auto& xv = x.values();
  for (size_t i = 0; i < n; ++i) vals[i] = xv[i] > 0 ? xv[i] : 0.0;
  bool rec = detail::should_record({&x});
  Tensor out = Tensor::from_values(x.shape(), std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto on = out.node();
    detail::record("relu", out, {x}, [xn, on]() {
      if (!xn->requires_grad) return;
      auto& dx = ensure_grad(*xn);
      for (size_t i = 0; i < on->grad.size(); ++i) {
        if (xn->values[i] > 0) dx[i] += on->grad[i];
      }
    });
  }
  return out;
}

// PReLU with one learned slope per channel along `channel_axis`.
inline Tensor prelu(const Tensor& x, const Tensor& slope, size_t channel_axis) {
  if (channel_axis >= x.rank()) {
    throw ShapeError(str_cat("prelu: channel_axis ", channel_axis, " out of range for ",
                             shape_str(x.shape())));
  }
  size_t c = x.dim(channel_axis);
  if (slope.rank() != 1 || slope.dim(0) != c) {
    throw ShapeError(str_cat("prelu: slope shape ", shape_str(slope.shape()),
                             " does not match channel dim ", c));
  }
  auto strides = row_major_strides(x.shape());
  size_t inner = strides[channel_axis];
  size_t n = x.numel();
  std::vector<double> vals(n);
  const auto& xv = x.values();
  const auto& sv = slope.values();
  for (size_t i = 0; i < n; ++i) {
    size_t ch = (i / inner) % c;
    vals[i] = xv[i] > 0 ? xv[i] : sv[ch] * xv[i];
  }
  bool rec = detail::should_record({&x, &slope});
  Tensor out = Tensor::from_values(x.shape(), std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto sn = slope.node();
    auto on = out.node();
    detail::record("prelu", out, {x, slope}, [xn, sn, on, inner, c]() {
      const auto& g = on->grad;
      for (size_t i = 0; i < g.size(); ++i) {
        size_t ch = (i / inner) % c;
        double v = xn->values[i];
        if (xn->requires_grad) {
          ensure_grad(*xn)[i] += g[i] * (v > 0 ? 1.0 : sn->values[ch]);
        }
        if (sn->requires_grad && v <= 0) {
          ensure_grad(*sn)[ch] += g[i] * v;
        }
      }
    });
  }
  return out;
}

// ---- rearrangement ----------------------------------------------------------

inline Tensor reshape(const Tensor& x, const Shape& new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError(str_cat("reshape: ", shape_str(x.shape()), " -> ",
                             shape_str(new_shape), " changes element count"));
  }
  bool rec = detail::should_record({&x});
  Tensor out = Tensor::from_values(new_shape, x.values(), rec);
  if (rec) {
    auto xn = x.node();
    auto on = out.node();
    detail::record("reshape", out, {x}, [xn, on]() {
      if (!xn->requires_grad) return;
      auto& dx = ensure_grad(*xn);
      for (size_t i = 0; i < on->grad.size(); ++i) dx[i] += on->grad[i];
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& x, const std::vector<size_t>& perm) {
  if (perm.size() != x.rank()) {
    throw ShapeError(str_cat("transpose: perm size ", perm.size(), " vs rank ", x.rank()));
  }
  std::vector<bool> seen(perm.size(), false);
  Shape out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= x.rank() || seen[perm[i]]) throw ShapeError("transpose: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = x.dim(perm[i]);
  }
  auto in_strides = row_major_strides(x.shape());
  auto out_strides = row_major_strides(out_shape);
  size_t n = x.numel();
  std::vector<uint32_t> src(n);  // out linear -> in linear
  for (size_t lin = 0; lin < n; ++lin) {
    size_t rem = lin, in_lin = 0;
    for (size_t d = 0; d < out_shape.size(); ++d) {
      size_t idx = rem / out_strides[d];
      rem %= out_strides[d];
      in_lin += idx * in_strides[perm[d]];
    }
    src[lin] = static_cast<uint32_t>(in_lin);
  }
  std::vector<double> vals(n);
  const auto& xv = x.values();
  for (size_t i = 0; i < n; ++i) vals[i] = xv[src[i]];
  bool rec = detail::should_record({&x});
  Tensor out = Tensor::from_values(out_shape, std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto on = out.node();
    detail::record("transpose", out, {x}, [xn, on, src]() {
      if (!xn->requires_grad) return;
      auto& dx = ensure_grad(*xn);
      for (size_t i = 0; i < on->grad.size(); ++i) dx[src[i]] += on->grad[i];
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
  if (parts.empty()) throw ShapeError("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = s0;
  size_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (size_t d = 0; d < s0.size(); ++d) {
      if (d != axis && p.dim(d) != s0[d]) {
        throw ShapeError(str_cat("concat: shape mismatch ", shape_str(p.shape()), " vs ",
                                 shape_str(s0)));
      }
    }
    axis_total += p.dim(axis);
  }
  out_shape[axis] = axis_total;
  size_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  std::vector<double> vals(shape_numel(out_shape));
  size_t axis_off = 0;
  for (const auto& p : parts) {
    size_t pa = p.dim(axis);
    const auto& pv = p.values();
    for (size_t o = 0; o < outer; ++o) {
      const double* srcp = pv.data() + o * pa * inner;
      double* dstp = vals.data() + (o * axis_total + axis_off) * inner;
      std::copy(srcp, srcp + pa * inner, dstp);
    }
    axis_off += pa;
  }
  bool rec = false;
  if (active_tape()) {
    for (const auto& p : parts) rec = rec || p.requires_grad();
  }
  Tensor out = Tensor::from_values(out_shape, std::move(vals), rec);
  if (rec) {
    std::vector<std::shared_ptr<TensorNode>> in_nodes;
    for (const auto& p : parts) in_nodes.push_back(p.node());
    auto on = out.node();
    detail::record("concat", out, parts, [in_nodes, on, outer, inner, axis_total, axis]() {
      size_t axis_off = 0;
      for (auto& pn : in_nodes) {
        size_t pa = pn->shape[axis];
        if (pn->requires_grad) {
          auto& dp = ensure_grad(*pn);
          for (size_t o = 0; o < outer; ++o) {
            const double* gp = on->grad.data() + (o * axis_total + axis_off) * inner;
            double* dpp = dp.data() + o * pa * inner;
            for (size_t i = 0; i < pa * inner; ++i) dpp[i] += gp[i];
          }
        }
        axis_off += pa;
      }
    });
  }
  return out;
}

// ---- softmax family ---------------------------------------------------------

namespace detail {
struct Lanes {
  size_t outer, axis, inner;
};
inline Lanes lanes_for(const Shape& s, size_t axis, const char* op) {
  if (axis >= s.size()) throw ShapeError(str_cat(op, ": axis ", axis, " out of range"));
  Lanes l{1, s[axis], 1};
  for (size_t d = 0; d < axis; ++d) l.outer *= s[d];
  for (size_t d = axis + 1; d < s.size(); ++d) l.inner *= s[d];
  return l;
}
}  // namespace detail

inline Tensor softmax(const Tensor& x, size_t axis) {
  auto l = detail::lanes_for(x.shape(), axis, "softmax");
  std::vector<double> vals(x.numel());
  const auto& xv = x.values();
  for (size_t o = 0; o < l.outer; ++o) {
    for (size_t i = 0; i < l.inner; ++i) {
      size_t base = o * l.axis * l.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (size_t a = 0; a < l.axis; ++a) m = std::max(m, xv[base + a * l.inner]);
      double z = 0;
      for (size_t a = 0; a < l.axis; ++a) {
        double e = std::exp(xv[base + a * l.inner] - m);
        vals[base + a * l.inner] = e;
        z += e;
      }
      for (size_t a = 0; a < l.axis; ++a) vals[base + a * l.inner] /= z;
    }
  }
  bool rec = detail::should_record({&x});
  Tensor out = Tensor::from_values(x.shape(), std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto on = out.node();
    detail::record("softmax", out, {x}, [xn, on, l]() {
      if (!xn->requires_grad) return;
      auto& dx = ensure_grad(*xn);
      for (size_t o = 0; o < l.outer; ++o) {
        for (size_t i = 0; i < l.inner; ++i) {
          size_t base = o * l.axis * l.inner + i;
          double dot = 0;
          for (size_t a = 0; a < l.axis; ++a) {
            size_t k = base + a * l.inner;
            dot += on->grad[k] * on->values[k];
          }
          for (size_t a = 0; a < l.axis; ++a) {
            size_t k = base + a * l.inner;
            dx[k] += on->values[k] * (on->grad[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

inline Tensor log_softmax(const Tensor& x, size_t axis) {
  auto l = detail::lanes_for(x.shape(), axis, "log_softmax");
  std::vector<double> vals(x.numel());
  const auto& xv = x.values();
  for (size_t o = 0; o < l.outer; ++o) {
    for (size_t i = 0; i < l.inner; ++i) {
      size_t base = o * l.axis * l.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (size_t a = 0; a < l.axis; ++a) m = std::max(m, xv[base + a * l.inner]);
      double z = 0;
      for (size_t a = 0; a < l.axis; ++a) z += std::exp(xv[base + a * l.inner] - m);
      double lz = m + std::log(z);
      for (size_t a = 0; a < l.axis; ++a) {
        vals[base + a * l.inner] = xv[base + a * l.inner] - lz;
      }
    }
  }
  bool rec = detail::should_record({&x});
  Tensor out = Tensor::from_values(x.shape(), std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto on = out.node();
    detail::record("log_softmax", out, {x}, [xn, on, l]() {
      if (!xn->requires_grad) return;
      auto& dx = ensure_grad(*xn);
      for (size_t o = 0; o < l.outer; ++o) {
        for (size_t i = 0; i < l.inner; ++i) {
          size_t base = o * l.axis * l.inner + i;
          double gsum = 0;
          for (size_t a = 0; a < l.axis; ++a) gsum += on->grad[base + a * l.inner];
          for (size_t a = 0; a < l.axis; ++a) {
            size_t k = base + a * l.inner;
            dx[k] += on->grad[k] - std::exp(on->values[k]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

// ---- reductions -------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.values()) s += v;
  bool rec = detail::should_record({&x});
  Tensor out = Tensor::from_values({1}, {s}, rec);
  if (rec) {
    auto xn = x.node();
    auto on = out.node();
    detail::record("sum", out, {x}, [xn, on]() {
      if (!xn->requires_grad) return;
      auto& dx = ensure_grad(*xn);
      double g = on->grad[0];
      for (double& d : dx) d += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0;
  for (double v : x.values()) s += v;
  double inv = 1.0 / static_cast<double>(x.numel());
  bool rec = detail::should_record({&x});
  Tensor out = Tensor::from_values({1}, {s * inv}, rec);
  if (rec) {
    auto xn = x.node();
    auto on = out.node();
    detail::record("mean", out, {x}, [xn, on, inv]() {
      if (!xn->requires_grad) return;
      auto& dx = ensure_grad(*xn);
      double g = on->grad[0] * inv;
      for (double& d : dx) d += g;
    });
  }
  return out;
}

// ---- matmul -----------------------------------------------------------------

// (M,K)x(K,N), (B,M,K)x(B,K,N), or (B,M,K)x(K,N) with the rhs shared.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  size_t ra = a.rank(), rb = b.rank();
  if (!((ra == 2 && rb == 2) || (ra == 3 && (rb == 3 || rb == 2)))) {
    throw ShapeError(str_cat("matmul: unsupported ranks ", shape_str(a.shape()), " x ",
                             shape_str(b.shape())));
  }
  size_t batch = ra == 3 ? a.dim(0) : 1;
  size_t M = a.dim(ra - 2), K = a.dim(ra - 1);
  size_t Kb = b.dim(rb - 2), N = b.dim(rb - 1);
  if (K != Kb || (rb == 3 && b.dim(0) != batch)) {
    throw ShapeError(str_cat("matmul: shape mismatch ", shape_str(a.shape()), " x ",
                             shape_str(b.shape())));
  }
  Shape out_shape = ra == 3 ? Shape{batch, M, N} : Shape{M, N};
  std::vector<double> vals(batch * M * N, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  bool b_shared = (rb == 2);
  for (size_t t = 0; t < batch; ++t) {
    const double* ap = av.data() + t * M * K;
    const double* bp = bv.data() + (b_shared ? 0 : t * K * N);
    double* cp = vals.data() + t * M * N;
    for (size_t i = 0; i < M; ++i) {
      for (size_t k = 0; k < K; ++k) {
        double aik = ap[i * K + k];
        if (aik == 0.0) continue;
        const double* brow = bp + k * N;
        double* crow = cp + i * N;
        for (size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  bool rec = detail::should_record({&a, &b});
  Tensor out = Tensor::from_values(out_shape, std::move(vals), rec);
  if (rec) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    detail::record("matmul", out, {a, b}, [an, bn, on, batch, M, K, N, b_shared]() {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& da = ensure_grad(*an);
        for (size_t t = 0; t < batch; ++t) {
          const double* gp = g.data() + t * M * N;
          const double* bp = bn->values.data() + (b_shared ? 0 : t * K * N);
          double* dap = da.data() + t * M * K;
          for (size_t i = 0; i < M; ++i) {
            for (size_t k = 0; k < K; ++k) {
              double acc = 0;
              const double* brow = bp + k * N;
              const double* grow = gp + i * N;
              for (size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
              dap[i * K + k] += acc;
            }
          }
        }
      }
      if (bn->requires_grad) {
        auto& db = ensure_grad(*bn);
        for (size_t t = 0; t < batch; ++t) {
          const double* gp = g.data() + t * M * N;
          const double* ap = an->values.data() + t * M * K;
          double* dbp = db.data() + (b_shared ? 0 : t * K * N);
          for (size_t i = 0; i < M; ++i) {
            const double* grow = gp + i * N;
            for (size_t k = 0; k < K; ++k) {
              double aik = ap[i * K + k];
              if (aik == 0.0) continue;
              double* dbrow = dbp + k * N;
              for (size_t j = 0; j < N; ++j) dbrow[j] += aik * grow[j];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- convolutions -----------------------------------------------------------

struct Conv1dAttrs {
  size_t stride = 1;
  size_t dilation = 1;
  size_t groups = 1;
  size_t padding = 0;  // symmetric zero padding
};

inline size_t conv1d_out_len(size_t t, size_t kernel, const Conv1dAttrs& at) {
  size_t eff = at.dilation * (kernel - 1) + 1;
  if (t + 2 * at.padding < eff) return 0;
  return (t + 2 * at.padding - eff) / at.stride + 1;
}

// x: (B, Cin, T), w: (Cout, Cin/groups, K) -> (B, Cout, T_out)
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Conv1dAttrs& at = {}) {
  if (x.rank() != 3 || w.rank() != 3) {
    throw ShapeError(str_cat("conv1d: wants (B,Cin,T) and (Cout,Cin/g,K), got ",
                             shape_str(x.shape()), " and ", shape_str(w.shape())));
  }
  size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  size_t Cout = w.dim(0), Cing = w.dim(1), K = w.dim(2);
  if (at.groups == 0 || Cin % at.groups != 0 || Cout % at.groups != 0 || Cing != Cin / at.groups) {
    throw ShapeError(str_cat("conv1d: group mismatch, x ", shape_str(x.shape()), " w ",
                             shape_str(w.shape()), " groups ", at.groups));
  }
  size_t To = conv1d_out_len(T, K, at);
  if (To == 0) {
    throw ShapeError(str_cat("conv1d: input length ", T, " too short for kernel ", K,
                             " dilation ", at.dilation, " padding ", at.padding));
  }
  size_t cin_per_g = Cin / at.groups, cout_per_g = Cout / at.groups;
  std::vector<double> vals(B * Cout * To, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (size_t b = 0; b < B; ++b) {
    for (size_t co = 0; co < Cout; ++co) {
      size_t g = co / cout_per_g;
      double* orow = vals.data() + (b * Cout + co) * To;
      for (size_t cg = 0; cg < cin_per_g; ++cg) {
        size_t ci = g * cin_per_g + cg;
        const double* xrow = xv.data() + (b * Cin + ci) * T;
        const double* wrow = wv.data() + (co * cin_per_g + cg) * K;
        for (size_t k = 0; k < K; ++k) {
          double wk = wrow[k];
          if (wk == 0.0) continue;
          // input position = t*stride + k*dilation - padding
          for (size_t t = 0; t < To; ++t) {
            int64_t ip = static_cast<int64_t>(t * at.stride + k * at.dilation) -
                         static_cast<int64_t>(at.padding);
            if (ip < 0 || ip >= static_cast<int64_t>(T)) continue;
            orow[t] += wk * xrow[ip];
          }
        }
      }
    }
  }
  bool rec = detail::should_record({&x, &w});
  Tensor out = Tensor::from_values({B, Cout, To}, std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto wn = w.node();
    auto on = out.node();
    detail::record("conv1d", out, {x, w},
                   [xn, wn, on, at, B, Cin, T, Cout, K, To, cin_per_g, cout_per_g]() {
      const auto& g = on->grad;
      bool dx_wanted = xn->requires_grad;
      bool dw_wanted = wn->requires_grad;
      if (dx_wanted) ensure_grad(*xn);
      if (dw_wanted) ensure_grad(*wn);
      for (size_t b = 0; b < B; ++b) {
        for (size_t co = 0; co < Cout; ++co) {
          size_t gr = co / cout_per_g;
          const double* grow = g.data() + (b * Cout + co) * To;
          for (size_t cg = 0; cg < cin_per_g; ++cg) {
            size_t ci = gr * cin_per_g + cg;
            const double* xrow = xn->values.data() + (b * Cin + ci) * T;
            const double* wrow = wn->values.data() + (co * cin_per_g + cg) * K;
            double* dxrow = dx_wanted ? xn->grad.data() + (b * Cin + ci) * T : nullptr;
            double* dwrow = dw_wanted ? wn->grad.data() + (co * cin_per_g + cg) * K : nullptr;
            for (size_t k = 0; k < K; ++k) {
              double wk = wrow[k];
              double dwk = 0;
              for (size_t t = 0; t < To; ++t) {
                int64_t ip = static_cast<int64_t>(t * at.stride + k * at.dilation) -
                             static_cast<int64_t>(at.padding);
                if (ip < 0 || ip >= static_cast<int64_t>(T)) continue;
                double gt = grow[t];
                if (dx_wanted) dxrow[ip] += gt * wk;
                dwk += gt * xrow[ip];
              }
              if (dw_wanted) dwrow[k] += dwk;
            }
          }
        }
      }
    });
  }
  return out;
}

// x: (B, Cin, H, W), w: (Cout, Cin); 1x1 kernel, stride 1, no bias.
inline Tensor pointwise_conv2d(const Tensor& x, const Tensor& w) {
  if (x.rank() != 4 || w.rank() != 2 || w.dim(1) != x.dim(1)) {
    throw ShapeError(str_cat("pointwise_conv2d: wants (B,Cin,H,W) and (Cout,Cin), got ",
                             shape_str(x.shape()), " and ", shape_str(w.shape())));
  }
  size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  size_t Cout = w.dim(0), hw = H * W;
  std::vector<double> vals(B * Cout * hw, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (size_t b = 0; b < B; ++b) {
    for (size_t co = 0; co < Cout; ++co) {
      double* op = vals.data() + (b * Cout + co) * hw;
      for (size_t ci = 0; ci < Cin; ++ci) {
        double wc = wv[co * Cin + ci];
        if (wc == 0.0) continue;
        const double* xp = xv.data() + (b * Cin + ci) * hw;
        for (size_t i = 0; i < hw; ++i) op[i] += wc * xp[i];
      }
    }
  }
  bool rec = detail::should_record({&x, &w});
  Tensor out = Tensor::from_values({B, Cout, H, W}, std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto wn = w.node();
    auto on = out.node();
    detail::record("pointwise_conv2d", out, {x, w}, [xn, wn, on, B, Cin, Cout, hw]() {
      const auto& g = on->grad;
      for (size_t b = 0; b < B; ++b) {
        for (size_t co = 0; co < Cout; ++co) {
          const double* gp = g.data() + (b * Cout + co) * hw;
          for (size_t ci = 0; ci < Cin; ++ci) {
            if (xn->requires_grad) {
              double wc = wn->values[co * Cin + ci];
              double* dxp = ensure_grad(*xn).data() + (b * Cin + ci) * hw;
              for (size_t i = 0; i < hw; ++i) dxp[i] += gp[i] * wc;
            }
            if (wn->requires_grad) {
              const double* xp = xn->values.data() + (b * Cin + ci) * hw;
              double acc = 0;
              for (size_t i = 0; i < hw; ++i) acc += gp[i] * xp[i];
              ensure_grad(*wn)[co * Cin + ci] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- layer norm -------------------------------------------------------------

// Normalizes jointly over `axes`; scale/shift broadcast against x.
inline Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                         const std::vector<size_t>& axes, double eps = 1e-5) {
  if (axes.empty()) throw ShapeError("layer_norm: no axes given");
  std::vector<bool> is_axis(x.rank(), false);
  size_t group = 1;
  for (size_t a : axes) {
    if (a >= x.rank()) throw ShapeError(str_cat("layer_norm: axis ", a, " out of range"));
    if (is_axis[a]) throw ShapeError("layer_norm: duplicate axis");
    is_axis[a] = true;
    group *= x.dim(a);
  }
  // outer linear index: multi-index with axis dims dropped
  Shape outer_shape;
  for (size_t d = 0; d < x.rank(); ++d) {
    if (!is_axis[d]) outer_shape.push_back(x.dim(d));
  }
  size_t n_outer = shape_numel(outer_shape);
  auto strides = row_major_strides(x.shape());
  size_t n = x.numel();
  // out linear -> outer group id
  std::vector<uint32_t> gid(n);
  {
    std::vector<size_t> outer_stride(x.rank(), 0);
    size_t acc = 1;
    for (size_t d = x.rank(); d-- > 0;) {
      if (!is_axis[d]) {
        outer_stride[d] = acc;
        acc *= x.dim(d);
      }
    }
    for (size_t lin = 0; lin < n; ++lin) {
      size_t rem = lin, og = 0;
      for (size_t d = 0; d < x.rank(); ++d) {
        size_t idx = rem / strides[d];
        rem %= strides[d];
        og += idx * outer_stride[d];
      }
      gid[lin] = static_cast<uint32_t>(og);
    }
  }
  const auto& xv = x.values();
  std::vector<double> mean_g(n_outer, 0.0), var_g(n_outer, 0.0);
  for (size_t i = 0; i < n; ++i) mean_g[gid[i]] += xv[i];
  for (auto& m : mean_g) m /= static_cast<double>(group);
  for (size_t i = 0; i < n; ++i) {
    double d = xv[i] - mean_g[gid[i]];
    var_g[gid[i]] += d * d;
  }
  std::vector<double> inv_std(n_outer);
  for (size_t o = 0; o < n_outer; ++o) {
    inv_std[o] = 1.0 / std::sqrt(var_g[o] / static_cast<double>(group) + eps);
  }
  auto xhat = std::make_shared<std::vector<double>>(n);
  auto ms = broadcast_index_map(x.shape(), scale.shape());
  auto mb = broadcast_index_map(x.shape(), shift.shape());
  if (broadcast_shape(x.shape(), scale.shape(), "layer_norm") != x.shape() ||
      broadcast_shape(x.shape(), shift.shape(), "layer_norm") != x.shape()) {
    throw ShapeError(str_cat("layer_norm: scale/shift ", shape_str(scale.shape()), "/",
                             shape_str(shift.shape()), " not broadcastable to ",
                             shape_str(x.shape())));
  }
  std::vector<double> vals(n);
  const auto& sv = scale.values();
  const auto& bv = shift.values();
  for (size_t i = 0; i < n; ++i) {
    double xh = (xv[i] - mean_g[gid[i]]) * inv_std[gid[i]];
    (*xhat)[i] = xh;
    double s = ms.empty() ? sv[i] : sv[ms[i]];
    double b = mb.empty() ? bv[i] : bv[mb[i]];
    vals[i] = s * xh + b;
  }
  bool rec = detail::should_record({&x, &scale, &shift});
  Tensor out = Tensor::from_values(x.shape(), std::move(vals), rec);
  if (rec) {
    auto xn = x.node();
    auto sn = scale.node();
    auto bn = shift.node();
    auto on = out.node();
    auto inv_std_p = std::make_shared<std::vector<double>>(std::move(inv_std));
    auto gid_p = std::make_shared<std::vector<uint32_t>>(std::move(gid));
    double inv_group = 1.0 / static_cast<double>(group);
    detail::record("layer_norm", out, {x, scale, shift},
                   [xn, sn, bn, on, xhat, inv_std_p, gid_p, ms, mb, n_outer, inv_group]() {
      const auto& g = on->grad;
      size_t n = g.size();
      if (bn->requires_grad) {
        auto& db = ensure_grad(*bn);
        for (size_t i = 0; i < n; ++i) db[mb.empty() ? i : mb[i]] += g[i];
      }
      if (sn->requires_grad) {
        auto& ds = ensure_grad(*sn);
        for (size_t i = 0; i < n; ++i) ds[ms.empty() ? i : ms[i]] += g[i] * (*xhat)[i];
      }
      if (xn->requires_grad) {
        // h = g * scale; dx = inv_std * (h - mean(h) - xhat * mean(h*xhat))
        std::vector<double> h(n), mh(n_outer, 0.0), mhx(n_outer, 0.0);
        for (size_t i = 0; i < n; ++i) {
          double s = ms.empty() ? sn->values[i] : sn->values[ms[i]];
          h[i] = g[i] * s;
          mh[(*gid_p)[i]] += h[i];
          mhx[(*gid_p)[i]] += h[i] * (*xhat)[i];
        }
        for (size_t o = 0; o < n_outer; ++o) {
          mh[o] *= inv_group;
          mhx[o] *= inv_group;
        }
        auto& dx = ensure_grad(*xn);
        for (size_t i = 0; i < n; ++i) {
          uint32_t o = (*gid_p)[i];
          dx[i] += (*inv_std_p)[o] * (h[i] - mh[o] - (*xhat)[i] * mhx[o]);
        }
      }
    });
  }
  return out;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Generic dispatch over the supported op inventory.

struct OpAttrs {
  size_t axis = 0;
  std::vector<size_t> axes;    // transpose perm / layer_norm axes / reshape dims
  ops::Conv1dAttrs conv;
  double eps = 1e-5;
};

inline Tensor apply_op(const std::string& kind, const std::vector<Tensor>& in,
                       const OpAttrs& at = {}) {
  auto want = [&](size_t n) {
    if (in.size() != n) {
      throw ShapeError(str_cat(kind, ": expected ", n, " inputs, got ", in.size()));
    }
  };
  if (kind == "matmul") { want(2); return ops::matmul(in[0], in[1]); }
  if (kind == "conv1d") { want(2); return ops::conv1d(in[0], in[1], at.conv); }
  if (kind == "pointwise_conv2d") { want(2); return ops::pointwise_conv2d(in[0], in[1]); }
  if (kind == "add") { want(2); return ops::add(in[0], in[1]); }
  if (kind == "mul") { want(2); return ops::mul(in[0], in[1]); }
  if (kind == "reshape") { want(1); return ops::reshape(in[0], at.axes); }
  if (kind == "transpose") { want(1); return ops::transpose(in[0], at.axes); }
  if (kind == "concat") { return ops::concat(in, at.axis); }
  if (kind == "softmax") { want(1); return ops::softmax(in[0], at.axis); }
  if (kind == "log_softmax") { want(1); return ops::log_softmax(in[0], at.axis); }
  if (kind == "sigmoid") { want(1); return ops::sigmoid(in[0]); }
  if (kind == "relu") { want(1); return ops::relu(in[0]); }
  if (kind == "prelu") { want(2); return ops::prelu(in[0], in[1], at.axis); }
  if (kind == "layer_norm") { want(3); return ops::layer_norm(in[0], in[1], in[2], at.axes, at.eps); }
  if (kind == "mean") { want(1); return ops::mean(in[0]); }
  if (kind == "sum") { want(1); return ops::sum(in[0]); }
  throw ShapeError(str_cat("apply_op: unknown op_kind '", kind, "'"));
}

// ---------------------------------------------------------------------------
// Gradient checking

// Max over coordinates of |analytic - central difference| /
// max(1e-8, |analytic| + |numeric|). `f` must map the inputs to a scalar and
// be evaluated without side effects.
inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         std::vector<Tensor> points, double eps = 1e-5) {
  for (auto& p : points) p.set_requires_grad(true);
  Tape tape;
  std::vector<std::vector<double>> analytic;
  {
    TapeScope scope(tape);
    Tensor loss = f(points);
    if (loss.numel() != 1) throw ShapeError("grad_check: function output is not scalar");
    tape.backward(loss);
  }
  for (auto& p : points) {
    analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));
  }
  double max_rel = 0.0;
  for (size_t pi = 0; pi < points.size(); ++pi) {
    auto& vals = points[pi].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      double orig = vals[i];
      vals[i] = orig + eps;
      double up = f(points).value();
      vals[i] = orig - eps;
      double dn = f(points).value();
      vals[i] = orig;
      double numeric = (up - dn) / (2 * eps);
      double a = analytic[pi][i];
      double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Flat binary container: "SDTN" magic, u32 version, u32 rank, u64 dims,
// little-endian f64 payload. Used for checkpoints and audio blobs.

inline constexpr uint32_t kSdtnVersion = 1;

inline void write_tensor(std::ostream& os, const Tensor& t) {
  static_assert(std::endian::native == std::endian::little,
                "SDTN writer assumes a little-endian host");
  os.write("SDTN", 4);
  uint32_t version = kSdtnVersion;
  uint32_t rank = static_cast<uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&rank), 4);
  for (size_t d : t.shape()) {
    uint64_t v = d;
    os.write(reinterpret_cast<const char*>(&v), 8);
  }
  os.write(reinterpret_cast<const char*>(t.values().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!os) throw DataError("write_tensor: stream write failed");
}

inline Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SDTN", 4) != 0) {
    throw DataError("read_tensor: bad magic, not an SDTN container");
  }
  uint32_t version = 0, rank = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&rank), 4);
  if (!is || version != kSdtnVersion) {
    throw DataError(str_cat("read_tensor: unsupported version ", version));
  }
  if (rank > 16) throw DataError("read_tensor: implausible rank");
  Shape shape(rank);
  for (auto& d : shape) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    d = static_cast<size_t>(v);
  }
  size_t n = shape_numel(shape);
  std::vector<double> data(n);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw DataError("read_tensor: truncated payload");
  return Tensor::from_values(shape, std::move(data));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(str_cat("save_tensor: cannot open ", path.string()));
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(str_cat("load_tensor: cannot open ", path.string()));
  return read_tensor(is);
}

// Serialized bytes of a tensor (header + payload), for hashing.
inline std::string tensor_bytes(const Tensor& t) {
  std::ostringstream oss(std::ios::binary);
  write_tensor(oss, t);
  return oss.str();
}

}  // namespace smtl
