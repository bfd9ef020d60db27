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

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "smtl/common.hpp"
#include "smtl/tensor.hpp"

namespace smtl {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Linear warmup, hold, linear decay. factor(step) multiplies the base rate.
struct LrSchedule {
  size_t total_steps = 0;
  double warmup_frac = 0.1;
  double hold_frac = 0.4;

  double factor(size_t step) const {
    if (total_steps == 0) return 1.0;
    auto warm = static_cast<size_t>(std::llround(warmup_frac * total_steps));
    auto hold = static_cast<size_t>(std::llround(hold_frac * total_steps));
    if (warm > 0 && step < warm) {
      return static_cast<double>(step + 1) / static_cast<double>(warm);
    }
    if (step < warm + hold) return 1.0;
    size_t decay = total_steps > warm + hold ? total_steps - warm - hold : 1;
    if (step >= total_steps) return 0.0;
    return static_cast<double>(total_steps - step) / static_cast<double>(decay);
  }
};

using ParamMap = std::map<std::string, Tensor>;

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  size_t steps_taken() const { return t_; }

  // Allocates and zeroes the grad buffer of every trainable parameter, so a
  // later backward pass leaves parameters outside the loss graph with an
  // explicit zero gradient.
  void zero_grad(ParamMap& params) {
    for (auto& [name, p] : params) {
      if (!p.requires_grad()) continue;
      auto& g = ensure_grad(*p.node());
      std::fill(g.begin(), g.end(), 0.0);
    }
  }

  // One update with effective rate lr_scale * cfg.lr. Frozen parameters and
  // parameters without a grad buffer are left untouched.
  void step(ParamMap& params, double lr_scale = 1.0) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    double lr = cfg_.lr * lr_scale;
    for (auto& [name, p] : params) {
      if (!p.requires_grad() || !p.has_grad()) continue;
      const auto& g = p.grad();
      auto& st = state_[name];
      if (st.m.empty()) {
        st.m.assign(p.numel(), 0.0);
        st.v.assign(p.numel(), 0.0);
      }
      auto& vals = p.values();
      for (size_t i = 0; i < vals.size(); ++i) {
        if (!std::isfinite(g[i])) {
          throw NumericError(str_cat("Adam::step: non-finite gradient in ", name));
        }
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        vals[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> state_;
  size_t t_ = 0;
};

}  // namespace smtl
