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

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "smtl/common.hpp"

namespace smtl {

// perm[slot] = stream index assigned to that slot. Throughout the library
// the slot axis is the reference speaker and the stream axis is the model
// output, so perm maps reference speaker -> model stream.
using Permutation = std::vector<size_t>;

inline bool is_permutation_of(const Permutation& p, size_t n) {
  if (p.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (size_t v : p) {
    if (v >= n || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

inline Permutation identity_permutation(size_t n) {
  Permutation p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

// All permutations of {0..n-1} in lexicographic order.
inline std::vector<Permutation> permutations_of(size_t n) {
  Permutation p = identity_permutation(n);
  std::vector<Permutation> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

// Argmin over permutations of `cost`, lexicographically smallest on ties.
// cost receives perm and returns a double; +infinity marks an invalid choice.
template <typename CostFn>
inline Permutation best_permutation(size_t n, CostFn&& cost, double* best_value = nullptr) {
  Permutation p = identity_permutation(n);
  Permutation best = p;
  double best_cost = cost(p);
  while (std::next_permutation(p.begin(), p.end())) {
    double c = cost(p);
    if (c < best_cost) {
      best_cost = c;
      best = p;
    }
  }
  if (best_value) *best_value = best_cost;
  return best;
}

}  // namespace smtl
