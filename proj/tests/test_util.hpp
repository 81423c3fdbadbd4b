// Copyright (c) 2026 The CFT Authors. All Rights Reserved.
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
#include <cmath>
#include <cstddef>
#include <vector>

#include "cft/tensor/random.hpp"
#include "cft/tensor/tensor.hpp"
#include "oracle/oracle.hpp"

namespace testutil {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const cft::Tensor& a, const std::vector<double>& b) { return max_abs_diff(a.data(), b); }

/// Concatenates per-sample oracle maps into one flat [B, C, H, W] buffer.
inline std::vector<double> flatten(const std::vector<oracle::Map>& maps) {
  std::vector<double> out;
  for (const auto& m : maps) out.insert(out.end(), m.v.begin(), m.v.end());
  return out;
}

inline cft::Tensor random_tensor(const cft::Shape& shape, cft::Rng& rng, bool grad = false, double lo = -1.0,
                                 double hi = 1.0) {
  return cft::uniform_tensor(shape, lo, hi, rng, grad);
}

inline cft::Tensor from_map(const oracle::Map& m) { return cft::Tensor({1, m.c, m.h, m.w}, m.v); }

}  // namespace testutil
