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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cft/tensor/tensor.hpp"

namespace cft::harness {

struct GradCheckEntry {
  std::string group;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double seconds = 0.0;

  bool passed() const;
  const GradCheckEntry* find(const std::string& group) const;
  std::string csv() const;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  /// Coordinates checked per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  double tolerance = 1e-4;
};

/// Compares backward() against central differences for one scalar function of
/// several leaves. `loss` must rebuild its graph on every call (it runs under
/// whichever tape is active). Coordinates are spread evenly when capped.
GradCheckEntry check_leaves(const std::string& group, const std::function<Tensor()>& loss,
                            std::vector<Tensor> leaves, double tolerance, std::size_t max_coords_per_tensor = 0);

/// Miniature model (C = 8, 2 heads, L = 3, 32^2 input) with every parameter
/// randomized, one group per module; each loss term against its logits; a
/// linear-only model at 1e-10.
GradCheckReport run_gradcheck_suite(const GradCheckOptions& options = {});

}  // namespace cft::harness
