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
#include <string>
#include <vector>

#include "cft/losses/losses.hpp"
#include "cft/tensor/tensor.hpp"

namespace cft::harness {

/// Images [N, 3, S, S] in [0, 1] with labels [N, S, S].
struct Dataset {
  Tensor images;
  losses::LabelMap labels;

  std::size_t size() const { return labels.batch; }
  std::size_t image_size() const { return labels.height; }

  /// Gathers the given samples, mirroring those whose flip flag is set.
  void batch(const std::vector<std::size_t>& indices, const std::vector<bool>& flips, Tensor& images_out,
             losses::LabelMap& labels_out) const;
};

/// Background (category 0) plus one rectangle, ellipse or stripe band per
/// foreground category. Each category has its own colour and texture so
/// pixels are separable. Output depends only on the arguments.
Dataset gen_synthetic_dataset(std::uint64_t seed, std::size_t n_images, std::size_t size,
                              std::size_t num_categories);

/// Writes image_NNN.ppm / label_NNN.pgm pairs plus manifest.json into `dir`.
void write_dataset(const Dataset& data, const std::string& dir);

/// Per-category pixel counts over the whole dataset (ignored pixels excluded).
std::vector<std::size_t> label_histogram(const Dataset& data, std::size_t num_categories);

}  // namespace cft::harness
