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

#include "cft/core/cft_block.hpp"
#include "cft/pipeline/model.hpp"

namespace cft::harness {

/// One multiply-add counts as one FLOP. Normalization, softmax, activation,
/// resize and pooling work is not counted.
struct ModuleCost {
  std::string name;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

struct FlopsReport {
  std::vector<ModuleCost> modules;  // backbone, lateral, block3, block2, block1, decode
  std::uint64_t total_macs = 0;
  std::uint64_t total_params = 0;

  /// Sum over the three top-down fusion blocks.
  std::uint64_t aggregation_macs() const;
  const ModuleCost* find(const std::string& name) const;
  std::string csv() const;
  std::string json() const;
};

/// Analytic count for one forward pass on a batch of config.input_size^2 images.
FlopsReport count_flops(const pipeline::ModelConfig& config, std::size_t batch = 1);

/// Cost of a single fusion block: queries from an h x w map, f_high of size hs x ws,
/// keys/values pooled to pool_h x pool_w where the variant pools.
std::uint64_t block_macs(core::Variant variant, const core::BlockConfig& block, std::size_t batch, std::size_t h,
                         std::size_t w, std::size_t hs, std::size_t ws, std::size_t pool_h, std::size_t pool_w);
std::uint64_t block_params(core::Variant variant, const core::BlockConfig& block);

/// 256^2 input, C = 256, L = 8: large enough that the coarsest stage has more
/// positions than there are categories.
pipeline::ModelConfig flops_toy_config(core::Variant variant = core::Variant::kCft);

}  // namespace cft::harness
