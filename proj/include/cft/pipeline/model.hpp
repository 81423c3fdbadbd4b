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

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cft/core/cft_block.hpp"
#include "cft/tensor/random.hpp"
#include "cft/tensor/tensor.hpp"

namespace cft::pipeline {

using core::NamedTensors;

inline constexpr std::size_t kStages = 4;

struct ModelConfig {
  std::size_t num_categories = 8;
  std::size_t channels = 256;
  std::size_t heads = 4;
  std::size_t ffn_ratio = 4;
  std::array<std::size_t, kStages> backbone_widths = {32, 64, 128, 256};
  std::size_t input_size = 64;
  core::Variant variant = core::Variant::kCft;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  core::BlockConfig block_config() const;
};

/// Backbone stages X_1^B..X_4^B at 1/4, 1/8, 1/16 and 1/32 of the input.
struct FeaturePyramid {
  std::array<Tensor, kStages> stages;
};

struct ConvParams {
  Tensor weight;  // [Cout, Cin, 3, 3]
  Tensor bias;
};

/// Two 3x3 convolutions with GELU per stage. Stage 1 strides twice to reach 1/4.
struct BackboneParams {
  std::array<ConvParams, kStages> first;
  std::array<ConvParams, kStages> second;
};

struct Model {
  ModelConfig config;
  BackboneParams backbone;
  std::array<core::LinearParams, kStages> laterals;  // weight [C, C_i]
  std::vector<core::CftBlockParams> blocks;           // blocks[k] fuses stage k+2 into stage k+1; empty for kNone
  core::LinearParams classifier;                      // weight [L, 4C]
  /// Context module G applied to X_4; identity unless replaced.
  std::function<Tensor(const Tensor&)> context;

  static Model init(const ModelConfig& config, std::uint64_t seed);

  NamedTensors named_parameters() const;
  std::size_t parameter_count() const;
  /// Zeroes every block's w_o and FFN projection.
  void zero_block_paths();
};

/// Stride-2 conv stacks producing the four pyramid stages.
FeaturePyramid toy_backbone(const Tensor& image, const BackboneParams& params);

/// Per-stage 1x1 projection to the shared width C.
std::array<Tensor, kStages> lateral_project(const FeaturePyramid& pyramid,
                                            const std::array<core::LinearParams, kStages>& laterals);

struct Aggregated {
  std::array<Tensor, kStages> features;      // F_1..F_4
  std::vector<core::MaskLogits> masks;        // stages 4, 3, 2 (coarse to fine); empty unless kCft
};

/// F_4 = G(X_4), then F_i = block_i(F_{i+1}, X_i) for i = 3, 2, 1.
Aggregated top_down_aggregate(const std::array<Tensor, kStages>& laterals, const Model& model);

/// Resize F_2..F_4 to F_1's scale, concatenate channels, 1x1 classify, resize to out_h x out_w.
Tensor decode_head(const std::array<Tensor, kStages>& features, const core::LinearParams& classifier,
                   std::size_t out_h, std::size_t out_w);

struct ForwardResult {
  Tensor logits;                          // [B, L, H, W]
  std::vector<core::MaskLogits> masks;    // stages 4, 3, 2
};

ForwardResult forward(const Tensor& image, const Model& model);

}  // namespace cft::pipeline
