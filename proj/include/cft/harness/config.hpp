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
#include <map>
#include <string>

#include "cft/losses/losses.hpp"
#include "cft/pipeline/model.hpp"

namespace cft::harness {

/// Everything a training / evaluation run depends on.
///
/// Defaults are desk scale. The reference schedule (baselr 6e-5, 160k
/// iterations, 512^2 crops, batch 16) is far outside a CPU budget; the
/// defaults below keep a full run within minutes on one core.
struct TrainConfig {
  // optimization
  double baselr = 2e-3;  // reference recipe: 6e-5
  double power = 1.0;
  std::size_t total_iters = 800;  // reference recipe: 160000
  std::size_t batch_size = 4;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  bool flip = true;

  // data
  std::size_t crop_size = 64;
  std::size_t n_images = 8;
  std::uint64_t data_seed = 0;
  std::size_t eval_images = 8;
  std::uint64_t eval_seed = 1000;  // held-out set; eval_seed == data_seed evaluates on training data

  // model
  std::size_t num_categories = 4;
  std::size_t channels = 32;
  std::size_t heads = 4;
  std::size_t ffn_ratio = 4;
  std::array<std::size_t, pipeline::kStages> backbone_widths = {16, 32, 64, 128};
  core::Variant variant = core::Variant::kCft;

  // loss
  losses::MaskLossMode mask_loss = losses::MaskLossMode::kCumulative;
  double lambda_dice = 2.0;
  double lambda_focal = 5.0;

  // bookkeeping
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::string out = "runs/default";

  void validate() const;
  pipeline::ModelConfig model_config() const;
  losses::LossWeights loss_weights() const;

  /// Applies one `key = value` assignment. Unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  /// All fields as ordered key/value pairs; `from_text(to_text())` reproduces the config.
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::string& path);
};

using cft::to_string;
using core::to_string;
std::string_view to_string(losses::MaskLossMode mode);
losses::MaskLossMode parse_mask_loss(std::string_view name);

}  // namespace cft::harness
