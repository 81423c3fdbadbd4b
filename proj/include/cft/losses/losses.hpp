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
#include <vector>

#include "cft/core/cft_block.hpp"
#include "cft/tensor/tensor.hpp"

namespace cft::losses {

inline constexpr std::uint8_t kIgnoreIndex = 255;

/// Per-pixel category indices, row-major [B, H, W]. kIgnoreIndex marks unscored pixels.
struct LabelMap {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t b, std::size_t y, std::size_t x) const { return labels[(b * height + y) * width + x]; }
  /// Throws ConfigError if a label is neither < num_categories nor the ignore index.
  void validate(std::size_t num_categories) const;
};

enum class MaskLossMode {
  kCumulative,  // supervise every running sum of upsampled stage masks, average the terms
  kFinal,       // supervise only the sum over all stages
  kOff,         // no mask supervision
};

struct LossWeights {
  double lambda_dice = 2.0;
  double lambda_focal = 5.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_smooth = 1.0;
  MaskLossMode mode = MaskLossMode::kCumulative;
};

struct LossBreakdown {
  double ce = 0.0;
  double dice = 0.0;
  double focal = 0.0;
  double total = 0.0;
  double lambda_d = 2.0;
  double lambda_f = 5.0;
};

/// Differentiable loss terms; `total` is the tensor to call backward on.
struct LossTerms {
  Tensor ce;
  Tensor dice;
  Tensor focal;
  Tensor total;
  LossBreakdown breakdown(const LossWeights& w) const;
};

/// ce + lambda_d * dice + lambda_f * focal, evaluated in the same order as total_loss.
double combine(double ce, double dice, double focal, const LossWeights& w);

/// Mean over scored pixels of -log softmax(logits)[true class]. logits is [B, L, H, W].
Tensor cross_entropy(const Tensor& logits, const LabelMap& labels);

/// Resizes every stage mask (coarse to fine) to the last one's resolution and
/// returns the running sums: m1, m1 + m2, m1 + m2 + m3, ...
std::vector<Tensor> sum_masks_orderly(const std::vector<Tensor>& masks);

/// Sigmoid dice 1 - (2 sum(p t) + s) / (sum p + sum t + s) per (sample, category),
/// averaged over pairs whose target is non-empty. Inputs are [B, L, H, W] or [L, H, W].
Tensor dice_loss(const Tensor& mask_logits, const Tensor& target, double smooth = 1.0);

/// Mean over elements of -alpha_t (1 - p_t)^gamma log p_t with p = sigmoid(logit).
Tensor focal_loss(const Tensor& mask_logits, const Tensor& target, double gamma = 2.0, double alpha = 0.25);

/// Nearest-neighbour downsample of labels to hc x wc, one-hot over num_categories.
/// Ignored pixels are zero in every category. Result is [B, L, hc, wc].
Tensor build_mask_targets(const LabelMap& labels, std::size_t num_categories, std::size_t hc, std::size_t wc);

/// Nearest-neighbour resampling of a label map (index floor(dst * in / out)).
LabelMap downsample_labels(const LabelMap& labels, std::size_t hc, std::size_t wc);

LossTerms total_loss(const Tensor& logits, const std::vector<core::MaskLogits>& masks, const LabelMap& labels,
                     const LossWeights& weights = {});

}  // namespace cft::losses
