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

namespace cft::losses {

/// L x L pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_categories);

  std::size_t num_categories() const { return n_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::uint64_t total() const;

  /// Adds one pixel; ignored ground truth is skipped.
  void add(std::uint8_t truth, std::uint8_t predicted);
  /// Accumulates argmax(logits) over channels against labels. logits is [B, L, H, W].
  void add(const Tensor& logits, const LabelMap& labels);
  /// Element-wise sum; accumulation is associative so partial matrices may be merged in any order.
  void merge(const ConfusionMatrix& other);

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct IouReport {
  std::vector<double> per_category;  // NaN where a category is absent from both truth and prediction
  double mean = 0.0;                 // over categories with a defined IoU
};

/// IoU_l = TP / (TP + FP + FN).
IouReport miou(const ConfusionMatrix& cm);
double pixel_accuracy(const ConfusionMatrix& cm);

/// Per-pixel argmax over the channel axis of [B, L, H, W].
LabelMap argmax_labels(const Tensor& logits);

struct GainSummary {
  std::vector<double> deltas;  // iou_agg - iou_base per category (NaN if either is undefined)
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
  std::size_t count = 0;  // categories with a defined delta
};

/// Per-category IoU deltas and their box-plot statistics (linear-interpolated quantiles).
GainSummary per_category_gain(const std::vector<double>& iou_base, const std::vector<double>& iou_agg);

/// Quantile by linear interpolation between order statistics, q in [0, 1].
double quantile(std::vector<double> values, double q);

/// CSV with header category_id,iou_base,iou_agg,delta.
std::string gain_csv(const std::vector<double>& iou_base, const std::vector<double>& iou_agg);
/// JSON object with mean, q1, median, q3, min, max, count.
std::string gain_json(const GainSummary& summary);

}  // namespace cft::losses
