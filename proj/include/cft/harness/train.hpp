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

#include "cft/harness/checkpoint.hpp"
#include "cft/harness/config.hpp"
#include "cft/harness/dataset.hpp"
#include "cft/harness/optim.hpp"
#include "cft/losses/losses.hpp"
#include "cft/losses/metrics.hpp"
#include "cft/pipeline/model.hpp"

namespace cft::harness {

struct IterationLog {
  std::size_t iteration = 0;
  losses::LossBreakdown loss;
  double lr = 0.0;
};

std::string log_csv_header();
std::string log_csv_row(const IterationLog& row);

struct TrainOptions {
  /// Continue from this checkpoint's weights, moments and iteration counter.
  const Checkpoint* resume = nullptr;
  /// Stop once this many iterations have completed (0: run to total_iters). The
  /// schedule still follows total_iters, so a later resume picks up where this left off.
  std::size_t stop_after = 0;
  /// Write train_log.csv and checkpoint.cftk under config.out.
  bool write_files = true;
  std::function<void(const IterationLog&)> on_log;
};

struct TrainResult {
  pipeline::Model model;
  Checkpoint checkpoint;
  std::vector<IterationLog> log;
};

/// Single-threaded AdamW + poly LR training on the synthetic dataset described by
/// `config`. Sample order and flips for iteration t come from Rng::derive(seed, t),
/// so an interrupted-and-resumed run matches an uninterrupted one bit for bit.
/// Throws NumericError (after writing diagnostic.json) on a non-finite loss.
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

Dataset training_set(const TrainConfig& config);
Dataset held_out_set(const TrainConfig& config);

Checkpoint make_checkpoint(const pipeline::Model& model, const AdamW* optimizer, std::uint64_t iteration,
                           const TrainConfig& config);
/// Rebuilds the model described by the checkpoint's config and copies every stored tensor.
pipeline::Model restore_model(const Checkpoint& ckpt);
TrainConfig checkpoint_config(const Checkpoint& ckpt);
void restore_optimizer(const Checkpoint& ckpt, AdamW& optimizer);

struct EvalReport {
  losses::ConfusionMatrix confusion{2};
  losses::IouReport iou;
  double pixel_accuracy = 0.0;
  /// Fraction of scored pixels where argmax of the running mask sum after stage
  /// 4, 3, 2 equals the label downsampled to stage-2 resolution. Empty without masks.
  std::vector<double> mask_alignment;

  /// category_id,iou
  std::string per_category_csv() const;
  std::string json() const;
};

/// Single-scale inference over the dataset. Throws UsageError if it is empty.
EvalReport evaluate(const pipeline::Model& model, const Dataset& data, std::size_t batch_size = 4);

}  // namespace cft::harness
