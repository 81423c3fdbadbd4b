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
#include <optional>
#include <string>
#include <vector>

#include "cft/harness/config.hpp"
#include "cft/losses/metrics.hpp"

namespace cft::harness {

struct AblationEntry {
  core::Variant variant = core::Variant::kCft;
  losses::MaskLossMode mask_loss = losses::MaskLossMode::kCumulative;

  /// "variant" or "variant:mask_loss", e.g. "cft:off".
  static AblationEntry parse(const std::string& text);
  std::string label() const;
};

struct AblationRow {
  AblationEntry entry;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  double miou = 0.0;            // held-out set
  double pixel_accuracy = 0.0;  // held-out set
  double train_miou = 0.0;
  double train_pixel_accuracy = 0.0;
  double train_seconds = 0.0;  // wall clock of train(); not part of the CSV
  std::vector<double> mask_alignment;  // held-out, stages 4, 3, 2; empty without masks
  std::vector<double> per_category_iou;
};

struct AblationResult {
  std::vector<AblationRow> rows;

  /// label,variant,mask_loss,params,flops,miou,pixel_acc,train_miou,train_pixel_acc,mask_align_s4,mask_align_s3,mask_align_s2
  std::string csv() const;
  /// Per-category gain of the first "cft" row over the first "none" row, if both ran.
  std::optional<losses::GainSummary> gain(std::vector<double>* base = nullptr, std::vector<double>* agg = nullptr) const;
};

/// Default set: every variant with the cumulative mask loss, plus cft without it.
std::vector<AblationEntry> default_ablation_entries();

/// Trains and evaluates each entry from the same base config (same seeds and budget).
/// With write_files, each run writes under <out>/<label>/ and the table goes to
/// <out>/ablation.csv (plus gain.csv / gain.json when cft and none both ran).
AblationResult run_ablation(const TrainConfig& base, const std::vector<AblationEntry>& entries,
                            bool write_files = true);

}  // namespace cft::harness
