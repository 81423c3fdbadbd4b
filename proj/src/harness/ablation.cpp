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

#include "cft/harness/ablation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cft/error.hpp"
#include "cft/harness/flops.hpp"
#include "cft/harness/train.hpp"

namespace cft::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

AblationEntry AblationEntry::parse(const std::string& text) {
  AblationEntry e;
  const auto colon = text.find(':');
  e.variant = core::parse_variant(text.substr(0, colon));
  if (colon != std::string::npos) e.mask_loss = parse_mask_loss(text.substr(colon + 1));
  return e;
}

std::string AblationEntry::label() const {
  std::string s(core::to_string(variant));
  if (mask_loss != losses::MaskLossMode::kCumulative) s += "_" + std::string(to_string(mask_loss));
  return s;
}

std::vector<AblationEntry> default_ablation_entries() {
  std::vector<AblationEntry> out;
  for (core::Variant v : core::all_variants()) out.push_back({v, losses::MaskLossMode::kCumulative});
  out.push_back({core::Variant::kCft, losses::MaskLossMode::kOff});
  return out;
}

std::string AblationResult::csv() const {
  std::string out = "label,variant,mask_loss,params,flops,miou,pixel_acc,train_miou,train_pixel_acc,mask_align_s4,"
                    "mask_align_s3,mask_align_s2\n";
  for (const auto& r : rows) {
    out += r.entry.label() + "," + std::string(core::to_string(r.entry.variant)) + "," +
           std::string(to_string(r.entry.mask_loss)) + "," + std::to_string(r.params) + "," +
           std::to_string(r.flops) + "," + fmt(r.miou) + "," + fmt(r.pixel_accuracy) + "," + fmt(r.train_miou) + "," + fmt(r.train_pixel_accuracy);
    for (std::size_t s = 0; s < 3; ++s)
      out += "," + (s < r.mask_alignment.size() ? fmt(r.mask_alignment[s]) : std::string(""));
    out += "\n";
  }
  return out;
}

std::optional<losses::GainSummary> AblationResult::gain(std::vector<double>* base, std::vector<double>* agg) const {
  const AblationRow* none = nullptr;
  const AblationRow* cft = nullptr;
  for (const auto& r : rows) {
    if (!none && r.entry.variant == core::Variant::kNone) none = &r;
    if (!cft && r.entry.variant == core::Variant::kCft && r.entry.mask_loss == losses::MaskLossMode::kCumulative)
      cft = &r;
  }
  if (!none || !cft) return std::nullopt;
  if (base) *base = none->per_category_iou;
  if (agg) *agg = cft->per_category_iou;
  return losses::per_category_gain(none->per_category_iou, cft->per_category_iou);
}

AblationResult run_ablation(const TrainConfig& base, const std::vector<AblationEntry>& entries, bool write_files) {
  if (entries.empty()) throw UsageError("run_ablation: no entries");
  base.validate();
  const Dataset train_data = training_set(base);
  const Dataset held_out = held_out_set(base);
  AblationResult result;
  for (const auto& entry : entries) {
    TrainConfig cfg = base;
    cfg.variant = entry.variant;
    cfg.mask_loss = entry.mask_loss;
    cfg.out = (fs::path(base.out) / entry.label()).string();
    TrainOptions opts;
    opts.write_files = write_files;
    const auto start = std::chrono::steady_clock::now();
    const TrainResult trained = train(cfg, opts);
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;

    AblationRow row;
    row.entry = entry;
    row.params = trained.model.parameter_count();
    row.flops = count_flops(cfg.model_config()).total_macs;
    const EvalReport eval = evaluate(trained.model, held_out);
    row.miou = eval.iou.mean;
    row.pixel_accuracy = eval.pixel_accuracy;
    row.mask_alignment = eval.mask_alignment;
    row.per_category_iou = eval.iou.per_category;
    const EvalReport on_train = evaluate(trained.model, train_data);
    row.train_miou = on_train.iou.mean;
    row.train_pixel_accuracy = on_train.pixel_accuracy;
    row.train_seconds = took.count();
    if (write_files) std::ofstream(fs::path(cfg.out) / "eval.json") << eval.json() << '\n';
    result.rows.push_back(std::move(row));
  }
  if (write_files) {
    fs::create_directories(base.out);
    std::ofstream(fs::path(base.out) / "ablation.csv") << result.csv();
    std::vector<double> b, a;
    if (auto g = result.gain(&b, &a)) {
      std::ofstream(fs::path(base.out) / "gain.csv") << losses::gain_csv(b, a);
      std::ofstream(fs::path(base.out) / "gain.json") << losses::gain_json(*g) << '\n';
    }
  }
  return result;
}

}  // namespace cft::harness
