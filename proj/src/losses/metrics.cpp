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

#include "cft/losses/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cft/error.hpp"

namespace cft::losses {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}
}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t num_categories)
    : n_(num_categories), counts_(num_categories * num_categories, 0) {
  if (num_categories == 0) throw ConfigError("confusion matrix needs at least one category");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

void ConfusionMatrix::add(std::uint8_t truth, std::uint8_t predicted) {
  if (truth == kIgnoreIndex) return;
  if (truth >= n_ || predicted >= n_) throw ConfigError("confusion matrix label out of range");
  ++counts_[truth * n_ + predicted];
}

void ConfusionMatrix::add(const Tensor& logits, const LabelMap& labels) {
  const LabelMap pred = argmax_labels(logits);
  if (pred.labels.size() != labels.labels.size() || pred.height != labels.height || pred.width != labels.width) {
    throw ShapeError("confusion matrix: prediction and label extents differ");
  }
  for (std::size_t i = 0; i < pred.labels.size(); ++i) add(labels.labels[i], pred.labels[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IouReport miou(const ConfusionMatrix& cm) {
  const std::size_t n = cm.num_categories();
  IouReport r;
  r.per_category.assign(n, kNaN);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t l = 0; l < n; ++l) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm.at(l, k);
      col += cm.at(k, l);
    }
    const std::uint64_t tp = cm.at(l, l);
    const std::uint64_t denom = row + col - tp;  // TP + FN + FP
    if (denom == 0) continue;
    r.per_category[l] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += r.per_category[l];
    ++defined;
  }
  r.mean = defined ? sum / static_cast<double>(defined) : kNaN;
  return r;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  std::uint64_t diag = 0;
  for (std::size_t l = 0; l < cm.num_categories(); ++l) diag += cm.at(l, l);
  const std::uint64_t total = cm.total();
  return total ? static_cast<double>(diag) / static_cast<double>(total) : kNaN;
}

LabelMap argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_labels: expected [B, L, H, W]");
  const std::size_t B = logits.dim(0), L = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (L > kIgnoreIndex) throw ConfigError("too many categories for 8-bit labels");
  const auto z = logits.data();
  LabelMap out{B, H, W, std::vector<std::uint8_t>(B * H * W)};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < H * W; ++p) {
      std::size_t best = 0;
      for (std::size_t l = 1; l < L; ++l)
        if (z[(b * L + l) * H * W + p] > z[(b * L + best) * H * W + p]) best = l;
      out.labels[b * H * W + p] = static_cast<std::uint8_t>(best);
    }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

GainSummary per_category_gain(const std::vector<double>& iou_base, const std::vector<double>& iou_agg) {
  if (iou_base.size() != iou_agg.size()) throw ShapeError("per_category_gain: vectors differ in length");
  GainSummary s;
  std::vector<double> defined;
  for (std::size_t i = 0; i < iou_base.size(); ++i) {
    const double d = iou_agg[i] - iou_base[i];
    s.deltas.push_back(d);
    if (!std::isnan(d)) defined.push_back(d);
  }
  s.count = defined.size();
  if (defined.empty()) {
    s.min = s.q1 = s.median = s.q3 = s.max = s.mean = kNaN;
    return s;
  }
  s.min = *std::min_element(defined.begin(), defined.end());
  s.max = *std::max_element(defined.begin(), defined.end());
  s.q1 = quantile(defined, 0.25);
  s.median = quantile(defined, 0.5);
  s.q3 = quantile(defined, 0.75);
  double sum = 0.0;
  for (double d : defined) sum += d;
  s.mean = sum / static_cast<double>(defined.size());
  return s;
}

std::string gain_csv(const std::vector<double>& iou_base, const std::vector<double>& iou_agg) {
  const GainSummary s = per_category_gain(iou_base, iou_agg);
  std::ostringstream os;
  os << "category_id,iou_base,iou_agg,delta\n";
  for (std::size_t i = 0; i < iou_base.size(); ++i)
    os << i << ',' << fmt(iou_base[i]) << ',' << fmt(iou_agg[i]) << ',' << fmt(s.deltas[i]) << '\n';
  return os.str();
}

std::string gain_json(const GainSummary& s) {
  auto num = [](double v) -> nlohmann::json { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  nlohmann::json j = {{"mean", num(s.mean)}, {"q1", num(s.q1)},   {"median", num(s.median)}, {"q3", num(s.q3)},
                      {"min", num(s.min)},   {"max", num(s.max)}, {"count", s.count}};
  return j.dump(2);
}

}  // namespace cft::losses
