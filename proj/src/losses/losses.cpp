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

#include "cft/losses/losses.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "cft/error.hpp"
#include "cft/tensor/ops.hpp"
#include "cft/tensor/tape.hpp"

namespace cft::losses {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

/// Promotes [L, H, W] to [1, L, H, W].
Tensor as_batched(const Tensor& t) {
  if (t.rank() == 3) return ops::reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)});
  if (t.rank() != 4) throw ShapeError("mask tensor must be [B, L, H, W] or [L, H, W], got " + to_string(t.shape()));
  return t;
}

}  // namespace

void LabelMap::validate(std::size_t num_categories) const {
  if (labels.size() != batch * height * width) throw ShapeError("label map size does not match its extents");
  for (std::uint8_t v : labels) {
    if (v != kIgnoreIndex && v >= num_categories) {
      throw ConfigError("label " + std::to_string(v) + " outside [0, " + std::to_string(num_categories) + ")");
    }
  }
}

LossBreakdown LossTerms::breakdown(const LossWeights& w) const {
  return {ce.item(), dice.item(), focal.item(), total.item(), w.lambda_dice, w.lambda_focal};
}

double combine(double ce, double dice, double focal, const LossWeights& w) {
  return (ce + dice * w.lambda_dice) + focal * w.lambda_focal;
}

Tensor cross_entropy(const Tensor& logits, const LabelMap& labels) {
  if (logits.rank() != 4) throw ShapeError("cross_entropy: logits must be [B, L, H, W]");
  const std::size_t B = logits.dim(0), L = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (labels.batch != B || labels.height != H || labels.width != W) {
    throw ShapeError("cross_entropy: labels " + std::to_string(labels.batch) + "x" + std::to_string(labels.height) +
                     "x" + std::to_string(labels.width) + " do not match logits " + to_string(logits.shape()));
  }
  labels.validate(L);
  const std::size_t P = H * W;
  const auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(z.size());
  double total = 0.0;
  std::size_t scored = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::uint8_t y = labels.labels[b * P + p];
      double mx = -INFINITY;
      for (std::size_t l = 0; l < L; ++l) mx = std::max(mx, z[(b * L + l) * P + p]);
      double s = 0.0;
      for (std::size_t l = 0; l < L; ++l) s += std::exp(z[(b * L + l) * P + p] - mx);
      for (std::size_t l = 0; l < L; ++l) (*probs)[(b * L + l) * P + p] = std::exp(z[(b * L + l) * P + p] - mx) / s;
      if (y == kIgnoreIndex) continue;
      total += -(z[(b * L + y) * P + p] - mx - std::log(s));
      ++scored;
    }
  }
  if (scored == 0) throw UndefinedLossError("cross_entropy: every pixel is ignored");
  const double n = static_cast<double>(scored);
  return record_op("cross_entropy", {}, {total / n}, {logits},
                   [probs, labels, B, L, P, n](const std::vector<double>& g, const GradRefs& gin) {
                     auto& gz = *gin[0];
                     const double k = g[0] / n;
                     for (std::size_t b = 0; b < B; ++b) {
                       for (std::size_t p = 0; p < P; ++p) {
                         const std::uint8_t y = labels.labels[b * P + p];
                         if (y == kIgnoreIndex) continue;
                         for (std::size_t l = 0; l < L; ++l) {
                           const std::size_t i = (b * L + l) * P + p;
                           gz[i] += k * ((*probs)[i] - (l == y ? 1.0 : 0.0));
                         }
                       }
                     }
                   });
}

std::vector<Tensor> sum_masks_orderly(const std::vector<Tensor>& masks) {
  std::vector<Tensor> sums;
  if (masks.empty()) return sums;
  const Tensor& finest = masks.back();
  if (finest.rank() != 4) throw ShapeError("sum_masks_orderly: masks must be [B, L, H, W]");
  const std::size_t h = finest.dim(2), w = finest.dim(3);
  Tensor running;
  for (const Tensor& m : masks) {
    const Tensor r = (m.dim(2) == h && m.dim(3) == w) ? m : ops::bilinear_resize(m, h, w);
    running = running.defined() ? ops::add(running, r) : r;
    sums.push_back(running);
  }
  return sums;
}

Tensor dice_loss(const Tensor& mask_logits, const Tensor& target, double smooth) {
  const Tensor z = as_batched(mask_logits);
  const Tensor t = as_batched(target);
  if (z.shape() != t.shape()) {
    throw ShapeError("dice_loss: logits " + to_string(z.shape()) + " vs target " + to_string(t.shape()));
  }
  const std::size_t pairs = z.dim(0) * z.dim(1), P = z.dim(2) * z.dim(3);
  const auto zd = z.data();
  const auto td = t.data();
  struct PairStats {
    double inter, psum, tsum;
    bool present;
  };
  auto stats = std::make_shared<std::vector<PairStats>>(pairs);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < pairs; ++k) {
    double inter = 0.0, ps = 0.0, ts = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double pr = sigmoid(zd[k * P + p]);
      inter += pr * td[k * P + p];
      ps += pr;
      ts += td[k * P + p];
    }
    const bool is_present = ts > 0.0;
    (*stats)[k] = {inter, ps, ts, is_present};
    if (is_present) {
      total += 1.0 - (2.0 * inter + smooth) / (ps + ts + smooth);
      ++present;
    }
  }
  const double n = static_cast<double>(present);
  const double value = present ? total / n : 0.0;
  const Tensor out = record_op("dice_loss", {}, {value}, {z},
                               [z, t, stats, pairs, P, n, smooth](const std::vector<double>& g, const GradRefs& gin) {
                                 if (n == 0.0) return;
                                 auto& gz = *gin[0];
                                 const auto zd = z.data();
                                 const auto td = t.data();
                                 for (std::size_t k = 0; k < pairs; ++k) {
                                   const PairStats& s = (*stats)[k];
                                   if (!s.present) continue;
                                   const double den = s.psum + s.tsum + smooth;
                                   const double num = 2.0 * s.inter + smooth;
                                   for (std::size_t p = 0; p < P; ++p) {
                                     const double pr = sigmoid(zd[k * P + p]);
                                     const double dp = -(2.0 * td[k * P + p] * den - num) / (den * den);
                                     gz[k * P + p] += g[0] / n * dp * pr * (1.0 - pr);
                                   }
                                 }
                               });
  return out;
}

Tensor focal_loss(const Tensor& mask_logits, const Tensor& target, double gamma, double alpha) {
  const Tensor z = as_batched(mask_logits);
  const Tensor t = as_batched(target);
  if (z.shape() != t.shape()) {
    throw ShapeError("focal_loss: logits " + to_string(z.shape()) + " vs target " + to_string(t.shape()));
  }
  const auto zd = z.data();
  const auto td = t.data();
  const double n = static_cast<double>(zd.size());
  double total = 0.0;
  for (std::size_t i = 0; i < zd.size(); ++i) {
    const bool pos = td[i] > 0.5;
    const double zt = pos ? zd[i] : -zd[i];
    const double at = pos ? alpha : 1.0 - alpha;
    const double q = sigmoid(-zt);  // 1 - p_t
    total += -at * std::pow(q, gamma) * log_sigmoid(zt);
  }
  return record_op("focal_loss", {}, {total / n}, {z},
                   [z, t, gamma, alpha, n](const std::vector<double>& g, const GradRefs& gin) {
                     auto& gz = *gin[0];
                     const auto zd = z.data();
                     const auto td = t.data();
                     for (std::size_t i = 0; i < zd.size(); ++i) {
                       const bool pos = td[i] > 0.5;
                       const double zt = pos ? zd[i] : -zd[i];
                       const double at = pos ? alpha : 1.0 - alpha;
                       const double q = sigmoid(-zt);
                       const double pt = sigmoid(zt);
                       const double d_zt = at * std::pow(q, gamma) * (gamma * pt * log_sigmoid(zt) - q);
                       gz[i] += g[0] / n * (pos ? d_zt : -d_zt);
                     }
                   });
}

LabelMap downsample_labels(const LabelMap& labels, std::size_t hc, std::size_t wc) {
  if (hc == 0 || wc == 0) throw ShapeError("downsample_labels: empty target size");
  LabelMap out{labels.batch, hc, wc, std::vector<std::uint8_t>(labels.batch * hc * wc)};
  for (std::size_t b = 0; b < labels.batch; ++b)
    for (std::size_t y = 0; y < hc; ++y) {
      const std::size_t sy = y * labels.height / hc;
      for (std::size_t x = 0; x < wc; ++x) {
        const std::size_t sx = x * labels.width / wc;
        out.labels[(b * hc + y) * wc + x] = labels.at(b, sy, sx);
      }
    }
  return out;
}

Tensor build_mask_targets(const LabelMap& labels, std::size_t num_categories, std::size_t hc, std::size_t wc) {
  labels.validate(num_categories);
  const LabelMap small = downsample_labels(labels, hc, wc);
  const std::size_t P = hc * wc;
  std::vector<double> onehot(labels.batch * num_categories * P, 0.0);
  for (std::size_t b = 0; b < labels.batch; ++b)
    for (std::size_t p = 0; p < P; ++p) {
      const std::uint8_t y = small.labels[b * P + p];
      if (y != kIgnoreIndex) onehot[(b * num_categories + y) * P + p] = 1.0;
    }
  return Tensor({labels.batch, num_categories, hc, wc}, std::move(onehot));
}

LossTerms total_loss(const Tensor& logits, const std::vector<core::MaskLogits>& masks, const LabelMap& labels,
                     const LossWeights& weights) {
  LossTerms terms;
  terms.ce = cross_entropy(logits, labels);
  if (masks.empty() || weights.mode == MaskLossMode::kOff) {
    terms.dice = Tensor::scalar(0.0);
    terms.focal = Tensor::scalar(0.0);
  } else {
    std::vector<Tensor> stage_logits;
    for (const auto& m : masks) stage_logits.push_back(m.logits);
    std::vector<Tensor> sums = sum_masks_orderly(stage_logits);
    if (weights.mode == MaskLossMode::kFinal) sums = {sums.back()};
    const Tensor& finest = sums.back();
    const Tensor target = build_mask_targets(labels, finest.dim(1), finest.dim(2), finest.dim(3));
    Tensor dice, focal;
    for (const Tensor& s : sums) {
      const Tensor d = dice_loss(s, target, weights.dice_smooth);
      const Tensor f = focal_loss(s, target, weights.focal_gamma, weights.focal_alpha);
      dice = dice.defined() ? ops::add(dice, d) : d;
      focal = focal.defined() ? ops::add(focal, f) : f;
    }
    const double k = 1.0 / static_cast<double>(sums.size());
    terms.dice = sums.size() == 1 ? dice : ops::scale(dice, k);
    terms.focal = sums.size() == 1 ? focal : ops::scale(focal, k);
  }
  terms.total = ops::add(ops::add(terms.ce, ops::scale(terms.dice, weights.lambda_dice)),
                         ops::scale(terms.focal, weights.lambda_focal));
  return terms;
}

}  // namespace cft::losses
