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

#include "cft/harness/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "cft/error.hpp"
#include "cft/losses/losses.hpp"
#include "cft/pipeline/model.hpp"
#include "cft/tensor/gradcheck.hpp"
#include "cft/tensor/ops.hpp"
#include "cft/tensor/random.hpp"
#include "cft/tensor/tape.hpp"

namespace cft::harness {

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> coords;
  if (cap == 0 || cap >= n) {
    for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
  } else {
    for (std::size_t k = 0; k < cap; ++k) coords.push_back(k * n / cap);
  }
  return coords;
}

void randomize(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
}

losses::LabelMap random_labels(std::size_t b, std::size_t h, std::size_t w, std::size_t L, Rng& rng) {
  losses::LabelMap m{b, h, w, std::vector<std::uint8_t>(b * h * w)};
  for (auto& v : m.labels) v = static_cast<std::uint8_t>(rng.index(L));
  m.labels[1] = losses::kIgnoreIndex;
  return m;
}

}  // namespace

bool GradCheckReport::passed() const {
  for (const auto& e : entries)
    if (!e.passed) return false;
  return !entries.empty();
}

const GradCheckEntry* GradCheckReport::find(const std::string& group) const {
  for (const auto& e : entries)
    if (e.group == group) return &e;
  return nullptr;
}

std::string GradCheckReport::csv() const {
  std::string out = "group,max_rel_error,tolerance,coordinates,passed\n";
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%s,%.3e,%.0e,%zu,%s\n", e.group.c_str(), e.max_rel_error, e.tolerance,
                  e.coordinates, e.passed ? "true" : "false");
    out += buf;
  }
  return out;
}

GradCheckEntry check_leaves(const std::string& group, const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                            double tolerance, std::size_t max_coords_per_tensor) {
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw UsageError("check_leaves: leaf in group '" + group + "' does not require grad");
    leaf.zero_grad();
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(loss());
  }
  GradCheckEntry e;
  e.group = group;
  e.tolerance = tolerance;
  const std::function<double()> f = [&] { return loss().item(); };
  for (auto& leaf : leaves) {
    const std::vector<double> grad = leaf.grad();
    const auto coords = pick_coords(leaf.numel(), max_coords_per_tensor);
    const std::vector<double> numeric = finite_diff_grad_inplace(f, leaf, coords);
    std::vector<double> analytic;
    analytic.reserve(coords.size());
    for (std::size_t j : coords) analytic.push_back(grad[j]);
    const double err = max_relative_error(analytic, numeric);
    if (!(err <= e.max_rel_error)) e.max_rel_error = err;
    e.coordinates += coords.size();
    leaf.zero_grad();
  }
  e.passed = e.max_rel_error < tolerance;
  return e;
}

GradCheckReport run_gradcheck_suite(const GradCheckOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report;
  Rng rng(options.seed);
  const double tol = options.tolerance;
  const std::size_t cap = options.max_coords_per_tensor;

  // Miniature model. Every parameter is randomized so no gradient path is trivially zero.
  pipeline::ModelConfig mc;
  mc.num_categories = 3;
  mc.channels = 8;
  mc.heads = 2;
  mc.ffn_ratio = 2;
  mc.backbone_widths = {4, 4, 8, 8};
  mc.input_size = 32;
  mc.variant = core::Variant::kCft;
  pipeline::Model model = pipeline::Model::init(mc, options.seed);
  for (auto& [name, t] : model.named_parameters()) {
    Tensor handle = t;
    randomize(handle, 0.5, rng);
  }
  const Tensor image = uniform_tensor({1, 3, 32, 32}, 0.0, 1.0, rng);
  const losses::LabelMap labels = random_labels(1, 32, 32, mc.num_categories, rng);
  const auto model_loss = [&] {
    const pipeline::ForwardResult r = pipeline::forward(image, model);
    return losses::total_loss(r.logits, r.masks, labels).total;
  };
  std::map<std::string, std::vector<Tensor>> groups;
  std::vector<std::string> order;
  for (const auto& [name, t] : model.named_parameters()) {
    std::string g = name.substr(0, name.find('.'));
    if (g.rfind("lateral", 0) == 0) g = "lateral";
    if (!groups.count(g)) order.push_back(g);
    groups[g].push_back(t);
  }
  for (const auto& g : order)
    report.entries.push_back(check_leaves("model." + g, model_loss, groups[g], tol, cap));

  // Each loss term against its own inputs.
  const std::size_t L = 3;
  Tensor logits = uniform_tensor({2, L, 6, 6}, -2.0, 2.0, rng, true);
  const losses::LabelMap lab = random_labels(2, 6, 6, L, rng);
  report.entries.push_back(check_leaves(
      "loss.ce", [&] { return losses::cross_entropy(logits, lab); }, {logits}, tol, cap));
  const Tensor target = losses::build_mask_targets(lab, L, 6, 6);
  report.entries.push_back(check_leaves(
      "loss.dice", [&] { return losses::dice_loss(logits, target); }, {logits}, tol, cap));
  report.entries.push_back(check_leaves(
      "loss.focal", [&] { return losses::focal_loss(logits, target); }, {logits}, tol, cap));
  std::vector<core::MaskLogits> masks = {{uniform_tensor({2, L, 2, 2}, -2.0, 2.0, rng, true), 4},
                                         {uniform_tensor({2, L, 3, 3}, -2.0, 2.0, rng, true), 3},
                                         {uniform_tensor({2, L, 6, 6}, -2.0, 2.0, rng, true), 2}};
  report.entries.push_back(check_leaves(
      "loss.total", [&] { return losses::total_loss(logits, masks, lab).total; },
      {logits, masks[0].logits, masks[1].logits, masks[2].logits}, tol, cap));

  // Linear-only model: central differences are exact up to rounding.
  Tensor x = uniform_tensor({5, 4}, -1.0, 1.0, rng);
  Tensor w = uniform_tensor({3, 4}, -1.0, 1.0, rng, true);
  Tensor b = uniform_tensor({3}, -1.0, 1.0, rng, true);
  const Tensor c = uniform_tensor({5, 3}, -1.0, 1.0, rng);
  report.entries.push_back(check_leaves(
      "linear_model", [&] { return ops::sum(ops::mul(ops::linear(x, w, b), c)); }, {w, b}, 1e-10, 0));

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace cft::harness
