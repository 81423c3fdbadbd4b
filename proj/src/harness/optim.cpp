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

#include "cft/harness/optim.hpp"

#include <cmath>

#include "cft/error.hpp"

namespace cft::harness {

double poly_lr(double baselr, std::size_t iter, std::size_t total, double power) {
  if (total == 0) throw ConfigError("poly_lr: total iterations must be >= 1");
  if (iter >= total) return 0.0;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total);
  return baselr * std::pow(frac, power);
}

AdamW::AdamW(core::NamedTensors params, AdamWOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].second;
    auto data = p.mutable_data();
    const std::vector<double> g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      data[i] *= 1.0 - lr * options_.weight_decay;
      data[i] -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace cft::harness
