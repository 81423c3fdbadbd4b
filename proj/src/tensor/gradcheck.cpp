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

#include "cft/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cft/error.hpp"

namespace cft {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  const auto base = x.data();
  std::vector<double> grad(base.size());
  for (std::size_t j = 0; j < base.size(); ++j) {
    std::vector<double> plus(base.begin(), base.end());
    std::vector<double> minus(base.begin(), base.end());
    plus[j] += h;
    minus[j] -= h;
    const double fp = f(Tensor(x.shape(), std::move(plus)));
    const double fm = f(Tensor(x.shape(), std::move(minus)));
    grad[j] = (fp - fm) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& leaf,
                                             std::span<const std::size_t> coords, double h) {
  auto data = leaf.mutable_data();
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t j : coords) {
    if (j >= data.size()) throw UsageError("finite_diff_grad_inplace: coordinate out of range");
    const double saved = data[j];
    data[j] = saved + h;
    const double fp = f();
    data[j] = saved - h;
    const double fm = f();
    data[j] = saved;
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    const double rel = std::abs(a - n) / denom;
    if (std::isnan(rel)) return rel;
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace cft
