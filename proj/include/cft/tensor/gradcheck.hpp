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
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cft/tensor/tensor.hpp"

namespace cft {

inline constexpr double kFiniteDiffStep = 1e-4;

/// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h for every coordinate of x.
/// f is evaluated on perturbed copies; x itself is left untouched.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = kFiniteDiffStep);

/// Same estimate for a leaf that a closure reads implicitly (e.g. a model parameter).
/// The leaf is perturbed in place and restored bit-exactly. When `coords` is
/// given only those coordinates are estimated; the result has one entry per coordinate.
std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor& leaf,
                                             std::span<const std::size_t> coords, double h = kFiniteDiffStep);

/// |a - n| / max(|a|, |n|, floor), maximized over entries.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6);

}  // namespace cft
