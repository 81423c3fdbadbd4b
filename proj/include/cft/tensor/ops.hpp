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
#include <optional>
#include <vector>

#include "cft/tensor/tensor.hpp"

namespace cft::ops {

inline constexpr double kLayerNormEps = 1e-6;

// Linear algebra -------------------------------------------------------------

/// a[..., m, k] x b[..., k, n]. Leading (batch) extents must agree, or b may
/// be a plain 2-D matrix shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[..., in] -> x * weight^T + bias, weight is [out, in].
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

/// Per-position channel mixing of x[B, Cin, H, W] with weight[Cout, Cin].
Tensor conv1x1(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

/// Dense square-kernel convolution, x[B, Cin, H, W], weight[Cout, Cin, K, K], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t padding);

/// One 3x3 filter per channel, stride 1, zero padding 1. weight is [C, 3, 3].
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

// Normalization --------------------------------------------------------------

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Normalizes every vector along the last axis (biased variance), then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps);

// Spatial resampling (NCHW) ---------------------------------------------------

/// Bilinear interpolation with the align_corners = false convention.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Averages floor(i*H/out) .. ceil((i+1)*H/out) windows.
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);

// Elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Layout ---------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Swaps two axes, materializing the result.
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
Tensor reshape(const Tensor& x, const Shape& shape);

// Reductions -----------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Layout helpers used throughout the model code.

/// [B, C, H, W] -> [B, H*W, C]
Tensor to_tokens(const Tensor& x);
/// [B, H*W, C] -> [B, C, H, W]
Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w);

}  // namespace cft::ops
