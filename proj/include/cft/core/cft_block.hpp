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
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cft/tensor/random.hpp"
#include "cft/tensor/tensor.hpp"

namespace cft::core {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// How adjacent pyramid stages are fused.
enum class Variant {
  kCft,      // category embeddings as key/value (the default)
  kNaive,    // every pixel of the higher stage as key/value
  kAvgPool,  // higher stage pooled to the coarsest pyramid size as key/value
  kA,        // upsample + sum, then pooled self-attention
  kB,        // upsampled higher stage as query, pooled lower stage as key/value
  kC,        // like kB but attention at the higher stage's resolution, upsampled afterwards
  kNone,     // no fusion: F_i = X_i
};

using cft::to_string;
std::string_view to_string(Variant v);
/// Accepts cft, naive, avgpool, a, b, c, none.
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

struct LinearParams {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
};

struct BlockConfig {
  std::size_t channels = 256;
  std::size_t heads = 4;
  std::size_t categories = 150;
  std::size_t ffn_ratio = 4;
};

/// Learnable weights of one aggregation block.
///
/// phi_m / phi_f only exist for Variant::kCft. w_q..w_o are bias-free [C, C]
/// matrices applied to token rows. w_o and ffn_project start at zero so a
/// fresh block is the identity on its lower-stage input.
struct CftBlockParams {
  BlockConfig config;
  bool has_embedding = true;

  LinearParams phi_m;  // C -> L mask head
  LinearParams phi_f;  // C -> C feature head
  Tensor w_q, w_k, w_v, w_o;
  LinearParams ffn_expand;   // C -> ratio*C
  LinearParams ffn_dw;       // weight [ratio*C, 3, 3], bias [ratio*C]
  LinearParams ffn_project;  // ratio*C -> C
  NormParams norm_embed;     // before phi_m/phi_f, or before key/value projection in the other variants
  NormParams norm_query;
  NormParams norm_ffn;

  static CftBlockParams init(const BlockConfig& config, bool with_embedding, Rng& rng);

  std::size_t head_dim() const { return config.channels / config.heads; }
  NamedTensors named_parameters(const std::string& prefix) const;
  std::size_t parameter_count() const;
  /// Zeroes w_o and the FFN projection (weight and bias).
  void zero_output_paths();
};

/// Unified per-category features, [B, L, C].
struct CategoryEmbedding {
  Tensor matrix;
  int stage = 0;
};

/// Raw mask logits [B, L, Hs, Ws] of the stage the embedding was computed from.
struct MaskLogits {
  Tensor logits;
  int stage = 0;
};

struct EmbeddingResult {
  CategoryEmbedding embedding;
  MaskLogits masks;
  Tensor normalized_masks;  // [B, L, Hs*Ws], each row sums to one
};

/// Norm -> (phi_m, phi_f) -> spatial softmax per category -> masks x features.
EmbeddingResult category_feature_embedding(const Tensor& f_high, const CftBlockParams& params);

/// Pixels of x_low attend to the L category rows, then a pre-norm
/// depthwise-convolution FFN; both with residuals.
Tensor category_feature_transformation(const Tensor& x_low, const CategoryEmbedding& embedding,
                                       const CftBlockParams& params);

/// Per-head scaled dot-product attention over channel-contiguous head slices,
/// concatenated and projected by w_o. q is [B, Nq, C] (or [Nq, C]), k/v [B, Nk, C].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& w_o,
                            std::size_t heads);

struct BlockOutput {
  Tensor features;                 // [B, C, Hi, Wi]
  std::optional<MaskLogits> masks;  // only for Variant::kCft
};

/// F_i = block(F_{i+1}, X_i). No resampling is applied on the way.
BlockOutput cft_block(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params);

Tensor variant_naive(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params);
Tensor variant_avgpool(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params, std::size_t pool_h,
                       std::size_t pool_w);
Tensor variant_a(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params, std::size_t pool_h,
                 std::size_t pool_w);
Tensor variant_b(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params, std::size_t pool_h,
                 std::size_t pool_w);
Tensor variant_c(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params, std::size_t pool_h,
                 std::size_t pool_w);

/// Dispatches on `variant`; pooled variants shrink key/value to pool_h x pool_w.
BlockOutput aggregate(Variant variant, const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params,
                      std::size_t pool_h, std::size_t pool_w);

/// Pre-norm FFN with residual on token rows [B, h*w, C].
Tensor feed_forward(const Tensor& tokens, std::size_t h, std::size_t w, const CftBlockParams& params);

}  // namespace cft::core
