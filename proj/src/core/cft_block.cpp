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

#include "cft/core/cft_block.hpp"

#include <cmath>

#include "cft/error.hpp"
#include "cft/tensor/ops.hpp"

namespace cft::core {

namespace {

Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_tensor(shape, -bound, bound, rng, true);
}

NormParams make_norm(std::size_t c) { return {Tensor::ones({c}, true), Tensor::zeros({c}, true)}; }

Tensor apply_norm(const Tensor& x, const NormParams& n) { return ops::layer_norm(x, n.gamma, n.beta); }

Tensor apply_linear(const Tensor& x, const LinearParams& p) { return ops::linear(x, p.weight, p.bias); }

void check_feature_map(const Tensor& t, std::size_t channels, const char* what) {
  if (t.rank() != 4) throw ShapeError(std::string(what) + " must be [B, C, H, W], got " + to_string(t.shape()));
  if (t.dim(1) != channels) {
    throw ConfigError(std::string(what) + " has " + std::to_string(t.dim(1)) + " channels, block expects " +
                      std::to_string(channels));
  }
}

void check_pair(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params) {
  check_feature_map(f_high, params.config.channels, "f_high");
  check_feature_map(x_low, params.config.channels, "x_low");
  if (f_high.dim(0) != x_low.dim(0)) throw ShapeError("f_high and x_low batch sizes differ");
}

/// Query projection, attention against prepared key/value rows, residual, FFN.
Tensor attend(const Tensor& query_src, const Tensor& residual, const Tensor& kv, std::size_t h, std::size_t w,
              const CftBlockParams& p) {
  const Tensor q = ops::linear(apply_norm(query_src, p.norm_query), p.w_q);
  const Tensor k = ops::linear(kv, p.w_k);
  const Tensor v = ops::linear(kv, p.w_v);
  const Tensor mixed = ops::add(multi_head_attention(q, k, v, p.w_o, p.config.heads), residual);
  return ops::from_tokens(feed_forward(mixed, h, w, p), h, w);
}

/// Normalized key/value rows from a feature map pooled to pool_h x pool_w.
Tensor pooled_kv(const Tensor& x, const CftBlockParams& p, std::size_t pool_h, std::size_t pool_w) {
  return apply_norm(ops::to_tokens(ops::adaptive_avg_pool(x, pool_h, pool_w)), p.norm_embed);
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kCft: return "cft";
    case Variant::kNaive: return "naive";
    case Variant::kAvgPool: return "avgpool";
    case Variant::kA: return "a";
    case Variant::kB: return "b";
    case Variant::kC: return "c";
    case Variant::kNone: return "none";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants())
    if (to_string(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected cft|naive|avgpool|a|b|c|none)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::kCft, Variant::kNaive, Variant::kAvgPool, Variant::kA,
                                         Variant::kB,   Variant::kC,     Variant::kNone};
  return v;
}

CftBlockParams CftBlockParams::init(const BlockConfig& config, bool with_embedding, Rng& rng) {
  const std::size_t C = config.channels;
  if (C == 0 || config.heads == 0 || C % config.heads != 0) {
    throw ConfigError("channels (" + std::to_string(C) + ") must be a positive multiple of heads (" +
                      std::to_string(config.heads) + ")");
  }
  if (with_embedding && config.categories < 1) throw ConfigError("number of categories must be >= 1");
  if (config.ffn_ratio < 1) throw ConfigError("ffn ratio must be >= 1");
  const std::size_t E = C * config.ffn_ratio;

  CftBlockParams p;
  p.config = config;
  p.has_embedding = with_embedding;
  p.norm_embed = make_norm(C);
  if (with_embedding) {
    p.phi_m = {fan_in_uniform({config.categories, C}, C, rng), Tensor::zeros({config.categories}, true)};
    p.phi_f = {fan_in_uniform({C, C}, C, rng), Tensor::zeros({C}, true)};
  }
  p.norm_query = make_norm(C);
  p.w_q = fan_in_uniform({C, C}, C, rng);
  p.w_k = fan_in_uniform({C, C}, C, rng);
  p.w_v = fan_in_uniform({C, C}, C, rng);
  p.w_o = Tensor::zeros({C, C}, true);
  p.norm_ffn = make_norm(C);
  p.ffn_expand = {fan_in_uniform({E, C}, C, rng), Tensor::zeros({E}, true)};
  p.ffn_dw = {fan_in_uniform({E, 3, 3}, 9, rng), Tensor::zeros({E}, true)};
  p.ffn_project = {Tensor::zeros({C, E}, true), Tensor::zeros({C}, true)};
  return p;
}

NamedTensors CftBlockParams::named_parameters(const std::string& prefix) const {
  NamedTensors out;
  auto put = [&](const std::string& name, const Tensor& t) { out.emplace_back(prefix + name, t); };
  put("norm_embed.gamma", norm_embed.gamma);
  put("norm_embed.beta", norm_embed.beta);
  if (has_embedding) {
    put("phi_m.weight", phi_m.weight);
    put("phi_m.bias", phi_m.bias);
    put("phi_f.weight", phi_f.weight);
    put("phi_f.bias", phi_f.bias);
  }
  put("norm_query.gamma", norm_query.gamma);
  put("norm_query.beta", norm_query.beta);
  put("w_q", w_q);
  put("w_k", w_k);
  put("w_v", w_v);
  put("w_o", w_o);
  put("norm_ffn.gamma", norm_ffn.gamma);
  put("norm_ffn.beta", norm_ffn.beta);
  put("ffn_expand.weight", ffn_expand.weight);
  put("ffn_expand.bias", ffn_expand.bias);
  put("ffn_dw.weight", ffn_dw.weight);
  put("ffn_dw.bias", ffn_dw.bias);
  put("ffn_project.weight", ffn_project.weight);
  put("ffn_project.bias", ffn_project.bias);
  return out;
}

std::size_t CftBlockParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters("")) n += t.numel();
  return n;
}

void CftBlockParams::zero_output_paths() {
  for (Tensor t : {w_o, ffn_project.weight, ffn_project.bias})
    for (double& v : t.mutable_data()) v = 0.0;
}

EmbeddingResult category_feature_embedding(const Tensor& f_high, const CftBlockParams& params) {
  if (!params.has_embedding) throw ConfigError("block has no category embedding heads");
  check_feature_map(f_high, params.config.channels, "f_high");
  const std::size_t B = f_high.dim(0), hs = f_high.dim(2), ws = f_high.dim(3);
  const std::size_t L = params.config.categories;

  const Tensor normed = apply_norm(ops::to_tokens(f_high), params.norm_embed);  // [B, N, C]
  const Tensor mask_rows = ops::transpose(apply_linear(normed, params.phi_m), 1, 2);  // [B, L, N]
  const Tensor aligned = apply_linear(normed, params.phi_f);                         // [B, N, C]
  const Tensor weights = ops::softmax(mask_rows, 2);
  const Tensor j = ops::matmul(weights, aligned);  // [B, L, C]

  EmbeddingResult r;
  r.embedding = {j, 0};
  r.masks = {ops::reshape(mask_rows, {B, L, hs, ws}), 0};
  r.normalized_masks = weights;
  return r;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& w_o,
                            std::size_t heads) {
  if (q.rank() == 2) {
    const Tensor out = multi_head_attention(ops::reshape(q, {1, q.dim(0), q.dim(1)}),
                                            ops::reshape(k, {1, k.dim(0), k.dim(1)}),
                                            ops::reshape(v, {1, v.dim(0), v.dim(1)}), w_o, heads);
    return ops::reshape(out, {q.dim(0), q.dim(1)});
  }
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) throw ShapeError("multi_head_attention: expected [B, N, C]");
  const std::size_t C = q.dim(2);
  if (heads == 0 || C % heads != 0) {
    throw ConfigError("multi_head_attention: " + std::to_string(C) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (k.shape() != v.shape() || k.dim(2) != C || k.dim(0) != q.dim(0)) {
    throw ShapeError("multi_head_attention: key/value shapes " + to_string(k.shape()) + ", " +
                     to_string(v.shape()) + " do not match query " + to_string(q.shape()));
  }
  const std::size_t dh = C / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = ops::slice(q, 2, h * dh, dh);
    const Tensor kh = ops::slice(k, 2, h * dh, dh);
    const Tensor vh = ops::slice(v, 2, h * dh, dh);
    const Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh, 1, 2)), inv_scale);
    per_head.push_back(ops::matmul(ops::softmax(scores, 2), vh));
  }
  const Tensor joined = heads == 1 ? per_head.front() : ops::concat(per_head, 2);
  return ops::linear(joined, w_o);
}

Tensor feed_forward(const Tensor& tokens, std::size_t h, std::size_t w, const CftBlockParams& params) {
  const Tensor expanded = apply_linear(apply_norm(tokens, params.norm_ffn), params.ffn_expand);
  const Tensor spatial = ops::from_tokens(expanded, h, w);
  const Tensor mixed = ops::gelu(ops::depthwise_conv3x3(spatial, params.ffn_dw.weight, params.ffn_dw.bias));
  return ops::add(apply_linear(ops::to_tokens(mixed), params.ffn_project), tokens);
}

Tensor category_feature_transformation(const Tensor& x_low, const CategoryEmbedding& embedding,
                                       const CftBlockParams& params) {
  check_feature_map(x_low, params.config.channels, "x_low");
  const Tensor& j = embedding.matrix;
  if (j.rank() != 3 || j.dim(2) != params.config.channels || j.dim(0) != x_low.dim(0)) {
    throw ConfigError("category embedding " + to_string(j.shape()) + " does not match block width " +
                      std::to_string(params.config.channels));
  }
  const Tensor x = ops::to_tokens(x_low);
  return attend(x, x, j, x_low.dim(2), x_low.dim(3), params);
}

BlockOutput cft_block(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params) {
  check_pair(f_high, x_low, params);
  EmbeddingResult e = category_feature_embedding(f_high, params);
  BlockOutput out;
  out.features = category_feature_transformation(x_low, e.embedding, params);
  out.masks = e.masks;
  return out;
}

Tensor variant_naive(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params) {
  check_pair(f_high, x_low, params);
  const Tensor kv = apply_norm(ops::to_tokens(f_high), params.norm_embed);
  const Tensor x = ops::to_tokens(x_low);
  return attend(x, x, kv, x_low.dim(2), x_low.dim(3), params);
}

Tensor variant_avgpool(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params, std::size_t pool_h,
                       std::size_t pool_w) {
  check_pair(f_high, x_low, params);
  const Tensor kv = pooled_kv(f_high, params, pool_h, pool_w);
  const Tensor x = ops::to_tokens(x_low);
  return attend(x, x, kv, x_low.dim(2), x_low.dim(3), params);
}

Tensor variant_a(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params, std::size_t pool_h,
                 std::size_t pool_w) {
  check_pair(f_high, x_low, params);
  const std::size_t h = x_low.dim(2), w = x_low.dim(3);
  const Tensor summed = ops::add(ops::bilinear_resize(f_high, h, w), x_low);
  const Tensor s = ops::to_tokens(summed);
  return attend(s, s, pooled_kv(summed, params, pool_h, pool_w), h, w, params);
}

Tensor variant_b(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params, std::size_t pool_h,
                 std::size_t pool_w) {
  check_pair(f_high, x_low, params);
  const std::size_t h = x_low.dim(2), w = x_low.dim(3);
  const Tensor up = ops::to_tokens(ops::bilinear_resize(f_high, h, w));
  return attend(up, ops::to_tokens(x_low), pooled_kv(x_low, params, pool_h, pool_w), h, w, params);
}

Tensor variant_c(const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params, std::size_t pool_h,
                 std::size_t pool_w) {
  check_pair(f_high, x_low, params);
  const std::size_t h = x_low.dim(2), w = x_low.dim(3);
  const std::size_t hs = f_high.dim(2), ws = f_high.dim(3);
  const Tensor q = ops::linear(apply_norm(ops::to_tokens(f_high), params.norm_query), params.w_q);
  const Tensor kv = pooled_kv(x_low, params, pool_h, pool_w);
  const Tensor attended = multi_head_attention(q, ops::linear(kv, params.w_k), ops::linear(kv, params.w_v),
                                               params.w_o, params.config.heads);
  const Tensor up = ops::bilinear_resize(ops::from_tokens(attended, hs, ws), h, w);
  const Tensor mixed = ops::to_tokens(ops::add(up, x_low));
  return ops::from_tokens(feed_forward(mixed, h, w, params), h, w);
}

BlockOutput aggregate(Variant variant, const Tensor& f_high, const Tensor& x_low, const CftBlockParams& params,
                      std::size_t pool_h, std::size_t pool_w) {
  switch (variant) {
    case Variant::kCft: return cft_block(f_high, x_low, params);
    case Variant::kNaive: return {variant_naive(f_high, x_low, params), std::nullopt};
    case Variant::kAvgPool: return {variant_avgpool(f_high, x_low, params, pool_h, pool_w), std::nullopt};
    case Variant::kA: return {variant_a(f_high, x_low, params, pool_h, pool_w), std::nullopt};
    case Variant::kB: return {variant_b(f_high, x_low, params, pool_h, pool_w), std::nullopt};
    case Variant::kC: return {variant_c(f_high, x_low, params, pool_h, pool_w), std::nullopt};
    case Variant::kNone: return {x_low, std::nullopt};
  }
  throw ConfigError("unhandled variant");
}

}  // namespace cft::core
