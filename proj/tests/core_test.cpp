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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cft/core/cft_block.hpp"
#include "cft/error.hpp"
#include "cft/tensor/gradcheck.hpp"
#include "cft/tensor/ops.hpp"
#include "cft/tensor/tape.hpp"
#include "test_util.hpp"

using namespace cft;
using namespace cft::core;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

CftBlockParams random_block(std::size_t C, std::size_t heads, std::size_t L, bool embed, std::uint64_t seed,
                            std::size_t ffn_ratio = 4) {
  Rng rng(seed);
  CftBlockParams p = CftBlockParams::init({C, heads, L, ffn_ratio}, embed, rng);
  for (auto& [name, t] : p.named_parameters("")) {
    Tensor h = t;
    for (double& v : h.mutable_data()) v = rng.uniform(-0.6, 0.6);
  }
  return p;
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// [L, N] rows of a [B, L, N] tensor for sample b.
double at3(const Tensor& t, std::size_t b, std::size_t i, std::size_t j) {
  return t.data()[(b * t.dim(1) + i) * t.dim(2) + j];
}

}  // namespace

TEST(BlockParams, HeadWidthAndDivisibility) {
  Rng rng(0);
  const auto p = CftBlockParams::init({256, 4, 150, 4}, true, rng);
  EXPECT_EQ(p.head_dim(), 64u);
  EXPECT_THROW(CftBlockParams::init({10, 4, 3, 4}, true, rng), ConfigError);
  EXPECT_EQ(p.ffn_expand.weight.shape(), (Shape{1024, 256}));
  EXPECT_EQ(p.ffn_dw.weight.shape(), (Shape{1024, 3, 3}));
}

TEST(Variant, NamesRoundTrip) {
  for (Variant v : all_variants()) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("fpn"), ConfigError);
}

TEST(Embedding, ZeroMaskHeadGivesSpatialMean) {
  auto p = random_block(4, 2, 3, true, 1);
  for (double& v : p.phi_m.weight.mutable_data()) v = 0.0;
  for (double& v : p.phi_m.bias.mutable_data()) v = 0.0;
  Rng rng(2);
  const Tensor f = random_tensor({1, 4, 3, 2}, rng);
  const auto e = category_feature_embedding(f, p);
  const auto ref = oracle::embed(oracle::sample(f, 0), p);
  // Mean of the aligned features over positions.
  const oracle::Mat aligned = oracle::linear(
      oracle::layer_norm(oracle::tokens(oracle::sample(f, 0)), p.norm_embed.gamma, p.norm_embed.beta),
      p.phi_f.weight, &p.phi_f.bias);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t c = 0; c < 4; ++c) {
      double mean = 0.0;
      for (std::size_t n = 0; n < 6; ++n) mean += aligned.at(n, c) / 6.0;
      EXPECT_NEAR(at3(e.embedding.matrix, 0, l, c), mean, 1e-14);
    }
  EXPECT_LT(max_abs_diff(e.embedding.matrix, ref.j.v), 1e-14);
}

TEST(Embedding, SinglePositionRowsEqualAlignedVector) {
  const auto p = random_block(4, 2, 3, true, 3);
  Rng rng(4);
  const Tensor f = random_tensor({2, 4, 1, 1}, rng);
  const auto e = category_feature_embedding(f, p);
  for (std::size_t b = 0; b < 2; ++b) {
    const oracle::Mat aligned = oracle::linear(
        oracle::layer_norm(oracle::tokens(oracle::sample(f, b)), p.norm_embed.gamma, p.norm_embed.beta),
        p.phi_f.weight, &p.phi_f.bias);
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(at3(e.embedding.matrix, b, l, c), aligned.at(0, c), 1e-15);
  }
}

TEST(Embedding, HandSetWeightedAverage) {
  // L = 2, C = 2, N = 3. Norm is made the identity map by choosing rows with
  // mean 0 and variance 1 (x = [-1, 1] or [1, -1]); heads are set by hand.
  CftBlockParams p = random_block(2, 1, 2, true, 5);
  for (double& v : p.norm_embed.gamma.mutable_data()) v = 1.0;
  for (double& v : p.norm_embed.beta.mutable_data()) v = 0.0;
  auto set = [](Tensor& t, std::vector<double> v) { std::copy(v.begin(), v.end(), t.mutable_data().begin()); };
  set(p.phi_m.weight, {1.0, 0.0, 0.0, 2.0});
  set(p.phi_m.bias, {0.0, 0.5});
  set(p.phi_f.weight, {1.0, 0.0, 0.0, 1.0});
  set(p.phi_f.bias, {0.0, 0.0});
  // positions: n0 = [-1, 1], n1 = [1, -1], n2 = [-1, 1]   (layout [C, 1, N])
  const Tensor f({1, 2, 1, 3}, {-1.0, 1.0, -1.0, 1.0, -1.0, 1.0});
  const auto e = category_feature_embedding(f, p);
  const double k = 1.0 / std::sqrt(1.0 + 1e-6);  // normalized magnitude
  // category 0 logits = x0 * k, category 1 logits = 2 x1 k + 0.5
  const double z0[3] = {-k, k, -k}, z1[3] = {2 * k + 0.5, -2 * k + 0.5, 2 * k + 0.5};
  const double feat0[3] = {-k, k, -k}, feat1[3] = {k, -k, k};
  for (int l = 0; l < 2; ++l) {
    const double* z = l == 0 ? z0 : z1;
    double s = 0.0;
    for (int n = 0; n < 3; ++n) s += std::exp(z[n]);
    double j0 = 0.0, j1 = 0.0;
    for (int n = 0; n < 3; ++n) {
      j0 += std::exp(z[n]) / s * feat0[n];
      j1 += std::exp(z[n]) / s * feat1[n];
    }
    EXPECT_NEAR(at3(e.embedding.matrix, 0, l, 0), j0, 1e-12);
    EXPECT_NEAR(at3(e.embedding.matrix, 0, l, 1), j1, 1e-12);
  }
  // Closed form for category 0: k (e^k - 2 e^-k) / (e^k + 2 e^-k), frozen.
  EXPECT_NEAR(at3(e.embedding.matrix, 0, 0, 0), 0.573971462060, 1e-11);
  EXPECT_NEAR(at3(e.embedding.matrix, 0, 0, 1), -0.573971462060, 1e-11);
}

TEST(Embedding, MaskShapesAndStageField) {
  const auto p = random_block(8, 2, 5, true, 6);
  Rng rng(7);
  const auto e = category_feature_embedding(random_tensor({2, 8, 3, 4}, rng), p);
  EXPECT_EQ(e.masks.logits.shape(), (Shape{2, 5, 3, 4}));
  EXPECT_EQ(e.embedding.matrix.shape(), (Shape{2, 5, 8}));
  EXPECT_EQ(e.normalized_masks.shape(), (Shape{2, 5, 12}));
}

TEST(Embedding, ChannelMismatchIsConfigError) {
  const auto p = random_block(8, 2, 5, true, 6);
  EXPECT_THROW(category_feature_embedding(Tensor::zeros({1, 4, 2, 2}), p), ConfigError);
  const auto no_embed = random_block(8, 2, 5, false, 6);
  EXPECT_THROW(category_feature_embedding(Tensor::zeros({1, 8, 2, 2}), no_embed), ConfigError);
}

TEST(Embedding, NormalizedMasksSumToOne) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto p = random_block(8, 2, 4, true, 100 + trial);
    Rng rng(200 + trial);
    const Tensor f = random_tensor({2, 8, 3, 5}, rng, false, -5.0, 5.0);
    const auto e = category_feature_embedding(f, p);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t l = 0; l < 4; ++l) {
        double s = 0.0;
        for (std::size_t n = 0; n < 15; ++n) s += at3(e.normalized_masks, b, l, n);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Embedding, RowsInConvexHullOfAlignedFeatures) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto p = random_block(6, 2, 4, true, 300 + trial);
    Rng rng(400 + trial);
    const Tensor f = random_tensor({1, 6, 4, 3}, rng, false, -3.0, 3.0);
    const auto e = category_feature_embedding(f, p);
    const oracle::Mat aligned = oracle::linear(
        oracle::layer_norm(oracle::tokens(oracle::sample(f, 0)), p.norm_embed.gamma, p.norm_embed.beta),
        p.phi_f.weight, &p.phi_f.bias);
    for (std::size_t c = 0; c < 6; ++c) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t n = 0; n < 12; ++n) lo = std::min(lo, aligned.at(n, c)), hi = std::max(hi, aligned.at(n, c));
      for (std::size_t l = 0; l < 4; ++l) {
        EXPECT_GE(at3(e.embedding.matrix, 0, l, c), lo - 1e-12);
        EXPECT_LE(at3(e.embedding.matrix, 0, l, c), hi + 1e-12);
      }
    }
  }
}

TEST(Embedding, InvariantToSpatialPermutation) {
  const auto p = random_block(8, 2, 4, true, 9);
  Rng rng(10);
  const Tensor f = random_tensor({1, 8, 4, 4}, rng);
  const auto base = category_feature_embedding(f, p);
  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 16; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<double> moved(f.numel());
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t n = 0; n < 16; ++n) moved[c * 16 + n] = f.data()[c * 16 + perm[n]];
  const auto e = category_feature_embedding(Tensor({1, 8, 4, 4}, moved), p);
  EXPECT_LT(max_abs_diff(e.embedding.matrix, vec(base.embedding.matrix)), 1e-9);
}

TEST(Attention, SingleKeyBroadcastsValueThroughOutput) {
  Rng rng(11);
  const Tensor q = random_tensor({5, 4}, rng), k = random_tensor({1, 1, 4}, rng), v = random_tensor({1, 1, 4}, rng);
  const Tensor w_o = random_tensor({4, 4}, rng);
  const Tensor out = multi_head_attention(q, ops::reshape(k, {1, 4}), ops::reshape(v, {1, 4}), w_o, 2);
  const Tensor row = ops::linear(ops::reshape(v, {1, 4}), w_o);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at({i, c}), row.at({0, c}), 1e-15);
}

TEST(Attention, SingleHeadIdentityOutputIsClassicAttention) {
  Rng rng(12);
  const Tensor q = random_tensor({5, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 4}, rng);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  const Tensor out = multi_head_attention(q, k, v, Tensor({4, 4}, eye), 1);
  auto mat = [](const Tensor& t) {
    return oracle::Mat{t.dim(0), t.dim(1), std::vector<double>(t.data().begin(), t.data().end())};
  };
  EXPECT_LT(max_abs_diff(out, oracle::attention(mat(q), mat(k), mat(v)).v), 1e-14);
}

TEST(Attention, FourHeadsEqualIndependentSlices) {
  Rng rng(13);
  const Tensor q = random_tensor({2, 6, 8}, rng), k = random_tensor({2, 3, 8}, rng), v = random_tensor({2, 3, 8}, rng);
  std::vector<double> eye(64, 0.0);
  for (int i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  const Tensor joined = multi_head_attention(q, k, v, Tensor({8, 8}, eye), 4);
  for (std::size_t h = 0; h < 4; ++h) {
    std::vector<double> e2(4, 0.0);
    e2[0] = e2[3] = 1.0;
    const Tensor single = multi_head_attention(ops::slice(q, 2, 2 * h, 2), ops::slice(k, 2, 2 * h, 2),
                                               ops::slice(v, 2, 2 * h, 2), Tensor({2, 2}, e2), 1);
    EXPECT_LT(max_abs_diff(ops::slice(joined, 2, 2 * h, 2), vec(single)), 1e-10);
  }
  EXPECT_THROW(multi_head_attention(q, k, v, Tensor({8, 8}, eye), 3), ConfigError);
}

TEST(Transformation, SingleCategoryBroadcastsBeforeResidual) {
  auto p = random_block(4, 2, 1, true, 14);
  for (Tensor t : {p.ffn_project.weight, p.ffn_project.bias})
    for (double& v : t.mutable_data()) v = 0.0;
  Rng rng(15);
  const Tensor x = random_tensor({1, 4, 3, 3}, rng);
  const Tensor j = random_tensor({1, 1, 4}, rng);
  const Tensor out = category_feature_transformation(x, {j, 2}, p);
  // out - x is the same vector at every pixel.
  const Tensor delta = ops::sub(out, x);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t n = 1; n < 9; ++n) EXPECT_NEAR(delta.data()[c * 9 + n], delta.data()[c * 9], 1e-14);
}

TEST(Transformation, ZeroPathsReturnInputExactly) {
  auto p = random_block(8, 2, 3, true, 16);
  p.zero_output_paths();
  Rng rng(17);
  const Tensor x = random_tensor({2, 8, 4, 4}, rng);
  const Tensor out = category_feature_transformation(x, {random_tensor({2, 3, 8}, rng), 2}, p);
  EXPECT_EQ(vec(out), vec(x));
}

TEST(Transformation, SingleHeadMatchesLoopOracle) {
  const auto p = random_block(4, 1, 3, true, 18);
  Rng rng(19);
  const Tensor x = random_tensor({1, 4, 3, 4}, rng), j = random_tensor({1, 3, 4}, rng);
  const Tensor out = category_feature_transformation(x, {j, 2}, p);
  const oracle::Mat jm{3, 4, vec(j)};
  // attention + residual + FFN via oracle pieces
  const oracle::Mat xt = oracle::tokens(oracle::sample(x, 0));
  const oracle::Mat q = oracle::linear(oracle::layer_norm(xt, p.norm_query.gamma, p.norm_query.beta), p.w_q, nullptr);
  oracle::Mat att = oracle::linear(
      oracle::attention(q, oracle::linear(jm, p.w_k, nullptr), oracle::linear(jm, p.w_v, nullptr)), p.w_o, nullptr);
  for (std::size_t i = 0; i < att.v.size(); ++i) att.v[i] += xt.v[i];
  const auto ref = oracle::untokens(oracle::ffn(att, 3, 4, p), 3, 4);
  EXPECT_LT(max_abs_diff(out, ref.v), 1e-12);
}

TEST(Transformation, QueryLocalityWithoutFfn) {
  auto p = random_block(8, 2, 3, true, 20);
  for (Tensor t : {p.ffn_project.weight, p.ffn_project.bias})
    for (double& v : t.mutable_data()) v = 0.0;
  Rng rng(21);
  const Tensor x = random_tensor({1, 8, 4, 4}, rng);
  const Tensor j = random_tensor({1, 3, 8}, rng);
  const Tensor a = category_feature_transformation(x, {j, 2}, p);
  Tensor x2 = x.detach();
  const std::size_t pos = 5;
  for (std::size_t c = 0; c < 8; ++c) x2.mutable_data()[c * 16 + pos] += 0.3 * (c + 1);
  const Tensor b = category_feature_transformation(x2, {j, 2}, p);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t n = 0; n < 16; ++n) {
      if (n == pos) continue;
      EXPECT_EQ(a.data()[c * 16 + n], b.data()[c * 16 + n]);
    }
}

TEST(Block, ZeroPathsIdentityAndShapeContract) {
  Rng rng(22);
  CftBlockParams p = CftBlockParams::init({8, 2, 3, 4}, true, rng);  // fresh init: w_o, projection zero
  for (std::size_t hs : {1u, 2u, 5u}) {
    const Tensor f = random_tensor({2, 8, hs, hs + 1}, rng), x = random_tensor({2, 8, 6, 6}, rng);
    const auto out = cft_block(f, x, p);
    EXPECT_EQ(vec(out.features), vec(x));
    EXPECT_EQ(out.masks->logits.shape(), (Shape{2, 3, hs, hs + 1}));
  }
}

TEST(Block, MatchesComposedOracles) {
  const auto p = random_block(8, 2, 3, true, 23);
  Rng rng(24);
  const Tensor f = random_tensor({2, 8, 3, 3}, rng), x = random_tensor({2, 8, 6, 6}, rng);
  const auto out = cft_block(f, x, p);
  const auto ref = testutil::flatten({oracle::cft_block(oracle::sample(f, 0), oracle::sample(x, 0), p),
                                      oracle::cft_block(oracle::sample(f, 1), oracle::sample(x, 1), p)});
  EXPECT_LT(max_abs_diff(out.features, ref), 1e-10);
}

TEST(Variants, MatchComposedOracles) {
  Rng rng(25);
  const Tensor f = random_tensor({2, 8, 3, 3}, rng), x = random_tensor({2, 8, 6, 6}, rng);
  const auto p = random_block(8, 2, 3, false, 26);
  auto both = [&](auto fn) {
    return testutil::flatten({fn(oracle::sample(f, 0), oracle::sample(x, 0)),
                              fn(oracle::sample(f, 1), oracle::sample(x, 1))});
  };
  EXPECT_LT(max_abs_diff(variant_naive(f, x, p), both([&](auto a, auto b) { return oracle::naive(a, b, p); })),
            1e-10);
  EXPECT_LT(max_abs_diff(variant_avgpool(f, x, p, 2, 2),
                         both([&](auto a, auto b) { return oracle::avgpool(a, b, p, 2, 2); })),
            1e-10);
  EXPECT_LT(max_abs_diff(variant_a(f, x, p, 2, 2), both([&](auto a, auto b) { return oracle::variant_a(a, b, p, 2, 2); })),
            1e-10);
  EXPECT_LT(max_abs_diff(variant_b(f, x, p, 2, 2), both([&](auto a, auto b) { return oracle::variant_b(a, b, p, 2, 2); })),
            1e-10);
  EXPECT_LT(max_abs_diff(variant_c(f, x, p, 2, 2), both([&](auto a, auto b) { return oracle::variant_c(a, b, p, 2, 2); })),
            1e-10);
}

TEST(Variants, NaiveWithSingleTokenEqualsUniformSingleCategoryPath) {
  auto p = random_block(8, 2, 1, true, 27);
  Rng rng(28);
  const Tensor f = random_tensor({1, 8, 1, 1}, rng), x = random_tensor({1, 8, 4, 4}, rng);
  // With one position the single category row is phi_f(Norm(f)); make phi_f the identity.
  std::vector<double> eye(64, 0.0);
  for (int i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  std::copy(eye.begin(), eye.end(), p.phi_f.weight.mutable_data().begin());
  for (double& v : p.phi_f.bias.mutable_data()) v = 0.0;
  const auto cft_out = cft_block(f, x, p);
  EXPECT_LT(max_abs_diff(variant_naive(f, x, p), vec(cft_out.features)), 1e-13);
}

TEST(Variants, ZeroPathIdentities) {
  Rng rng(29);
  CftBlockParams p = CftBlockParams::init({8, 2, 3, 4}, false, rng);
  const Tensor f = random_tensor({1, 8, 3, 3}, rng), x = random_tensor({1, 8, 6, 6}, rng);
  EXPECT_EQ(vec(variant_naive(f, x, p)), vec(x));
  EXPECT_EQ(vec(variant_avgpool(f, x, p, 2, 2)), vec(x));
  EXPECT_EQ(vec(variant_b(f, x, p, 2, 2)), vec(x));
  // @a exposes the plain FPN sum.
  EXPECT_EQ(vec(variant_a(f, x, p, 2, 2)), vec(ops::add(ops::bilinear_resize(f, 6, 6), x)));
  EXPECT_EQ(vec(variant_c(f, x, p, 2, 2)), vec(x));
}

TEST(Variants, PoolingIdentitiesAndSingleKey) {
  const auto p = random_block(8, 2, 3, false, 30);
  Rng rng(31);
  const Tensor f = random_tensor({1, 8, 3, 3}, rng), x = random_tensor({1, 8, 6, 6}, rng);
  EXPECT_EQ(vec(variant_avgpool(f, x, p, 3, 3)), vec(variant_naive(f, x, p)));
  const Tensor mean_f = ops::adaptive_avg_pool(f, 1, 1);
  EXPECT_LT(max_abs_diff(variant_avgpool(f, x, p, 1, 1), vec(variant_naive(mean_f, x, p))), 1e-14);
  // @b with one pooled key: pre-FFN attention output is a constant over queries.
  auto q = random_block(8, 2, 3, false, 32);
  for (Tensor t : {q.ffn_project.weight, q.ffn_project.bias})
    for (double& v : t.mutable_data()) v = 0.0;
  const Tensor delta = ops::sub(variant_b(f, x, q, 1, 1), x);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t n = 1; n < 36; ++n) EXPECT_NEAR(delta.data()[c * 36 + n], delta.data()[c * 36], 1e-14);
}

TEST(Variants, KeyValueCountForCategoryPathIsL) {
  // Doubling resolution changes nothing about the embedding row count.
  const auto p = random_block(8, 2, 5, true, 33);
  Rng rng(34);
  for (std::size_t s : {2u, 4u, 8u}) {
    const auto e = category_feature_embedding(random_tensor({1, 8, s, s}, rng), p);
    EXPECT_EQ(e.embedding.matrix.dim(1), 5u);
  }
}

TEST(BlockGradients, EveryLeafMatchesFiniteDifferences) {
  auto p = random_block(4, 2, 3, true, 35, 2);
  Rng rng(36);
  const Tensor f = random_tensor({1, 4, 2, 2}, rng), x = random_tensor({1, 4, 4, 4}, rng);
  const Tensor r = random_tensor({1, 4, 4, 4}, rng);
  const Tensor rm = random_tensor({1, 3, 2, 2}, rng);
  auto loss = [&] {
    const auto out = cft_block(f, x, p);
    return ops::add(ops::sum(ops::mul(out.features, r)), ops::sum(ops::mul(out.masks->logits, rm)));
  };
  {
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(loss());
  }
  for (auto& [name, t] : p.named_parameters("")) {
    Tensor leaf = t;
    std::vector<std::size_t> coords(leaf.numel());
    std::iota(coords.begin(), coords.end(), 0);
    const auto numeric = finite_diff_grad_inplace([&] { return loss().item(); }, leaf, coords);
    EXPECT_LT(max_relative_error(leaf.grad(), numeric), 1e-4) << name;
  }
}
