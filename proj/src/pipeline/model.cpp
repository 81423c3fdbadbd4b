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

#include "cft/pipeline/model.hpp"

#include <cmath>

#include "cft/error.hpp"
#include "cft/tensor/ops.hpp"

namespace cft::pipeline {

namespace {

Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_tensor(shape, -bound, bound, rng, true);
}

ConvParams make_conv(std::size_t cin, std::size_t cout, Rng& rng) {
  return {fan_in_uniform({cout, cin, 3, 3}, cin * 9, rng), Tensor::zeros({cout}, true)};
}

Tensor conv_gelu(const Tensor& x, const ConvParams& p, std::size_t stride) {
  return ops::gelu(ops::conv2d(x, p.weight, p.bias, stride, 1));
}

}  // namespace

void ModelConfig::validate() const {
  if (num_categories < 1) throw ConfigError("num_categories must be >= 1");
  if (channels == 0 || heads == 0 || channels % heads != 0) {
    throw ConfigError("channels (" + std::to_string(channels) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (ffn_ratio < 1) throw ConfigError("ffn_ratio must be >= 1");
  for (std::size_t w : backbone_widths)
    if (w == 0) throw ConfigError("backbone widths must be positive");
  if (input_size == 0 || input_size % 32 != 0) {
    throw ConfigError("input size " + std::to_string(input_size) + " must be a positive multiple of 32");
  }
}

core::BlockConfig ModelConfig::block_config() const { return {channels, heads, num_categories, ffn_ratio}; }

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model m;
  m.config = config;
  std::size_t cin = 3;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t w = config.backbone_widths[s];
    m.backbone.first[s] = make_conv(cin, w, rng);
    m.backbone.second[s] = make_conv(w, w, rng);
    cin = w;
  }
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t ci = config.backbone_widths[s];
    m.laterals[s] = {fan_in_uniform({config.channels, ci}, ci, rng), Tensor::zeros({config.channels}, true)};
  }
  if (config.variant != core::Variant::kNone) {
    const bool embed = config.variant == core::Variant::kCft;
    for (std::size_t b = 0; b + 1 < kStages; ++b)
      m.blocks.push_back(core::CftBlockParams::init(config.block_config(), embed, rng));
  }
  const std::size_t cat = kStages * config.channels;
  m.classifier = {fan_in_uniform({config.num_categories, cat}, cat, rng),
                  Tensor::zeros({config.num_categories}, true)};
  return m;
}

NamedTensors Model::named_parameters() const {
  NamedTensors out;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::string p = "backbone.stage" + std::to_string(s + 1) + ".";
    out.emplace_back(p + "conv1.weight", backbone.first[s].weight);
    out.emplace_back(p + "conv1.bias", backbone.first[s].bias);
    out.emplace_back(p + "conv2.weight", backbone.second[s].weight);
    out.emplace_back(p + "conv2.bias", backbone.second[s].bias);
  }
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::string p = "lateral" + std::to_string(s + 1) + ".";
    out.emplace_back(p + "weight", laterals[s].weight);
    out.emplace_back(p + "bias", laterals[s].bias);
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto named = blocks[b].named_parameters("block" + std::to_string(b + 1) + ".");
    out.insert(out.end(), named.begin(), named.end());
  }
  out.emplace_back("classifier.weight", classifier.weight);
  out.emplace_back("classifier.bias", classifier.bias);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void Model::zero_block_paths() {
  for (auto& b : blocks) b.zero_output_paths();
}

FeaturePyramid toy_backbone(const Tensor& image, const BackboneParams& params) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("toy_backbone: expected [B, 3, H, W], got " + to_string(image.shape()));
  }
  if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0 || image.dim(2) == 0 || image.dim(3) == 0) {
    throw ConfigError("toy_backbone: input " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                      " is not a multiple of 32");
  }
  FeaturePyramid pyr;
  Tensor x = image;
  for (std::size_t s = 0; s < kStages; ++s) {
    x = conv_gelu(x, params.first[s], 2);
    x = conv_gelu(x, params.second[s], s == 0 ? 2 : 1);
    pyr.stages[s] = x;
  }
  return pyr;
}

std::array<Tensor, kStages> lateral_project(const FeaturePyramid& pyramid,
                                            const std::array<core::LinearParams, kStages>& laterals) {
  std::array<Tensor, kStages> out;
  for (std::size_t s = 0; s < kStages; ++s)
    out[s] = ops::conv1x1(pyramid.stages[s], laterals[s].weight, laterals[s].bias);
  return out;
}

Aggregated top_down_aggregate(const std::array<Tensor, kStages>& laterals, const Model& model) {
  const core::Variant variant = model.config.variant;
  if (variant != core::Variant::kNone && model.blocks.size() != kStages - 1) {
    throw ShapeError("top_down_aggregate: expected 3 blocks, got " + std::to_string(model.blocks.size()));
  }
  Aggregated out;
  out.features[kStages - 1] = model.context ? model.context(laterals[kStages - 1]) : laterals[kStages - 1];
  const std::size_t pool_h = laterals[kStages - 1].dim(2);
  const std::size_t pool_w = laterals[kStages - 1].dim(3);
  for (std::size_t i = kStages - 1; i-- > 0;) {
    if (variant == core::Variant::kNone) {
      out.features[i] = laterals[i];
      continue;
    }
    core::BlockOutput r = core::aggregate(variant, out.features[i + 1], laterals[i], model.blocks[i], pool_h, pool_w);
    out.features[i] = r.features;
    if (r.masks) {
      r.masks->stage = static_cast<int>(i + 2);
      out.masks.push_back(*r.masks);
    }
  }
  return out;
}

Tensor decode_head(const std::array<Tensor, kStages>& features, const core::LinearParams& classifier,
                   std::size_t out_h, std::size_t out_w) {
  const std::size_t h = features[0].dim(2), w = features[0].dim(3);
  std::vector<Tensor> parts;
  parts.reserve(kStages);
  for (std::size_t s = 0; s < kStages; ++s)
    parts.push_back(s == 0 ? features[0] : ops::bilinear_resize(features[s], h, w));
  const Tensor logits = ops::conv1x1(ops::concat(parts, 1), classifier.weight, classifier.bias);
  return ops::bilinear_resize(logits, out_h, out_w);
}

ForwardResult forward(const Tensor& image, const Model& model) {
  const FeaturePyramid pyr = toy_backbone(image, model.backbone);
  const auto lat = lateral_project(pyr, model.laterals);
  Aggregated agg = top_down_aggregate(lat, model);
  ForwardResult r;
  r.logits = decode_head(agg.features, model.classifier, image.dim(2), image.dim(3));
  r.masks = std::move(agg.masks);
  return r;
}

}  // namespace cft::pipeline
