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

#include "cft/harness/flops.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "cft/error.hpp"

namespace cft::harness {

namespace {

using u64 = std::uint64_t;

// Query projection, key/value projections over m rows, attention, output projection and FFN.
u64 attend_macs(u64 n, u64 m, u64 C, u64 E) {
  const u64 proj = n * C * C + 2 * m * C * C + n * C * C;
  const u64 attention = 2 * n * m * C;
  const u64 ffn = n * C * E + n * E * 9 + n * E * C;
  return proj + attention + ffn;
}

u64 ffn_macs(u64 n, u64 C, u64 E) { return n * C * E + n * E * 9 + n * E * C; }

}  // namespace

u64 block_macs(core::Variant variant, const core::BlockConfig& block, std::size_t batch, std::size_t h,
               std::size_t w, std::size_t hs, std::size_t ws, std::size_t pool_h, std::size_t pool_w) {
  const u64 C = block.channels, E = block.channels * block.ffn_ratio, L = block.categories;
  const u64 n = static_cast<u64>(h) * w, ns = static_cast<u64>(hs) * ws, p = static_cast<u64>(pool_h) * pool_w;
  u64 per_sample = 0;
  switch (variant) {
    case core::Variant::kCft:
      // phi_m, phi_f and the mask-weighted average, then attention over L rows.
      per_sample = ns * C * L + ns * C * C + L * ns * C + attend_macs(n, L, C, E);
      break;
    case core::Variant::kNaive: per_sample = attend_macs(n, ns, C, E); break;
    case core::Variant::kAvgPool:
    case core::Variant::kA:
    case core::Variant::kB: per_sample = attend_macs(n, p, C, E); break;
    case core::Variant::kC:
      // Queries at f_high resolution; only the FFN runs at x_low resolution.
      per_sample = ns * C * C + 2 * p * C * C + 2 * ns * p * C + ns * C * C + ffn_macs(n, C, E);
      break;
    case core::Variant::kNone: per_sample = 0; break;
  }
  return per_sample * batch;
}

u64 block_params(core::Variant variant, const core::BlockConfig& block) {
  if (variant == core::Variant::kNone) return 0;
  const u64 C = block.channels, E = block.channels * block.ffn_ratio, L = block.categories;
  u64 n = 2 * C;                                     // norm_embed
  if (variant == core::Variant::kCft) n += L * C + L + C * C + C;  // phi_m, phi_f
  n += 2 * C + 4 * C * C;                            // norm_query, W^Q, W^K, W^V, W^O
  n += 2 * C + (E * C + E) + (9 * E + E) + (C * E + C);  // norm_ffn, expand, depthwise, project
  return n;
}

FlopsReport count_flops(const pipeline::ModelConfig& config, std::size_t batch) {
  config.validate();
  const u64 B = batch;
  const u64 C = config.channels, L = config.num_categories;
  std::array<std::size_t, pipeline::kStages> side{};
  side[0] = config.input_size / 4;
  for (std::size_t s = 1; s < pipeline::kStages; ++s) side[s] = side[s - 1] / 2;

  FlopsReport r;
  ModuleCost backbone{"backbone", 0, 0};
  u64 cin = 3;
  u64 in_side = config.input_size;
  for (std::size_t s = 0; s < pipeline::kStages; ++s) {
    const u64 cout = config.backbone_widths[s];
    const u64 mid = in_side / 2;
    backbone.macs += B * mid * mid * cout * cin * 9;
    backbone.macs += B * side[s] * side[s] * cout * cout * 9;
    backbone.params += cout * cin * 9 + cout + cout * cout * 9 + cout;
    cin = cout;
    in_side = side[s];
  }
  r.modules.push_back(backbone);

  ModuleCost lateral{"lateral", 0, 0};
  for (std::size_t s = 0; s < pipeline::kStages; ++s) {
    const u64 ci = config.backbone_widths[s];
    lateral.macs += B * side[s] * side[s] * ci * C;
    lateral.params += C * ci + C;
  }
  r.modules.push_back(lateral);

  const core::BlockConfig block = config.block_config();
  const std::size_t pool = side[pipeline::kStages - 1];
  for (std::size_t i = pipeline::kStages - 1; i-- > 0;) {
    ModuleCost m{"block" + std::to_string(i + 1), 0, block_params(config.variant, block)};
    m.macs = block_macs(config.variant, block, batch, side[i], side[i], side[i + 1], side[i + 1], pool, pool);
    r.modules.push_back(m);
  }

  r.modules.push_back({"decode", B * side[0] * side[0] * pipeline::kStages * C * L, L * pipeline::kStages * C + L});

  for (const auto& m : r.modules) {
    r.total_macs += m.macs;
    r.total_params += m.params;
  }
  return r;
}

std::uint64_t FlopsReport::aggregation_macs() const {
  u64 n = 0;
  for (const auto& m : modules)
    if (m.name.rfind("block", 0) == 0) n += m.macs;
  return n;
}

const ModuleCost* FlopsReport::find(const std::string& name) const {
  for (const auto& m : modules)
    if (m.name == name) return &m;
  return nullptr;
}

std::string FlopsReport::csv() const {
  std::ostringstream os;
  os << "module,macs,params\n";
  for (const auto& m : modules) os << m.name << ',' << m.macs << ',' << m.params << '\n';
  os << "total," << total_macs << ',' << total_params << '\n';
  return os.str();
}

std::string FlopsReport::json() const {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : modules) mods.push_back({{"name", m.name}, {"macs", m.macs}, {"params", m.params}});
  return nlohmann::json{{"modules", mods}, {"total_macs", total_macs}, {"total_params", total_params}}.dump(2);
}

pipeline::ModelConfig flops_toy_config(core::Variant variant) {
  pipeline::ModelConfig c;
  c.num_categories = 8;
  c.channels = 256;
  c.heads = 4;
  c.ffn_ratio = 4;
  c.backbone_widths = {32, 64, 128, 256};
  c.input_size = 256;
  c.variant = variant;
  return c;
}

}  // namespace cft::harness
