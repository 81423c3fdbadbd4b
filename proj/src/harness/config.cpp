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

#include "cft/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cft/error.hpp"

namespace cft::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace

std::string_view to_string(losses::MaskLossMode mode) {
  switch (mode) {
    case losses::MaskLossMode::kCumulative: return "cumulative";
    case losses::MaskLossMode::kFinal: return "final";
    case losses::MaskLossMode::kOff: return "off";
  }
  return "?";
}

losses::MaskLossMode parse_mask_loss(std::string_view name) {
  if (name == "cumulative") return losses::MaskLossMode::kCumulative;
  if (name == "final") return losses::MaskLossMode::kFinal;
  if (name == "off") return losses::MaskLossMode::kOff;
  throw ConfigError("unknown mask_loss '" + std::string(name) + "' (expected cumulative|final|off)");
}

void TrainConfig::validate() const {
  if (!(baselr > 0.0)) throw ConfigError("baselr must be > 0");
  if (total_iters < 1) throw ConfigError("total_iters must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (crop_size == 0 || crop_size % 32 != 0) throw ConfigError("crop_size must be a positive multiple of 32");
  if (num_categories < 2) throw ConfigError("num_categories must be >= 2");
  if (n_images < 1) throw ConfigError("n_images must be >= 1");
  model_config().validate();
}

pipeline::ModelConfig TrainConfig::model_config() const {
  pipeline::ModelConfig m;
  m.num_categories = num_categories;
  m.channels = channels;
  m.heads = heads;
  m.ffn_ratio = ffn_ratio;
  m.backbone_widths = backbone_widths;
  m.input_size = crop_size;
  m.variant = variant;
  return m;
}

losses::LossWeights TrainConfig::loss_weights() const {
  losses::LossWeights w;
  w.lambda_dice = lambda_dice;
  w.lambda_focal = lambda_focal;
  w.mode = mask_loss;
  return w;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "baselr") baselr = parse_double(key, v);
  else if (key == "power") power = parse_double(key, v);
  else if (key == "total_iters") total_iters = parse_uint(key, v);
  else if (key == "batch_size") batch_size = parse_uint(key, v);
  else if (key == "weight_decay") weight_decay = parse_double(key, v);
  else if (key == "seed") seed = parse_uint(key, v);
  else if (key == "flip") flip = parse_bool(key, v);
  else if (key == "crop_size") crop_size = parse_uint(key, v);
  else if (key == "n_images") n_images = parse_uint(key, v);
  else if (key == "data_seed") data_seed = parse_uint(key, v);
  else if (key == "eval_images") eval_images = parse_uint(key, v);
  else if (key == "eval_seed") eval_seed = parse_uint(key, v);
  else if (key == "num_categories") num_categories = parse_uint(key, v);
  else if (key == "channels") channels = parse_uint(key, v);
  else if (key == "heads") heads = parse_uint(key, v);
  else if (key == "ffn_ratio") ffn_ratio = parse_uint(key, v);
  else if (key == "backbone_widths") {
    std::istringstream is(v);
    std::string part;
    std::size_t i = 0;
    std::array<std::size_t, pipeline::kStages> widths{};
    while (std::getline(is, part, ',')) {
      if (i >= widths.size()) throw ConfigError("backbone_widths needs exactly 4 entries");
      widths[i++] = parse_uint(key, trim(part));
    }
    if (i != widths.size()) throw ConfigError("backbone_widths needs exactly 4 entries");
    backbone_widths = widths;
  } else if (key == "variant") variant = core::parse_variant(v);
  else if (key == "mask_loss") mask_loss = parse_mask_loss(v);
  else if (key == "lambda_dice") lambda_dice = parse_double(key, v);
  else if (key == "lambda_focal") lambda_focal = parse_double(key, v);
  else if (key == "log_every") log_every = parse_uint(key, v);
  else if (key == "checkpoint_every") checkpoint_every = parse_uint(key, v);
  else if (key == "out") out = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["baselr"] = fmt_double(baselr);
  m["power"] = fmt_double(power);
  m["total_iters"] = std::to_string(total_iters);
  m["batch_size"] = std::to_string(batch_size);
  m["weight_decay"] = fmt_double(weight_decay);
  m["seed"] = std::to_string(seed);
  m["flip"] = flip ? "true" : "false";
  m["crop_size"] = std::to_string(crop_size);
  m["n_images"] = std::to_string(n_images);
  m["data_seed"] = std::to_string(data_seed);
  m["eval_images"] = std::to_string(eval_images);
  m["eval_seed"] = std::to_string(eval_seed);
  m["num_categories"] = std::to_string(num_categories);
  m["channels"] = std::to_string(channels);
  m["heads"] = std::to_string(heads);
  m["ffn_ratio"] = std::to_string(ffn_ratio);
  m["backbone_widths"] = std::to_string(backbone_widths[0]) + "," + std::to_string(backbone_widths[1]) + "," +
                         std::to_string(backbone_widths[2]) + "," + std::to_string(backbone_widths[3]);
  m["variant"] = std::string(core::to_string(variant));
  m["mask_loss"] = std::string(to_string(mask_loss));
  m["lambda_dice"] = fmt_double(lambda_dice);
  m["lambda_focal"] = fmt_double(lambda_focal);
  m["log_every"] = std::to_string(log_every);
  m["checkpoint_every"] = std::to_string(checkpoint_every);
  m["out"] = out;
  return m;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : to_map()) os << k << " = " << v << '\n';
  return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

}  // namespace cft::harness
