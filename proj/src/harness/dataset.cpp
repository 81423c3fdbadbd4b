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

#include "cft/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "cft/error.hpp"
#include "cft/tensor/random.hpp"

namespace cft::harness {

namespace {

struct Appearance {
  double rgb[3];
  double cos_t, sin_t, freq;
};

Appearance appearance(std::size_t category, std::size_t num_categories) {
  // Hue wheel for colour, per-category stripe orientation and period for texture.
  const double hue = static_cast<double>(category) / static_cast<double>(num_categories);
  const double sat = category == 0 ? 0.15 : 0.75;
  const double val = category == 0 ? 0.35 : 0.85;
  const double h6 = hue * 6.0;
  const double c = val * sat;
  const double x = c * (1.0 - std::abs(std::fmod(h6, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h6) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = val - c;
  const double theta = std::numbers::pi * static_cast<double>(category) / static_cast<double>(num_categories);
  const double period = 4.0 + 2.0 * static_cast<double>(category % 4);
  return {{r + m, g + m, b + m}, std::cos(theta), std::sin(theta), 2.0 * std::numbers::pi / period};
}

void paint_shape(std::vector<std::uint8_t>& label, std::size_t S, std::uint8_t category, Rng& rng) {
  const auto s = static_cast<double>(S);
  const std::size_t kind = rng.index(3);
  if (kind == 0) {  // rectangle
    const double w = rng.uniform(s / 4, s / 2), h = rng.uniform(s / 4, s / 2);
    const double x0 = rng.uniform(0, s - w), y0 = rng.uniform(0, s - h);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (px >= x0 && px < x0 + w && py >= y0 && py < y0 + h) label[y * S + x] = category;
      }
  } else if (kind == 1) {  // ellipse
    const double cx = rng.uniform(s / 4, 3 * s / 4), cy = rng.uniform(s / 4, 3 * s / 4);
    const double rx = rng.uniform(s / 8, s / 4), ry = rng.uniform(s / 8, s / 4);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) label[y * S + x] = category;
      }
  } else {  // band across the image
    const bool horizontal = rng.bernoulli(0.5);
    const double width = rng.uniform(s / 8, s / 4);
    const double start = rng.uniform(0, s - width);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double p = (horizontal ? y : x) + 0.5;
        if (p >= start && p < start + width) label[y * S + x] = category;
      }
  }
}

}  // namespace

void Dataset::batch(const std::vector<std::size_t>& indices, const std::vector<bool>& flips, Tensor& images_out,
                    losses::LabelMap& labels_out) const {
  const std::size_t S = image_size();
  const std::size_t B = indices.size();
  std::vector<double> img(B * 3 * S * S);
  labels_out = {B, S, S, std::vector<std::uint8_t>(B * S * S)};
  const auto src = images.data();
  for (std::size_t k = 0; k < B; ++k) {
    const std::size_t i = indices.at(k);
    if (i >= size()) throw UsageError("dataset index out of range");
    const bool flip = k < flips.size() && flips[k];
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const std::size_t sx = flip ? S - 1 - x : x;
        for (std::size_t c = 0; c < 3; ++c) img[((k * 3 + c) * S + y) * S + x] = src[((i * 3 + c) * S + y) * S + sx];
        labels_out.labels[(k * S + y) * S + x] = labels.labels[(i * S + y) * S + sx];
      }
  }
  images_out = Tensor({B, 3, S, S}, std::move(img));
}

Dataset gen_synthetic_dataset(std::uint64_t seed, std::size_t n_images, std::size_t size,
                              std::size_t num_categories) {
  if (num_categories < 2) throw ConfigError("synthetic data needs at least 2 categories");
  if (num_categories > 254) throw ConfigError("synthetic data supports at most 254 categories");
  if (size == 0) throw ConfigError("image size must be positive");
  const std::size_t S = size;
  std::vector<Appearance> looks;
  for (std::size_t c = 0; c < num_categories; ++c) looks.push_back(appearance(c, num_categories));

  std::vector<double> img(n_images * 3 * S * S);
  losses::LabelMap labels{n_images, S, S, std::vector<std::uint8_t>(n_images * S * S, 0)};
  for (std::size_t n = 0; n < n_images; ++n) {
    Rng rng = Rng::derive(seed, n);
    std::vector<std::uint8_t> label(S * S, 0);
    std::vector<std::uint8_t> order;
    for (std::size_t c = 1; c < num_categories; ++c) order.push_back(static_cast<std::uint8_t>(c));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::uint8_t c : order) paint_shape(label, S, c, rng);

    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const Appearance& a = looks[label[y * S + x]];
        const double texture = 0.12 * std::sin(a.freq * (a.cos_t * x + a.sin_t * y) + phase);
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = a.rgb[c] + texture + rng.uniform(-0.04, 0.04);
          img[((n * 3 + c) * S + y) * S + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    std::copy(label.begin(), label.end(), labels.labels.begin() + n * S * S);
  }
  return {Tensor({n_images, 3, S, S}, std::move(img)), std::move(labels)};
}

void write_dataset(const Dataset& data, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::size_t S = data.image_size();
  const auto px = data.images.data();
  char name[64];
  for (std::size_t n = 0; n < data.size(); ++n) {
    std::snprintf(name, sizeof(name), "image_%03zu.ppm", n);
    std::ofstream img(fs::path(dir) / name, std::ios::binary);
    img << "P6\n" << S << ' ' << S << "\n255\n";
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = px[((n * 3 + c) * S + y) * S + x];
          img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    std::snprintf(name, sizeof(name), "label_%03zu.pgm", n);
    std::ofstream lab(fs::path(dir) / name, std::ios::binary);
    lab << "P5\n" << S << ' ' << S << "\n255\n";
    lab.write(reinterpret_cast<const char*>(data.labels.labels.data() + n * S * S),
              static_cast<std::streamsize>(S * S));
    if (!img || !lab) throw FormatError("failed writing dataset files to " + dir);
  }
  nlohmann::json manifest = {{"images", data.size()}, {"size", S}};
  std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(2) << '\n';
}

std::vector<std::size_t> label_histogram(const Dataset& data, std::size_t num_categories) {
  std::vector<std::size_t> h(num_categories, 0);
  for (std::uint8_t v : data.labels.labels)
    if (v < num_categories) ++h[v];
  return h;
}

}  // namespace cft::harness
