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

#include "cft/harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cft/error.hpp"
#include "cft/tensor/ops.hpp"
#include "cft/tensor/random.hpp"
#include "cft/tensor/tape.hpp"

namespace cft::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_diagnostic(const TrainConfig& config, const IterationLog& row) {
  nlohmann::json diag = {{"error", "non_finite_loss"},
                         {"iteration", row.iteration},
                         {"lr", row.lr},
                         {"ce", fmt(row.loss.ce)},
                         {"dice", fmt(row.loss.dice)},
                         {"focal", fmt(row.loss.focal)},
                         {"total", fmt(row.loss.total)}};
  fs::create_directories(config.out);
  std::ofstream(fs::path(config.out) / "diagnostic.json") << diag.dump(2) << '\n';
}

// Samples for one iteration: a shuffled pass over the dataset, cycled if the
// batch is larger than the dataset.
void sample_batch(const TrainConfig& config, std::size_t n, std::size_t iteration, std::vector<std::size_t>& indices,
                  std::vector<bool>& flips) {
  Rng rng = Rng::derive(config.seed ^ 0x5eedba7c4ULL, iteration);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  indices.resize(config.batch_size);
  flips.resize(config.batch_size);
  for (std::size_t k = 0; k < config.batch_size; ++k) {
    indices[k] = order[k % n];
    flips[k] = config.flip && rng.bernoulli(0.5);
  }
}

std::vector<NamedBlob> to_blobs(const core::NamedTensors& named) {
  std::vector<NamedBlob> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) {
    const auto d = t.data();
    out.push_back({name, t.shape(), std::vector<double>(d.begin(), d.end())});
  }
  return out;
}

}  // namespace

std::string log_csv_header() { return "iteration,ce,dice,focal,total,lr\n"; }

std::string log_csv_row(const IterationLog& r) {
  return std::to_string(r.iteration) + "," + fmt(r.loss.ce) + "," + fmt(r.loss.dice) + "," + fmt(r.loss.focal) + "," +
         fmt(r.loss.total) + "," + fmt(r.lr) + "\n";
}

Dataset training_set(const TrainConfig& config) {
  return gen_synthetic_dataset(config.data_seed, config.n_images, config.crop_size, config.num_categories);
}

Dataset held_out_set(const TrainConfig& config) {
  return gen_synthetic_dataset(config.eval_seed, config.eval_images, config.crop_size, config.num_categories);
}

Checkpoint make_checkpoint(const pipeline::Model& model, const AdamW* optimizer, std::uint64_t iteration,
                           const TrainConfig& config) {
  Checkpoint ckpt;
  ckpt.iteration = iteration;
  ckpt.config_text = config.to_text();
  ckpt.tensors = to_blobs(model.named_parameters());
  if (optimizer != nullptr) {
    const auto& params = optimizer->params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      ckpt.moments.push_back({"m/" + params[k].first, params[k].second.shape(), optimizer->first_moments()[k]});
      ckpt.moments.push_back({"v/" + params[k].first, params[k].second.shape(), optimizer->second_moments()[k]});
    }
  }
  return ckpt;
}

TrainConfig checkpoint_config(const Checkpoint& ckpt) { return TrainConfig::from_text(ckpt.config_text); }

pipeline::Model restore_model(const Checkpoint& ckpt) {
  const TrainConfig config = checkpoint_config(ckpt);
  pipeline::Model model = pipeline::Model::init(config.model_config(), config.seed);
  for (auto& [name, t] : model.named_parameters()) {
    const NamedBlob* blob = ckpt.find(name);
    if (blob == nullptr) throw FormatError("checkpoint is missing tensor '" + name + "'");
    if (blob->shape != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(blob->shape) + ", model expects " +
                        to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(blob->data.begin(), blob->data.end(), dst.begin());
  }
  return model;
}

void restore_optimizer(const Checkpoint& ckpt, AdamW& optimizer) {
  const auto& params = optimizer.params();
  auto find_moment = [&](const std::string& name, std::size_t n) -> const std::vector<double>& {
    for (const auto& b : ckpt.moments)
      if (b.name == name) {
        if (b.data.size() != n) throw FormatError("checkpoint moment '" + name + "' has the wrong length");
        return b.data;
      }
    throw FormatError("checkpoint is missing optimizer moment '" + name + "'");
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::size_t n = params[k].second.numel();
    optimizer.first_moments()[k] = find_moment("m/" + params[k].first, n);
    optimizer.second_moments()[k] = find_moment("v/" + params[k].first, n);
  }
  optimizer.set_steps(ckpt.iteration);
}

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const Dataset data = training_set(config);
  const losses::LossWeights weights = config.loss_weights();

  std::size_t start = 0;
  pipeline::Model model = options.resume != nullptr ? restore_model(*options.resume)
                                                    : pipeline::Model::init(config.model_config(), config.seed);
  AdamWOptions adam_options;
  adam_options.weight_decay = config.weight_decay;
  AdamW optimizer(model.named_parameters(), adam_options);
  if (options.resume != nullptr) {
    restore_optimizer(*options.resume, optimizer);
    start = options.resume->iteration;
  }
  const std::size_t stop = options.stop_after == 0 ? config.total_iters
                                                   : std::min(options.stop_after, config.total_iters);

  std::ofstream log_file;
  const fs::path out_dir(config.out);
  const fs::path ckpt_path = out_dir / "checkpoint.cftk";
  if (options.write_files) {
    fs::create_directories(out_dir);
    const bool append = options.resume != nullptr && fs::exists(out_dir / "train_log.csv");
    log_file.open(out_dir / "train_log.csv", append ? std::ios::app : std::ios::trunc);
    if (!append) log_file << log_csv_header();
  }

  TrainResult result;
  std::vector<std::size_t> indices;
  std::vector<bool> flips;
  Tensor images;
  losses::LabelMap labels;
  for (std::size_t it = start; it < stop; ++it) {
    sample_batch(config, data.size(), it, indices, flips);
    data.batch(indices, flips, images, labels);
    const double lr = poly_lr(config.baselr, it, config.total_iters, config.power);

    Tape tape;
    IterationLog row;
    {
      Tape::Scope scope(tape);
      const pipeline::ForwardResult fwd = pipeline::forward(images, model);
      const losses::LossTerms terms = losses::total_loss(fwd.logits, fwd.masks, labels, weights);
      row = {it, terms.breakdown(weights), lr};
      if (!std::isfinite(row.loss.total)) {
        if (options.write_files) write_diagnostic(config, row);
        throw NumericError("non-finite loss at iteration " + std::to_string(it));
      }
      optimizer.zero_grad();
      tape.backward(terms.total);
    }
    optimizer.step(lr);

    if (config.log_every != 0 && (it % config.log_every == 0 || it + 1 == config.total_iters)) {
      result.log.push_back(row);
      if (options.write_files) log_file << log_csv_row(row);
      if (options.on_log) options.on_log(row);
    }
    const std::size_t done = it + 1;
    if (options.write_files && config.checkpoint_every != 0 && done % config.checkpoint_every == 0 && done < stop) {
      log_file.flush();
      save_checkpoint(make_checkpoint(model, &optimizer, done, config), ckpt_path.string());
    }
  }

  result.checkpoint = make_checkpoint(model, &optimizer, std::max(start, stop), config);
  if (options.write_files) save_checkpoint(result.checkpoint, ckpt_path.string());
  result.model = std::move(model);
  return result;
}

std::string EvalReport::per_category_csv() const {
  std::string out = "category_id,iou\n";
  for (std::size_t c = 0; c < iou.per_category.size(); ++c) {
    const double v = iou.per_category[c];
    out += std::to_string(c) + "," + (std::isnan(v) ? std::string("nan") : fmt(v)) + "\n";
  }
  return out;
}

std::string EvalReport::json() const {
  nlohmann::json per = nlohmann::json::array();
  for (double v : iou.per_category) per.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  nlohmann::json j = {{"miou", iou.mean},
                      {"pixel_accuracy", pixel_accuracy},
                      {"per_category_iou", per},
                      {"pixels", confusion.total()}};
  if (!mask_alignment.empty()) j["mask_alignment"] = mask_alignment;
  return j.dump(2);
}

EvalReport evaluate(const pipeline::Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw UsageError("evaluate: dataset is empty");
  if (batch_size == 0) throw UsageError("evaluate: batch_size must be >= 1");
  const std::size_t L = model.config.num_categories;
  EvalReport report;
  report.confusion = losses::ConfusionMatrix(L);
  std::vector<std::uint64_t> agree, scored;

  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - first);
    std::vector<std::size_t> indices(count);
    for (std::size_t k = 0; k < count; ++k) indices[k] = first + k;
    Tensor images;
    losses::LabelMap labels;
    data.batch(indices, {}, images, labels);
    const pipeline::ForwardResult fwd = pipeline::forward(images, model);
    report.confusion.add(fwd.logits, labels);

    if (fwd.masks.empty()) continue;
    std::vector<Tensor> stage_logits;
    for (const auto& m : fwd.masks) stage_logits.push_back(m.logits);
    const std::vector<Tensor> sums = losses::sum_masks_orderly(stage_logits);
    agree.resize(sums.size(), 0);
    scored.resize(sums.size(), 0);
    for (std::size_t s = 0; s < sums.size(); ++s) {
      const losses::LabelMap pred = losses::argmax_labels(sums[s]);
      const losses::LabelMap truth = losses::downsample_labels(labels, pred.height, pred.width);
      for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        if (truth.labels[i] == losses::kIgnoreIndex) continue;
        ++scored[s];
        if (truth.labels[i] == pred.labels[i]) ++agree[s];
      }
    }
  }
  report.iou = losses::miou(report.confusion);
  report.pixel_accuracy = losses::pixel_accuracy(report.confusion);
  for (std::size_t s = 0; s < agree.size(); ++s) {
    report.mask_alignment.push_back(scored[s] == 0 ? 0.0
                                                   : static_cast<double>(agree[s]) / static_cast<double>(scored[s]));
  }
  return report;
}

}  // namespace cft::harness
