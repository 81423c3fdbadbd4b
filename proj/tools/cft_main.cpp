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

// Command-line harness: train, eval, ablate, gradcheck, flops, gen-data.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cft/error.hpp"
#include "cft/harness/ablation.hpp"
#include "cft/harness/checkpoint.hpp"
#include "cft/harness/config.hpp"
#include "cft/harness/dataset.hpp"
#include "cft/harness/flops.hpp"
#include "cft/harness/gradcheck_suite.hpp"
#include "cft/harness/train.hpp"

namespace fs = std::filesystem;
using namespace cft;
using namespace cft::harness;

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string variant;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "key = value config file");
  cmd->add_option("--set", f.overrides, "override a config key, e.g. --set total_iters=100");
  cmd->add_option("--variant", f.variant, "cft|naive|avgpool|a|b|c|none");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&f](std::uint64_t s) { f.seed = s, f.seed_set = true; }, "training seed");
}

// File values first, then --set, then the dedicated flags.
TrainConfig resolve(const CommonFlags& f) {
  TrainConfig c = f.config_path.empty() ? TrainConfig{} : TrainConfig::load(f.config_path);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!f.variant.empty()) c.variant = core::parse_variant(f.variant);
  if (!f.out.empty()) c.out = f.out;
  if (f.seed_set) c.seed = f.seed;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category feature transformer toolkit"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::string resume;
  std::size_t stop_after = 0;
  auto* train_cmd = app.add_subcommand("train", "train a model on the synthetic dataset");
  add_common(train_cmd, train_flags);
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_option("--stop-after", stop_after, "stop after this many total iterations");

  CommonFlags eval_flags;
  std::string eval_ckpt, split = "heldout";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", split, "train|heldout")->check(CLI::IsMember({"train", "heldout"}));
  eval_cmd->add_option("--out", eval_flags.out, "directory for eval.json and per_category.csv");

  CommonFlags ablate_flags;
  std::vector<std::string> entries;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and compare aggregation variants");
  add_common(ablate_cmd, ablate_flags);
  ablate_cmd->add_option("--entries", entries, "variant[:mask_loss] list")->delimiter(',');

  std::uint64_t gc_seed = 0;
  std::size_t gc_coords = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "compare backward against finite differences");
  grad_cmd->add_option("--seed", gc_seed, "seed");
  grad_cmd->add_option("--max-coords", gc_coords, "coordinates per tensor (0: all)");

  std::string flops_variant = "cft";
  pipeline::ModelConfig flops_cfg = flops_toy_config();
  std::size_t flops_batch = 1;
  bool flops_json = false;
  auto* flops_cmd = app.add_subcommand("flops", "analytic multiply-add and parameter counts");
  flops_cmd->add_option("--variant", flops_variant, "variant");
  flops_cmd->add_option("--size", flops_cfg.input_size, "input side");
  flops_cmd->add_option("--channels", flops_cfg.channels, "shared width C");
  flops_cmd->add_option("--categories", flops_cfg.num_categories, "L");
  flops_cmd->add_option("--heads", flops_cfg.heads, "attention heads");
  flops_cmd->add_option("--batch", flops_batch, "batch size");
  flops_cmd->add_flag("--json", flops_json, "print JSON instead of CSV");

  std::uint64_t gd_seed = 0;
  std::size_t gd_n = 8, gd_size = 64, gd_l = 4;
  std::string gd_out = "data";
  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic dataset as PPM/PGM files");
  gen_cmd->add_option("--seed", gd_seed, "seed");
  gen_cmd->add_option("--n", gd_n, "number of images");
  gen_cmd->add_option("--size", gd_size, "image side");
  gen_cmd->add_option("--categories", gd_l, "L, including background");
  gen_cmd->add_option("--out", gd_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (train_cmd->parsed()) {
      const TrainConfig cfg = resolve(train_flags);
      Checkpoint ckpt;
      TrainOptions opts;
      if (!resume.empty()) {
        ckpt = load_checkpoint(resume);
        opts.resume = &ckpt;
      }
      opts.stop_after = stop_after;
      const TrainResult r = train(cfg, opts);
      write_text(fs::path(cfg.out) / "config.txt", cfg.to_text());
      nlohmann::json summary = {{"iterations", r.checkpoint.iteration},
                                {"checkpoint", (fs::path(cfg.out) / "checkpoint.cftk").string()}};
      if (!r.log.empty()) summary["final_total_loss"] = r.log.back().loss.total;
      std::cout << summary.dump() << std::endl;
    } else if (eval_cmd->parsed()) {
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      const TrainConfig cfg = checkpoint_config(ckpt);
      const pipeline::Model model = restore_model(ckpt);
      const Dataset data = split == "train" ? training_set(cfg) : held_out_set(cfg);
      const EvalReport rep = evaluate(model, data);
      if (!eval_flags.out.empty()) {
        write_text(fs::path(eval_flags.out) / "eval.json", rep.json() + "\n");
        write_text(fs::path(eval_flags.out) / "per_category.csv", rep.per_category_csv());
      }
      std::cout << rep.json() << std::endl;
    } else if (ablate_cmd->parsed()) {
      TrainConfig cfg = resolve(ablate_flags);
      std::vector<AblationEntry> list;
      for (const auto& e : entries) list.push_back(AblationEntry::parse(e));
      if (list.empty()) list = default_ablation_entries();
      const AblationResult r = run_ablation(cfg, list);
      std::cout << r.csv();
    } else if (grad_cmd->parsed()) {
      GradCheckOptions o;
      o.seed = gc_seed;
      o.max_coords_per_tensor = gc_coords;
      const GradCheckReport r = run_gradcheck_suite(o);
      std::cout << r.csv() << "seconds," << r.seconds << "\n";
      if (!r.passed()) return fail("gradcheck_failed", "one or more groups exceeded tolerance", 1);
    } else if (flops_cmd->parsed()) {
      flops_cfg.variant = core::parse_variant(flops_variant);
      const FlopsReport r = count_flops(flops_cfg, flops_batch);
      std::cout << (flops_json ? r.json() + "\n" : r.csv());
    } else if (gen_cmd->parsed()) {
      const Dataset d = gen_synthetic_dataset(gd_seed, gd_n, gd_size, gd_l);
      write_dataset(d, gd_out);
      std::cout << nlohmann::json{{"images", d.size()}, {"out", gd_out}}.dump() << std::endl;
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 3);
  } catch (const NumericError& e) {
    return fail("non_finite_loss", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
