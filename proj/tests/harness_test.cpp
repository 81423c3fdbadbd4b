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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cft/error.hpp"
#include "cft/harness/ablation.hpp"
#include "cft/harness/checkpoint.hpp"
#include "cft/harness/config.hpp"
#include "cft/harness/dataset.hpp"
#include "cft/harness/flops.hpp"
#include "cft/harness/gradcheck_suite.hpp"
#include "cft/harness/optim.hpp"
#include "cft/harness/train.hpp"
#include "cft/tensor/ops.hpp"
#include "cft/tensor/tape.hpp"
#include "test_util.hpp"

using namespace cft;
using namespace cft::harness;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny(const std::string& name) {
  TrainConfig c;
  c.crop_size = 32;
  c.n_images = 2;
  c.eval_images = 2;
  c.batch_size = 2;
  c.channels = 8;
  c.heads = 2;
  c.ffn_ratio = 2;
  c.num_categories = 3;
  c.backbone_widths = {4, 4, 8, 8};
  c.total_iters = 6;
  c.out = (fs::temp_directory_path() / ("cft_harness_test_" + name)).string();
  fs::remove_all(c.out);
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Config, TextRoundTripCoversEveryField) {
  TrainConfig c;
  c.set("baselr", "0.125");
  c.set("variant", "avgpool");
  c.set("mask_loss", "final");
  c.set("backbone_widths", "8,16,32,64");
  c.set("seed", "42");
  const TrainConfig back = TrainConfig::from_text(c.to_text());
  EXPECT_EQ(back.to_map(), c.to_map());
  EXPECT_EQ(back.baselr, 0.125);
  EXPECT_EQ(back.variant, core::Variant::kAvgPool);
  EXPECT_EQ(back.backbone_widths[3], 64u);
  EXPECT_EQ(c.to_map().size(), 24u);
}

TEST(Config, CommentsBlankLinesAndErrors) {
  const TrainConfig c = TrainConfig::from_text("# desk run\n\n  total_iters = 12  # short\nheads=2\nchannels=8\n");
  EXPECT_EQ(c.total_iters, 12u);
  EXPECT_EQ(c.heads, 2u);
  TrainConfig d;
  EXPECT_THROW(d.set("no_such_key", "1"), ConfigError);
  EXPECT_THROW(d.set("total_iters", "many"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("total_iters\n"), ConfigError);
  d.crop_size = 48;
  EXPECT_THROW(d.validate(), ConfigError);
  d = TrainConfig{};
  d.baselr = 0.0;
  EXPECT_THROW(d.validate(), ConfigError);
  d = TrainConfig{};
  d.total_iters = 0;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(Dataset, DeterministicBytes) {
  const Dataset a = gen_synthetic_dataset(5, 3, 32, 4), b = gen_synthetic_dataset(5, 3, 32, 4);
  const Dataset c = gen_synthetic_dataset(6, 3, 32, 4);
  EXPECT_TRUE(std::equal(a.images.data().begin(), a.images.data().end(), b.images.data().begin()));
  EXPECT_EQ(a.labels.labels, b.labels.labels);
  EXPECT_NE(a.labels.labels, c.labels.labels);
  for (double v : a.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Dataset, BinaryCaseAndErrors) {
  const Dataset d = gen_synthetic_dataset(0, 2, 32, 2);
  for (auto v : d.labels.labels) EXPECT_LT(v, 2);
  EXPECT_THROW(gen_synthetic_dataset(0, 2, 32, 1), ConfigError);
}

TEST(Dataset, HistogramCoversAllCategories) {
  const Dataset d = gen_synthetic_dataset(0, 8, 64, 4);
  const auto h = label_histogram(d, 4);
  std::vector<std::size_t> counted(4, 0);
  for (auto v : d.labels.labels) ++counted[v];
  EXPECT_EQ(h, counted);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_GT(h[c], 0u) << c;
}

TEST(Dataset, BatchFlipMirrorsRows) {
  const Dataset d = gen_synthetic_dataset(1, 2, 32, 3);
  Tensor img;
  losses::LabelMap lab;
  d.batch({1, 0}, {true, false}, img, lab);
  EXPECT_EQ(lab.batch, 2u);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      EXPECT_EQ(lab.at(0, y, x), d.labels.at(1, y, 31 - x));
      EXPECT_EQ(lab.at(1, y, x), d.labels.at(0, y, x));
      EXPECT_EQ(img.at({0, 2, y, x}), d.images.at({1, 2, y, 31 - x}));
    }
}

TEST(PolyLr, EndpointsAndLinearMidpoint) {
  EXPECT_EQ(poly_lr(6e-5, 0, 160000), 6e-5);
  EXPECT_EQ(poly_lr(6e-5, 160000, 160000), 0.0);
  EXPECT_DOUBLE_EQ(poly_lr(6e-5, 80000, 160000), 3e-5);
  EXPECT_DOUBLE_EQ(poly_lr(1.0, 1, 4, 2.0), 0.5625);
}

TEST(AdamW, ZeroGradsDecayMomentsAndKeepFreshParams) {
  Tensor p({3}, {1.0, -2.0, 0.5}, true);
  AdamW opt({{"p", p}}, {0.9, 0.999, 1e-8, 0.0});
  opt.first_moments()[0] = {1.0, 1.0, 1.0};
  opt.second_moments()[0] = {4.0, 4.0, 4.0};
  opt.zero_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(ops::scale(ops::sum(p), 0.0));
  }
  opt.step(0.1);
  EXPECT_DOUBLE_EQ(opt.first_moments()[0][0], 0.9);
  EXPECT_DOUBLE_EQ(opt.second_moments()[0][0], 4.0 * 0.999);
  // The stale first moment still moves the parameter; with fresh state it must not.
  Tensor q({2}, {1.0, -1.0}, true);
  AdamW fresh({{"q", q}}, {0.9, 0.999, 1e-8, 0.0});
  fresh.step(0.1);
  EXPECT_EQ(q.data()[0], 1.0);
  EXPECT_EQ(q.data()[1], -1.0);
}

TEST(AdamW, DecoupledDecayShrinksByLrTimesWd) {
  Tensor p({2}, {2.0, -4.0}, true);
  AdamW opt({{"p", p}}, {0.9, 0.999, 1e-8, 0.1});
  opt.step(0.5);
  EXPECT_DOUBLE_EQ(p.data()[0], 2.0 * (1.0 - 0.05));
  EXPECT_DOUBLE_EQ(p.data()[1], -4.0 * (1.0 - 0.05));
}

TEST(AdamW, MatchesScalarReferenceAndConvergesOnSquare) {
  Tensor x({1}, {1.0}, true);
  AdamW opt({{"x", x}}, {0.9, 0.999, 1e-8, 0.0});
  double ref = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 200; ++t) {
    opt.zero_grad();
    Tape tape;
    {
      Tape::Scope scope(tape);
      tape.backward(ops::mul(x, x));
    }
    opt.step(0.1);
    const double g = 2.0 * ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(x.data()[0], ref, 1e-12);
  }
  EXPECT_LT(std::abs(x.data()[0]), 1e-3);
  EXPECT_EQ(opt.steps(), 200u);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  Checkpoint c;
  c.iteration = 77;
  c.config_text = "seed = 3\n";
  c.tensors = {{"a.weight", {2, 3}, {1.0, -0.0, 1e-300, std::nan(""), INFINITY, 0.1}}, {"b", {}, {4.0}}};
  c.moments = {{"m/a.weight", {2, 3}, std::vector<double>(6, 0.25)}};
  const std::string bytes = serialize_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 4), "CFTK");
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.iteration, 77u);
  EXPECT_EQ(back.find("a.weight")->shape, (Shape{2, 3}));
  EXPECT_TRUE(std::signbit(back.find("a.weight")->data[1]));
  EXPECT_EQ(back.find("missing"), nullptr);

  const fs::path dir = fs::temp_directory_path() / "cft_ckpt_test";
  fs::create_directories(dir);
  save_checkpoint(c, (dir / "c.cftk").string());
  EXPECT_FALSE(fs::exists(dir / "c.cftk.tmp"));
  EXPECT_EQ(slurp(dir / "c.cftk"), bytes);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint((dir / "c.cftk").string())), bytes);
}

TEST(Checkpoint, CorruptionIsFormatError) {
  Checkpoint c;
  c.tensors = {{"w", {2}, {1.0, 2.0}}};
  const std::string bytes = serialize_checkpoint(c);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = bytes;
  bad[4] = 9;  // version
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() - 1})
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, cut)), FormatError) << cut;
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.cftk"), FormatError);
}

TEST(Train, OneIterationRunsAndSaves) {
  TrainConfig c = tiny("one");
  c.total_iters = 1;
  const auto r = train(c);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log[0].iteration, 0u);
  EXPECT_EQ(r.log[0].lr, c.baselr);
  EXPECT_EQ(r.checkpoint.iteration, 1u);
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "checkpoint.cftk"));
  const std::string log = slurp(fs::path(c.out) / "train_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n') + 1), log_csv_header());
  const auto& l = r.log[0].loss;
  EXPECT_EQ(l.total, losses::combine(l.ce, l.dice, l.focal, c.loss_weights()));
}

TEST(Train, ResumedRunMatchesUninterruptedRun) {
  TrainConfig c = tiny("full");
  const auto full = train(c, {nullptr, 0, false, {}});

  const TrainConfig& c2 = c;  // same text, so checkpoints compare byte for byte
  TrainOptions first;
  first.stop_after = 3;
  first.write_files = false;
  const auto head = train(c2, first);
  EXPECT_EQ(head.checkpoint.iteration, 3u);
  TrainOptions second;
  second.resume = &head.checkpoint;
  second.write_files = false;
  const auto tail = train(c2, second);
  // The resumed run continues the schedule at the saved iteration.
  ASSERT_FALSE(tail.log.empty());
  EXPECT_EQ(tail.log.front().iteration, 3u);
  EXPECT_EQ(tail.log.front().lr, poly_lr(c.baselr, 3, c.total_iters));
  for (std::size_t i = 0; i < tail.log.size(); ++i)
    EXPECT_EQ(log_csv_row(tail.log[i]), log_csv_row(full.log[3 + i]));
  EXPECT_EQ(serialize_checkpoint(tail.checkpoint), serialize_checkpoint(full.checkpoint));
}

TEST(Train, SameSeedGivesIdenticalLogs) {
  TrainConfig c = tiny("det");
  c.total_iters = 3;
  const auto a = train(c), b = train(c, {nullptr, 0, false, {}});
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(log_csv_row(a.log[i]), log_csv_row(b.log[i]));
}

TEST(Train, NonFiniteLossWritesDiagnosticAndThrows) {
  TrainConfig c = tiny("nan");
  c.baselr = 1e300;
  c.total_iters = 4;
  EXPECT_THROW(train(c), NumericError);
  const fs::path diag = fs::path(c.out) / "diagnostic.json";
  ASSERT_TRUE(fs::exists(diag));
  const auto j = nlohmann::json::parse(slurp(diag));
  EXPECT_TRUE(j.contains("iteration"));
}

TEST(Evaluate, EmptyDatasetIsUsageError) {
  const auto m = pipeline::Model::init(tiny("empty").model_config(), 0);
  Dataset empty{Tensor::zeros({0, 3, 32, 32}), {0, 32, 32, {}}};
  EXPECT_THROW(evaluate(m, empty), UsageError);
}

TEST(Evaluate, ZeroClassifierIsChanceLevel) {
  // Zero logits everywhere: argmax ties resolve to category 0, so IoU_0 is the
  // background share and every other category scores 0.
  const TrainConfig c = tiny("chance");
  pipeline::Model m = pipeline::Model::init(c.model_config(), 0);
  for (Tensor t : {m.classifier.weight, m.classifier.bias})
    for (double& v : t.mutable_data()) v = 0.0;
  const Dataset d = training_set(c);
  const auto hist = label_histogram(d, c.num_categories);
  double n = 0.0;
  for (auto h : hist) n += static_cast<double>(h);
  const auto r = evaluate(m, d);
  EXPECT_DOUBLE_EQ(r.iou.per_category[0], hist[0] / n);
  EXPECT_DOUBLE_EQ(r.iou.mean, hist[0] / n / 3.0);
  EXPECT_DOUBLE_EQ(r.pixel_accuracy, hist[0] / n);
  EXPECT_EQ(r.mask_alignment.size(), 3u);
  const auto j = nlohmann::json::parse(r.json());
  EXPECT_TRUE(j.contains("miou"));
  EXPECT_EQ(r.per_category_csv().substr(0, 16), "category_id,iou\n");
}

TEST(Evaluate, CheckpointReloadReproducesMetricsExactly) {
  TrainConfig c = tiny("reload");
  c.total_iters = 2;
  const auto r = train(c);
  const auto loaded = load_checkpoint((fs::path(c.out) / "checkpoint.cftk").string());
  const Dataset d = held_out_set(c);
  EXPECT_EQ(evaluate(restore_model(loaded), d).json(), evaluate(r.model, d).json());
}

TEST(Flops, MatchesCountedMultiplyAddsOfForward) {
  for (core::Variant v : core::all_variants()) {
    TrainConfig c = tiny("flops");
    c.variant = v;
    const auto cfg = c.model_config();
    const auto m = pipeline::Model::init(cfg, 0);
    MacCounter::reset();
    pipeline::forward(Tensor::zeros({2, 3, 32, 32}), m);
    EXPECT_EQ(count_flops(cfg, 2).total_macs, MacCounter::value()) << to_string(v);
    EXPECT_EQ(count_flops(cfg, 2).total_params, m.parameter_count()) << to_string(v);
  }
}

TEST(Flops, AdditiveAndLinearInBatch) {
  const auto cfg = flops_toy_config();
  const auto one = count_flops(cfg, 1), three = count_flops(cfg, 3);
  std::uint64_t sum = 0, params = 0;
  for (const auto& m : one.modules) sum += m.macs, params += m.params;
  EXPECT_EQ(sum, one.total_macs);
  EXPECT_EQ(params, one.total_params);
  EXPECT_EQ(three.total_macs, 3 * one.total_macs);
  EXPECT_EQ(three.total_params, one.total_params);
  EXPECT_EQ(one.aggregation_macs(),
            one.find("block1")->macs + one.find("block2")->macs + one.find("block3")->macs);
  EXPECT_NE(one.csv().find("block1"), std::string::npos);
  EXPECT_TRUE(nlohmann::json::parse(one.json()).contains("total_macs"));
}

TEST(Flops, MatmulAndConvDefinitions) {
  MacCounter::reset();
  ops::matmul(Tensor::zeros({3, 5}), Tensor::zeros({5, 7}));
  EXPECT_EQ(MacCounter::value(), 3u * 5 * 7);
  MacCounter::reset();
  ops::conv1x1(Tensor::zeros({2, 4, 3, 3}), Tensor::zeros({6, 4}));
  EXPECT_EQ(MacCounter::value(), 2u * 3 * 3 * 4 * 6);
}

TEST(Flops, ToyConfigOrderingNaiveAvgPoolCft) {
  const auto naive = count_flops(flops_toy_config(core::Variant::kNaive));
  const auto pool = count_flops(flops_toy_config(core::Variant::kAvgPool));
  const auto cft = count_flops(flops_toy_config(core::Variant::kCft));
  EXPECT_GT(naive.total_macs, pool.total_macs);
  EXPECT_GE(pool.total_macs, cft.total_macs);
}

TEST(Flops, NaiveOverCftAggregationRatioGrowsWithResolution) {
  double prev = 0.0;
  for (std::size_t s : {64u, 128u, 256u}) {
    auto n = flops_toy_config(core::Variant::kNaive), c = flops_toy_config(core::Variant::kCft);
    n.input_size = c.input_size = s;
    const double r = static_cast<double>(count_flops(n).aggregation_macs()) /
                     static_cast<double>(count_flops(c).aggregation_macs());
    EXPECT_GT(r, prev) << s;
    prev = r;
  }
}

TEST(Flops, CftMinusNoneIsThreeBlocks) {
  const auto cfg = flops_toy_config();
  auto none = cfg;
  none.variant = core::Variant::kNone;
  const auto m = pipeline::Model::init(tiny("params").model_config(), 0);
  std::uint64_t blocks = 0;
  for (const auto& b : m.blocks) blocks += b.parameter_count();
  auto tiny_none = tiny("params").model_config();
  tiny_none.variant = core::Variant::kNone;
  EXPECT_EQ(m.parameter_count() - pipeline::Model::init(tiny_none, 0).parameter_count(), blocks);
  EXPECT_EQ(count_flops(cfg).total_params - count_flops(none).total_params,
            3 * block_params(core::Variant::kCft, cfg.block_config()));
}

TEST(GradCheck, SuitePassesWithCappedCoordinates) {
  GradCheckOptions o;
  o.max_coords_per_tensor = 6;
  const auto r = run_gradcheck_suite(o);
  EXPECT_TRUE(r.passed()) << r.csv();
  for (const char* g : {"model.backbone", "model.block1", "model.block3", "model.classifier", "loss.ce", "loss.dice",
                        "loss.focal", "loss.total", "linear_model"})
    EXPECT_NE(r.find(g), nullptr) << g;
  EXPECT_LE(r.find("linear_model")->max_rel_error, 1e-10);
}

TEST(GradCheck, BrokenBackwardRuleIsReported) {
  Rng rng(1);
  Tensor x = uniform_tensor({5}, -1.0, 1.0, rng, true);
  auto square_with_wrong_grad = [&] {
    std::vector<double> y(5);
    for (std::size_t i = 0; i < 5; ++i) y[i] = x.data()[i] * x.data()[i];
    const Tensor xin = x;
    Tensor out = record_op("broken_square", {5}, y, {x}, [xin](const std::vector<double>& g, const GradRefs& in) {
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * 3.0 * xin.data()[i];  // should be 2x
    });
    return ops::sum(out);
  };
  const auto e = check_leaves("broken", square_with_wrong_grad, {x}, 1e-4);
  EXPECT_FALSE(e.passed);
  EXPECT_GT(e.max_rel_error, 0.3);
}

TEST(Ablation, EntryParsingAndLabels) {
  const auto e = AblationEntry::parse("cft:off");
  EXPECT_EQ(e.variant, core::Variant::kCft);
  EXPECT_EQ(e.mask_loss, losses::MaskLossMode::kOff);
  EXPECT_EQ(e.label(), "cft_off");
  EXPECT_EQ(AblationEntry::parse("naive").label(), "naive");
  EXPECT_THROW(AblationEntry::parse("cft:sometimes"), ConfigError);
  EXPECT_EQ(default_ablation_entries().size(), core::all_variants().size() + 1);
}

TEST(Ablation, IdenticalEntriesGiveIdenticalRowsAndGain) {
  TrainConfig c = tiny("ablation");
  c.total_iters = 2;
  const auto r = run_ablation(c, {AblationEntry::parse("cft"), AblationEntry::parse("cft"),
                                  AblationEntry::parse("none")});
  ASSERT_EQ(r.rows.size(), 3u);
  std::istringstream csv(r.csv());
  std::string header, a, b, n;
  std::getline(csv, header);
  std::getline(csv, a);
  std::getline(csv, b);
  std::getline(csv, n);
  EXPECT_EQ(header,
            "label,variant,mask_loss,params,flops,miou,pixel_acc,train_miou,train_pixel_acc,mask_align_s4,mask_align_s3,"
            "mask_align_s2");
  EXPECT_EQ(a, b);
  EXPECT_EQ(r.rows[0].params - r.rows[2].params,
            3 * block_params(core::Variant::kCft, c.model_config().block_config()));
  EXPECT_GT(r.rows[0].flops, r.rows[2].flops);
  ASSERT_TRUE(r.gain().has_value());
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "ablation.csv"));
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "gain.csv"));
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "cft" / "eval.json"));
}
