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
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

Result run(const std::string& args) {
  Result r;
  const std::string cmd = std::string(CFT_BINARY) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p) != nullptr) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string tmp(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cft_cli_test_" + name);
  fs::remove_all(p);
  return p.string();
}

const std::string kTiny =
    " --set crop_size=32 --set channels=8 --set heads=2 --set ffn_ratio=2 --set num_categories=3"
    " --set backbone_widths=4,4,8,8 --set n_images=2 --set eval_images=2 --set batch_size=2";

}  // namespace

TEST(Cli, UnknownVerbIsUsageError) {
  const Result r = run("frobnicate");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("\"error\""), std::string::npos);
}

TEST(Cli, BadConfigValueExitsTwoWithJsonLine) {
  const Result r = run("train --out " + tmp("badcfg") + kTiny + " --set heads=3");
  EXPECT_EQ(r.code, 2) << r.out;
  const auto line = r.out.substr(r.out.rfind('{'));
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["error"], "config");
}

TEST(Cli, CorruptCheckpointExitsThree) {
  const std::string path = tmp("corrupt") + ".cftk";
  std::ofstream(path) << "NOPE";
  const Result r = run("eval --checkpoint " + path);
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST(Cli, TrainEvalAndFlopsSucceed) {
  const std::string out = tmp("train");
  Result r = run("train --out " + out + " --set total_iters=2" + kTiny);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(fs::path(out) / "train_log.csv"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "config.txt"));
  r = run("eval --checkpoint " + out + "/checkpoint.cftk --split heldout --out " + out + "/eval");
  EXPECT_EQ(r.code, 0) << r.out;
  r = run("flops --variant naive --size 64 --json");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("total_macs"), std::string::npos);
}

TEST(Cli, NonFiniteLossExitsFour) {
  const Result r = run("train --out " + tmp("nan") + " --set total_iters=3 --set baselr=1e300" + kTiny);
  EXPECT_EQ(r.code, 4) << r.out;
}

TEST(Cli, GenDataWritesManifest) {
  const std::string out = tmp("data");
  const Result r = run("gen-data --n 2 --size 32 --categories 3 --out " + out);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(fs::path(out) / "manifest.json"));
}
