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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cft/tensor/tensor.hpp"

namespace cft::harness {

inline constexpr char kCheckpointMagic[4] = {'C', 'F', 'T', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedBlob {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

/// On-disk layout, all integers and floats little-endian:
///
///   "CFTK" | u32 version | u64 iteration | u32 len, config text
///   | u32 count, records | u32 count, moment records
///
/// record = u32 name length, name | u32 rank, u64 extents... | u64 count, f64 values
/// Moments are stored as "m/<param>" and "v/<param>" records.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t iteration = 0;
  std::string config_text;
  std::vector<NamedBlob> tensors;
  std::vector<NamedBlob> moments;

  const NamedBlob* find(const std::string& name) const;
};

/// Writes to `path + ".tmp"` then renames over `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// Throws FormatError on bad magic, unsupported version or truncation.
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace cft::harness
