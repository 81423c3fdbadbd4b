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

#include "cft/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cft/error.hpp"

namespace cft::harness {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void put_blob(const NamedBlob& b) {
    put_string(b.name);
    put<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
    for (std::size_t d : b.shape) put<std::uint64_t>(d);
    put<std::uint64_t>(b.data.size());
    for (double v : b.data) put<double>(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  NamedBlob get_blob() {
    NamedBlob b;
    b.name = get_string();
    const auto rank = get<std::uint32_t>();
    for (std::uint32_t i = 0; i < rank; ++i) b.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>()));
    const auto count = get<std::uint64_t>();
    if (count != numel(b.shape)) throw FormatError("checkpoint record '" + b.name + "' has inconsistent length");
    need(count * sizeof(double));
    b.data.resize(count);
    std::memcpy(b.data.data(), in_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
    return b;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedBlob* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kCheckpointMagic) w.put<char>(c);
  w.put<std::uint32_t>(ckpt.version);
  w.put<std::uint64_t>(ckpt.iteration);
  w.put_string(ckpt.config_text);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& b : ckpt.tensors) w.put_blob(b);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.moments.size()));
  for (const auto& b : ckpt.moments) w.put_blob(b);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.iteration = r.get<std::uint64_t>();
  ckpt.config_text = r.get_string();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) ckpt.tensors.push_back(r.get_blob());
  const auto nm = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nm; ++i) ckpt.moments.push_back(r.get_blob());
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing checkpoint " + tmp);
  }
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace cft::harness
