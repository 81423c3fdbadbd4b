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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cft/tensor/tensor.hpp"

namespace cft {

/// Gradient buffers handed to a backward rule, one per op input.
/// An entry is null when that input does not participate in differentiation.
using GradRefs = std::vector<std::vector<double>*>;

/// Backward rule of one op: accumulate d(loss)/d(input) into the buffers
/// given d(loss)/d(output).
using BackwardFn = std::function<void(const std::vector<double>& grad_out, const GradRefs& grad_in)>;

/// Ordered record of differentiable ops.
///
/// Records are appended as ops execute, so every record's inputs were
/// produced by an earlier record or are leaves. backward() walks the records
/// in reverse exactly once each. A tape is single-writer; it becomes the
/// recording target of the calling thread while a Tape::Scope is alive.
class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  /// Tape that records on this thread, or null (inference mode).
  static Tape* active();

  void append(Record record);
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear();

  /// Reverse-mode sweep seeded with d(loss)/d(loss) = 1. Gradients accumulate
  /// into every grad-enabled tensor reached, in tape order.
  void backward(const Tensor& loss);

 private:
  std::vector<Record> records_;
};

/// Records `output = op(inputs)` on the active tape when any input requires
/// grad; otherwise returns a plain tensor. Every op in the engine goes
/// through here, and custom ops may too.
Tensor record_op(std::string op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                 BackwardFn backward);

/// Running count of multiply-adds performed by linear-algebra ops on this thread.
/// Elementwise, normalization, resize and pooling ops are not counted.
class MacCounter {
 public:
  static std::uint64_t value();
  static void reset();
  static void add(std::uint64_t macs);
};

}  // namespace cft
