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

#include "cft/tensor/tape.hpp"

#include "cft/error.hpp"

namespace cft {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_macs = 0;

std::vector<double>& ensure_grad(detail::TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

}  // namespace

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::append(Record record) { records_.push_back(std::move(record)); }

void Tape::clear() { records_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  auto& seed = ensure_grad(*loss.impl());
  seed[0] += 1.0;

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    Record& rec = *it;
    if (rec.output->grad.empty()) continue;  // not on a path to the loss
    GradRefs refs;
    refs.reserve(rec.inputs.size());
    bool any = false;
    for (auto& in : rec.inputs) {
      if (in->requires_grad) {
        refs.push_back(&ensure_grad(*in));
        any = true;
      } else {
        refs.push_back(nullptr);
      }
    }
    if (any) rec.backward(rec.output->grad, refs);
  }
}

Tensor record_op(std::string op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                 BackwardFn backward) {
  bool needs_grad = false;
  for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  Tape* tape = Tape::active();
  Tensor out(std::move(shape), std::move(data), needs_grad && tape != nullptr);
  if (out.requires_grad()) {
    Tape::Record rec;
    rec.op = std::move(op);
    rec.inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) rec.inputs.push_back(t.impl());
    rec.output = out.impl();
    rec.backward = std::move(backward);
    tape->append(std::move(rec));
  }
  return out;
}

std::uint64_t MacCounter::value() { return g_macs; }

void MacCounter::reset() { g_macs = 0; }

void MacCounter::add(std::uint64_t macs) { g_macs += macs; }

}  // namespace cft
