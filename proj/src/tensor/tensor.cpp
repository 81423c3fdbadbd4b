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

#include "cft/tensor/tensor.hpp"

#include <atomic>
#include <sstream>

#include "cft/error.hpp"

namespace cft {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (cft::numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     cft::to_string(shape));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
  impl_->id = detail::next_tensor_id();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::ones(const Shape& shape, bool requires_grad) { return full(shape, 1.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(cft::numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("access to undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + cft::to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return cft::numel(shape()); }

std::uint64_t Tensor::id() const { return impl_ ? impl_->id : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw UsageError("access to undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw UsageError("access to undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + cft::to_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + cft::to_string(s));
  std::size_t offset = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for " + cft::to_string(s));
    offset = offset * s[axis] + i;
    ++axis;
  }
  return impl_->data[offset];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw UsageError("set_requires_grad on undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (!impl_) throw UsageError("grad of undefined tensor");
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
  if (!impl_) return Tensor();
  return Tensor(impl_->shape, impl_->data, false);
}

}  // namespace cft
