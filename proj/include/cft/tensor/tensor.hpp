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
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cft {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  std::uint64_t id = 0;
};

std::uint64_t next_tensor_id();

}  // namespace detail

/// Dense row-major tensor of doubles with shared ownership of its storage.
///
/// Copies of a Tensor alias the same storage, which is how parameters are
/// shared between a model and its optimizer. Results of ops are never
/// mutated afterwards; only leaves (parameters, inputs) are written to, and
/// only between forward/backward passes.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor ones(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::uint64_t id() const;

  std::span<const double> data() const;
  /// Write access for leaves; writing into an op result that is still on a tape is undefined.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  /// Accumulated gradient; zeros if no backward pass has reached this tensor.
  std::vector<double> grad() const;
  void zero_grad();

  /// Deep copy that does not require grad.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
  friend Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl);

  std::shared_ptr<detail::TensorImpl> impl_;
};

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl);

}  // namespace cft
