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

#include <stdexcept>
#include <string>

namespace cft {

/// Operand extents do not agree with what an op requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid model, loss or training configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse, e.g. calling backward on a non-scalar or evaluating an empty dataset.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or truncated checkpoint / config / data file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss that has no scored elements (every pixel ignored).
class UndefinedLossError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Training produced a NaN or infinite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cft
