// Copyright 2026 The lowbit Authors
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

#ifndef LOWBIT_ERRORS_HPP_
#define LOWBIT_ERRORS_HPP_

#include <stdexcept>
#include <string>
#include <utility>

namespace lowbit {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Integer index outside its valid range (token ids, class labels).
class IndexError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// No assignment satisfies the bit budget.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Problem instance too large for the requested solver.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes or documents on input.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration. `field` is a dotted path like "quant.target_bits".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace lowbit

#endif  // LOWBIT_ERRORS_HPP_
