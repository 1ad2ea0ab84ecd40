// Copyright 2026 The cslvm Authors.
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

#ifndef CSLVM_ERROR_H_
#define CSLVM_ERROR_H_

#include <stdexcept>
#include <string>

namespace cslvm {

// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to the op's shape rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A forward value became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration or misuse of an API contract.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (dataset, grammar, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cslvm

#endif  // CSLVM_ERROR_H_
