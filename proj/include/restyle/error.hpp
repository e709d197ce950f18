// Copyright 2026 The ReStyle Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RESTYLE_ERROR_HPP_
#define RESTYLE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace restyle {

// Root of every error thrown by the library. The CLI maps the concrete
// subclasses onto its fixed exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf inputs, divergence, degenerate numerical problems.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A domain invariant or operation precondition was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A serialized file carries a schema version this build does not read.
class VersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Bad or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace restyle

#endif  // RESTYLE_ERROR_HPP_
