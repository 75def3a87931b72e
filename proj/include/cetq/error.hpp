// Copyright 2026 The cetq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cetq {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, sizes or options that do not fit together.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared. `layer()` is the offending layer when known.
class NumericalError : public Error {
 public:
  static constexpr std::size_t kNoLayer = static_cast<std::size_t>(-1);

  explicit NumericalError(const std::string& what, std::size_t layer = kNoLayer)
      : Error(layer == kNoLayer ? what : what + " (layer " + std::to_string(layer) + ")"),
        layer_(layer) {}

  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

/// Lanczos hit an invariant subspace before producing any converged pair.
class SpectralBreakdown : public Error {
 public:
  using Error::Error;
};

/// The requested size target cannot be met.
class InfeasibleTarget : public Error {
 public:
  using Error::Error;
};

/// The short-axis set ended up empty.
class NoConstraintError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a container file failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Wraps an error with the pipeline stage it came from.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace cetq
