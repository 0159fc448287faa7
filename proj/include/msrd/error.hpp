/*
 * Copyright 2026 The msrd authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace msrd {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid argument value (rates, dilations, weights, ...).
struct ParamError : Error {
  explicit ParamError(const std::string& msg) : Error(msg) {}
};

/// Tensor / sequence dimension mismatch.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Malformed or inconsistent on-disk data (archives, checkpoints).
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

/// Invalid run configuration.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Dataset problems (empty splits, missing samples).
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

/// Unknown name in a registry lookup.
struct LookupError : Error {
  explicit LookupError(const std::string& msg) : Error(msg) {}
};

}  // namespace msrd
