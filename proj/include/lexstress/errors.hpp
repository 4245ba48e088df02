// Copyright 2026 The lexstress Authors
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

#ifndef LEXSTRESS_ERRORS_HPP
#define LEXSTRESS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace lexstress {

// Error taxonomy. The CLI maps these onto exit codes:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration values, incompatible shapes/architectures, unusable
// parameter combinations.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Missing or malformed input files and invariant violations in ingested data.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Runtime numerical failures: divergence, zero variance, singular denominators.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Tensor/layer geometry mismatches. A configuration problem at heart.
class ShapeError : public ConfigError {
public:
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

// Corrupt or foreign binary payloads (weight files, WAV headers).
class FormatError : public DataError {
public:
    explicit FormatError(const std::string& msg) : DataError(msg) {}
};

}  // namespace lexstress

#endif  // LEXSTRESS_ERRORS_HPP
