/*
 * Copyright (c) 2026, The rsfme Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
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

namespace rsfme {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or configuration values that violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad user input: flags, config keys, out-of-range parameters.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, missing or malformed data on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf produced by a forward op, or a diverging loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace rsfme
