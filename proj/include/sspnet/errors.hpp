/* Copyright 2026 The sspnet-toy Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace sspnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar or structural argument is outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Convolution/upsampling geometry produces an empty or misaligned output.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// Input data is inconsistent (unknown ids, malformed annotations).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sspnet
