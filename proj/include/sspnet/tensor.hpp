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

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "sspnet/errors.hpp"

namespace sspnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_str(std::span<const Index> shape);
Index shape_numel(std::span<const Index> shape);

/// Dense row-major f64 array. Value semantics; rank 4 tensors use NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Eigen::ArrayXd data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<size_t>(axis)); }
  Index numel() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Eigen::ArrayXd& data() { return data_; }
  const Eigen::ArrayXd& data() const { return data_; }

  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }

  /// NCHW element access; requires rank 4.
  double& at(Index n, Index c, Index h, Index w) { return data_[offset(n, c, h, w)]; }
  double at(Index n, Index c, Index h, Index w) const { return data_[offset(n, c, h, w)]; }
  Index offset(Index n, Index c, Index h, Index w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  double item() const;
  bool all_finite() const { return data_.allFinite(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Shape shape_;
  Eigen::ArrayXd data_;
};

/// Largest elementwise absolute difference; throws on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

// "SSPT" binary format: magic, u32 rank, u32 dims..., f64 payload. Little-endian.
void write_sspt(const Tensor& t, std::ostream& out);
Tensor read_sspt(std::istream& in);
void save_sspt(const Tensor& t, const std::filesystem::path& path);
Tensor load_sspt(const std::filesystem::path& path);

}  // namespace sspnet
