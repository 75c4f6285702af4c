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

#include "sspnet/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sspnet {

std::string shape_str(std::span<const Index> shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Index shape_numel(std::span<const Index> shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_ = Eigen::ArrayXd::Constant(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
  }
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  Eigen::ArrayXd d(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) d[i++] = v;
  return Tensor(std::move(shape), std::move(d));
}

double Tensor::item() const {
  if (numel() != 1) throw ArgumentError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.numel() == 0) return 0.0;
  return (a.data() - b.data()).abs().maxCoeff();
}

namespace {

constexpr std::array<char, 4> kMagic = {'S', 'S', 'P', 'T'};

template <class T>
void put_le(std::ostream& out, T v) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw IoError("truncated SSPT stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

}  // namespace

void write_sspt(const Tensor& t, std::ostream& out) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (Index i = 0; i < t.numel(); ++i) put_le<double>(out, t[i]);
}

Tensor read_sspt(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw IoError("not an SSPT stream");
  auto rank = get_le<std::uint32_t>(in);
  if (rank == 0 || rank > 8) throw IoError("SSPT rank out of range: " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint32_t>(in);
  Tensor t(shape);
  for (Index i = 0; i < t.numel(); ++i) t[i] = get_le<double>(in);
  return t;
}

void save_sspt(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_sspt(t, out);
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor load_sspt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_sspt(in);
}

}  // namespace sspnet
