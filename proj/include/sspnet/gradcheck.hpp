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

#include <functional>
#include <span>
#include <vector>

#include "sspnet/autograd.hpp"

namespace sspnet {

/// Builds a scalar graph from a leaf holding the probed tensor.
using ScalarGraph = std::function<Var(Tape&, const Var&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  Index coordinates_checked = 0;
  /// Coordinates whose ±eps probes changed some relu's active set. A non-zero count means
  /// the function is not differentiable inside the probe interval at this point.
  Index kink_crossings = 0;
};

/// |analytic − numeric| / max(1e-12, |numeric|).
double relative_error(double analytic, double numeric);

/// Central-difference check of the autograd gradient of `f` at `x`. When `coordinates`
/// is empty every coordinate is probed.
GradCheckResult finite_diff_check(const ScalarGraph& f, const Tensor& x, double eps = 1e-5,
                                  std::span<const Index> coordinates = {});

/// Concatenates several tensors into one rank-1 tensor and writes it back.
class ParamPack {
 public:
  explicit ParamPack(std::vector<Tensor*> params);

  Tensor pack() const;
  void unpack(const Tensor& flat) const;
  Index size() const { return total_; }

 private:
  std::vector<Tensor*> params_;
  Index total_ = 0;
};

}  // namespace sspnet
