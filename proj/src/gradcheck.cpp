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

#include "sspnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sspnet {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(numeric));
}

namespace {

struct Evaluation {
  double value;
  std::uint64_t kinks;
};

Evaluation evaluate(const ScalarGraph& f, const Tensor& x) {
  Tape tape;
  Var out = f(tape, tape.leaf(x, false));
  return {out.value().item(), tape.kink_signature()};
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarGraph& f, const Tensor& x, double eps,
                                  std::span<const Index> coordinates) {
  if (eps <= 0.0) throw ArgumentError("finite_diff_check: eps must be positive");
  Tensor analytic;
  std::uint64_t base_kinks = 0;
  {
    Tape tape;
    Var leaf = tape.leaf(x, true);
    Var out = f(tape, leaf);
    tape.backward(out);
    analytic = leaf.grad();
    base_kinks = tape.kink_signature();
  }

  std::vector<Index> all;
  if (coordinates.empty()) {
    all.resize(static_cast<size_t>(x.numel()));
    std::iota(all.begin(), all.end(), Index{0});
    coordinates = all;
  }

  GradCheckResult result;
  Tensor probe = x;
  for (Index i : coordinates) {
    const double original = probe[i];
    probe[i] = original + eps;
    const Evaluation plus = evaluate(f, probe);
    probe[i] = original - eps;
    const Evaluation minus = evaluate(f, probe);
    probe[i] = original;

    const double numeric = (plus.value - minus.value) / (2.0 * eps);
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
    if (plus.kinks != base_kinks || minus.kinks != base_kinks) ++result.kink_crossings;
    ++result.coordinates_checked;
  }
  return result;
}

ParamPack::ParamPack(std::vector<Tensor*> params) : params_(std::move(params)) {
  for (const Tensor* t : params_) total_ += t->numel();
}

Tensor ParamPack::pack() const {
  Tensor flat({std::max<Index>(total_, 1)});
  Index off = 0;
  for (const Tensor* t : params_) {
    flat.data().segment(off, t->numel()) = t->data();
    off += t->numel();
  }
  return flat;
}

void ParamPack::unpack(const Tensor& flat) const {
  Index off = 0;
  for (Tensor* t : params_) {
    t->data() = flat.data().segment(off, t->numel());
    off += t->numel();
  }
}

}  // namespace sspnet
