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

#include <string>
#include <unordered_map>

#include "sspnet/autograd.hpp"
#include "sspnet/rng.hpp"

namespace sspnet {

/// Maps parameter tensors onto tape leaves for one forward pass.
class ParamBinding {
 public:
  explicit ParamBinding(Tape& tape, bool trainable = true) : tape_(&tape), trainable_(trainable) {}

  Var operator()(const Tensor& param);
  /// Routes `param` to an existing variable (e.g. a slice of a packed parameter vector).
  void bind(const Tensor& param, const Var& v) { vars_.insert_or_assign(&param, v); }
  /// Gradient of a bound parameter after backward; zeros if it never entered the graph.
  Tensor grad(const Tensor& param) const;
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  bool trainable_;
  std::unordered_map<const Tensor*, Var> vars_;
};

struct ConvLayer {
  Tensor weight;  // [O, C, k, k]
  Tensor bias;    // [O]
  Conv2dSpec spec;

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".weight", self.weight);
    f(prefix + ".bias", self.bias);
  }
};

/// He-normal weights, zero bias.
ConvLayer make_conv(Index in, Index out, Index kernel, Conv2dSpec spec, Rng& rng);
Var apply(const ConvLayer& layer, const Var& x, ParamBinding& bind);

struct Linear {
  Tensor weight;  // [D, O]
  Tensor bias;    // [O]

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".weight", self.weight);
    f(prefix + ".bias", self.bias);
  }
};

Linear make_linear(Index in, Index out, Rng& rng);
Var apply(const Linear& layer, const Var& x, ParamBinding& bind);

/// Total scalar count over every tensor reached by P::visit.
template <class P>
Index parameter_count(const P& params) {
  Index n = 0;
  P::visit(params, "", [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

}  // namespace sspnet
