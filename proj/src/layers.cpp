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

#include "sspnet/layers.hpp"

#include <cmath>

namespace sspnet {

Var ParamBinding::operator()(const Tensor& param) {
  auto it = vars_.find(&param);
  if (it != vars_.end()) return it->second;
  Var v = tape_->leaf(param, trainable_);
  vars_.emplace(&param, v);
  return v;
}

Tensor ParamBinding::grad(const Tensor& param) const {
  auto it = vars_.find(&param);
  if (it == vars_.end()) return Tensor::zeros(param.shape());
  return it->second.grad();
}

ConvLayer make_conv(Index in, Index out, Index kernel, Conv2dSpec spec, Rng& rng) {
  ConvLayer layer{Tensor({out, in, kernel, kernel}), Tensor::zeros({out}), spec};
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  for (Index i = 0; i < layer.weight.numel(); ++i) layer.weight[i] = std_dev * rng.normal();
  return layer;
}

Var apply(const ConvLayer& layer, const Var& x, ParamBinding& bind) {
  return conv2d(x, bind(layer.weight), bind(layer.bias), layer.spec);
}

Linear make_linear(Index in, Index out, Rng& rng) {
  Linear layer{Tensor({in, out}), Tensor::zeros({out})};
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
  for (Index i = 0; i < layer.weight.numel(); ++i) layer.weight[i] = std_dev * rng.normal();
  return layer;
}

Var apply(const Linear& layer, const Var& x, ParamBinding& bind) {
  return add_bias(matmul(x, bind(layer.weight)), bind(layer.bias));
}

}  // namespace sspnet
