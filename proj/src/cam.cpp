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

#include "sspnet/cam.hpp"

namespace sspnet {

CamParams init_cam(const CamConfig& config, Rng& rng) {
  if (config.aspp_rates.empty()) throw ArgumentError("ASPP needs at least one rate");
  CamParams p;
  p.aspp_point = make_conv(config.context_channels, config.channels, 1, {}, rng);
  for (Index rate : config.aspp_rates) {
    if (rate < 1) throw ArgumentError("ASPP rate must be >= 1, got " + std::to_string(rate));
    p.aspp_atrous.push_back(make_conv(config.context_channels, config.channels, 3, {1, rate, rate}, rng));
  }
  const Index branches = static_cast<Index>(config.aspp_rates.size()) + 1;
  p.aspp_fuse = make_conv(branches * config.channels, config.channels, 1, {}, rng);
  for (Index l = 0; l < config.levels; ++l) {
    p.gates.push_back(make_conv(config.channels, 1, 3, {Index{1} << l, 1, 1}, rng));
  }
  return p;
}

Var build_context(const FeaturePyramid& pyramid) {
  if (pyramid.size() == 0) throw ArgumentError("build_context: empty pyramid");
  const Tensor& bottom = pyramid.levels.front().value();
  std::vector<Var> parts;
  for (size_t i = 0; i < pyramid.size(); ++i) {
    const Index factor = pyramid.strides[i] / pyramid.strides.front();
    Var up = nearest_upsample(pyramid.levels[i], factor);
    if (up.value().dim(2) != bottom.dim(2) || up.value().dim(3) != bottom.dim(3)) {
      throw DimensionError("build_context: level " + std::to_string(i + kFirstLevel) + " upsamples to " +
                           shape_str(up.shape()) + ", bottom is " + shape_str(bottom.shape()));
    }
    parts.push_back(up);
  }
  return concat(parts, 1);
}

Var aspp(const Var& x, const CamParams& params, ParamBinding& bind) {
  std::vector<Var> branches{apply(params.aspp_point, x, bind)};
  for (const ConvLayer& atrous : params.aspp_atrous) {
    if (atrous.spec.dilation < 1) throw ArgumentError("ASPP rate must be >= 1");
    branches.push_back(apply(atrous, x, bind));
  }
  return apply(params.aspp_fuse, concat(branches, 1), bind);
}

AttentionPyramid attention_heatmaps(const Var& context, const std::vector<ConvLayer>& gates, ParamBinding& bind) {
  const Tensor& fc = context.value();
  if (fc.rank() != 4) throw DimensionError("attention_heatmaps: context must be rank 4");
  const Index coarsest = gates.empty() ? 1 : gates.back().spec.stride;
  if (fc.dim(2) % coarsest != 0 || fc.dim(3) % coarsest != 0) {
    throw DegenerateGeometryError("attention_heatmaps: context " + shape_str(fc.shape()) +
                                  " does not divide down to stride " + std::to_string(coarsest));
  }
  AttentionPyramid out;
  for (const ConvLayer& gate : gates) {
    out.maps.push_back(sigmoid(apply(gate, context, bind)));
    out.strides.push_back(gate.spec.stride);
  }
  return out;
}

AttentionPyramid context_attention(const FeaturePyramid& pyramid, const CamParams& params, ParamBinding& bind) {
  AttentionPyramid a = attention_heatmaps(aspp(build_context(pyramid), params, bind), params.gates, bind);
  for (size_t i = 0; i < a.size(); ++i) {
    const Tensor& m = a.maps[i].value();
    const Tensor& c = pyramid.levels[i].value();
    if (m.dim(2) != c.dim(2) || m.dim(3) != c.dim(3)) {
      throw DimensionError("attention map " + shape_str(m.shape()) + " does not track feature level " +
                           shape_str(c.shape()));
    }
    a.strides[i] = pyramid.strides[i];
  }
  return a;
}

}  // namespace sspnet
