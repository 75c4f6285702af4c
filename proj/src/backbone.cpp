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

#include "sspnet/backbone.hpp"

namespace sspnet {

BackboneParams init_backbone(const BackboneConfig& config, Rng& rng) {
  if (config.stage_channels.size() != 5) throw ArgumentError("backbone needs exactly five stage widths");
  BackboneParams p;
  Index in = config.in_channels;
  for (Index width : config.stage_channels) {
    p.stage_conv.push_back(make_conv(in, width, 3, {1, 1, 1}, rng));
    p.stage_down.push_back(make_conv(width, width, 3, {2, 1, 1}, rng));
    in = width;
  }
  for (size_t s = 1; s < 5; ++s) p.laterals.push_back(make_conv(config.stage_channels[s], config.channels, 1, {}, rng));
  return p;
}

FeaturePyramid extract_features(const Var& image, const BackboneParams& params, ParamBinding& bind) {
  const Tensor& img = image.value();
  if (img.rank() != 4) throw DimensionError("extract_features: image must be [N,C,H,W], got " + shape_str(img.shape()));
  if (img.dim(2) % 32 != 0 || img.dim(3) % 32 != 0) {
    throw ArgumentError("extract_features: image dims " + shape_str(img.shape()) + " must be multiples of 32");
  }
  FeaturePyramid out;
  Var x = image;
  Index stride = 1;
  for (size_t s = 0; s < params.stage_conv.size(); ++s) {
    x = relu(apply(params.stage_conv[s], x, bind));
    x = relu(apply(params.stage_down[s], x, bind));
    stride *= 2;
    if (s == 0) continue;
    out.levels.push_back(apply(params.laterals[s - 1], x, bind));
    out.strides.push_back(stride);
  }
  return out;
}

FeaturePyramid fpn_merge_baseline(const FeaturePyramid& pyramid) {
  if (pyramid.size() < 2) throw ArgumentError("fpn_merge_baseline: need at least two levels");
  const Index channels = pyramid.channels();
  for (const Var& c : pyramid.levels) {
    if (c.value().dim(1) != channels) throw DimensionError("fpn_merge_baseline: non-uniform channel counts");
  }
  FeaturePyramid merged = pyramid;
  for (size_t i = pyramid.size() - 1; i-- > 0;) {
    merged.levels[i] = add(nearest_upsample(merged.levels[i + 1], 2), pyramid.levels[i]);
  }
  return merged;
}

}  // namespace sspnet
