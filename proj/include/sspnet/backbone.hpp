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

#include <vector>

#include "sspnet/layers.hpp"

namespace sspnet {

inline constexpr int kFirstLevel = 2;
inline constexpr int kLastLevel = 5;
inline constexpr int kNumLevels = kLastLevel - kFirstLevel + 1;

/// Per-level maps C_k / P'_k / P_k for k = 2..5; level k has stride 2^k.
struct FeaturePyramid {
  std::vector<Var> levels;
  std::vector<Index> strides;

  const Var& level(int k) const { return levels.at(static_cast<size_t>(k - kFirstLevel)); }
  Var& level(int k) { return levels.at(static_cast<size_t>(k - kFirstLevel)); }
  Index stride(int k) const { return strides.at(static_cast<size_t>(k - kFirstLevel)); }
  size_t size() const { return levels.size(); }
  Index channels() const { return levels.at(0).value().dim(1); }
};

struct BackboneConfig {
  Index in_channels = 1;
  std::vector<Index> stage_channels{4, 4, 4, 4, 4};
  Index channels = 4;
};

/// Five stages of (3x3 conv, relu, stride-2 3x3 conv, relu); stages 2..5 feed 1x1 laterals.
struct BackboneParams {
  std::vector<ConvLayer> stage_conv;
  std::vector<ConvLayer> stage_down;
  std::vector<ConvLayer> laterals;

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    for (size_t s = 0; s < self.stage_conv.size(); ++s) {
      ConvLayer::visit(self.stage_conv[s], prefix + "backbone.stage" + std::to_string(s + 1) + ".conv", f);
      ConvLayer::visit(self.stage_down[s], prefix + "backbone.stage" + std::to_string(s + 1) + ".down", f);
    }
    for (size_t l = 0; l < self.laterals.size(); ++l) {
      ConvLayer::visit(self.laterals[l], prefix + "backbone.lateral" + std::to_string(l + kFirstLevel), f);
    }
  }
};

BackboneParams init_backbone(const BackboneConfig& config, Rng& rng);

/// C2..C5 from an [N,1,H,W] image; H and W must be multiples of 32.
FeaturePyramid extract_features(const Var& image, const BackboneParams& params, ParamBinding& bind);

/// Plain top-down merge: P'_5 = C_5, P'_{k-1} = up2(P'_k) + C_{k-1}.
FeaturePyramid fpn_merge_baseline(const FeaturePyramid& pyramid);

}  // namespace sspnet
