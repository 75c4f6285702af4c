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

#include "sspnet/backbone.hpp"

namespace sspnet {

/// Hierarchical attention maps A_k, each [N,1,H_k,W_k] with values in (0,1).
struct AttentionPyramid {
  std::vector<Var> maps;
  std::vector<Index> strides;

  const Var& level(int k) const { return maps.at(static_cast<size_t>(k - kFirstLevel)); }
  size_t size() const { return maps.size(); }
};

struct CamConfig {
  std::vector<Index> aspp_rates{1, 2, 4};
  Index context_channels = 16;  // concat width: levels x pyramid channels
  Index channels = 4;           // ASPP branch and fused width
  Index levels = kNumLevels;
};

struct CamParams {
  ConvLayer aspp_point;                // 1x1 branch
  std::vector<ConvLayer> aspp_atrous;  // one dilated 3x3 branch per rate
  ConvLayer aspp_fuse;                 // 1x1 over the concatenated branches
  std::vector<ConvLayer> gates;        // phi_k: 3x3, stride 2^(k-2), one output channel

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    ConvLayer::visit(self.aspp_point, prefix + "cam.aspp.point", f);
    for (size_t r = 0; r < self.aspp_atrous.size(); ++r) {
      ConvLayer::visit(self.aspp_atrous[r], prefix + "cam.aspp.atrous" + std::to_string(r), f);
    }
    ConvLayer::visit(self.aspp_fuse, prefix + "cam.aspp.fuse", f);
    for (size_t g = 0; g < self.gates.size(); ++g) {
      ConvLayer::visit(self.gates[g], prefix + "cam.gate" + std::to_string(g + kFirstLevel), f);
    }
  }
};

CamParams init_cam(const CamConfig& config, Rng& rng);

/// Upsamples every level to the bottom level's resolution and concatenates channels.
Var build_context(const FeaturePyramid& pyramid);

/// Parallel 1x1 and dilated 3x3 branches (padding = rate), concatenated and fused by 1x1.
Var aspp(const Var& x, const CamParams& params, ParamBinding& bind);

/// A_k = sigmoid(phi_k(F_c)) with phi_k a 3x3 conv of stride 2^(k-2), padding 1.
AttentionPyramid attention_heatmaps(const Var& context, const std::vector<ConvLayer>& gates, ParamBinding& bind);

/// build_context -> aspp -> attention_heatmaps.
AttentionPyramid context_attention(const FeaturePyramid& pyramid, const CamParams& params, ParamBinding& bind);

}  // namespace sspnet
