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

#include <optional>

#include "sspnet/cam.hpp"

namespace sspnet {

enum class MergeRule { Baseline, Ssm };

struct NeckParams {
  std::vector<ConvLayer> output_convs;  // 3x3 anti-aliasing conv turning P'_k into P_k

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    for (size_t i = 0; i < self.output_convs.size(); ++i) {
      ConvLayer::visit(self.output_convs[i], prefix + "neck.out" + std::to_string(i + kFirstLevel), f);
    }
  }
};

NeckParams init_neck(Index channels, Rng& rng);

struct NeckOutput {
  FeaturePyramid merged;   // P'_k
  FeaturePyramid outputs;  // P_k
  std::optional<AttentionPyramid> attention;
  MergeRule provenance = MergeRule::Baseline;
};

/// Residual scale gating (1 + A) ⊙ F, with a single-channel A broadcast over channels.
Var sem(const Var& features, const Var& attention);

/// (A_{k-1} ⊙ up(A_k)) ⊙ up(P'_k) + C_{k-1}, nearest upsampling by 2.
Var ssm_merge(const Var& p_next, const Var& a_k, const Var& a_km1, const Var& c_km1);

/// Top-down chain over already-enhanced laterals: P'_5 = C_5, then ssm_merge downwards.
FeaturePyramid ssm_chain(const FeaturePyramid& laterals, const AttentionPyramid& attention);

/// SEM on every C_k followed by the SSM chain and output convs.
NeckOutput sspnet_neck(const FeaturePyramid& c, const AttentionPyramid& attention, const NeckParams& params,
                       ParamBinding& bind);

/// Plain FPN merge followed by the same output convs.
NeckOutput baseline_neck(const FeaturePyramid& c, const NeckParams& params, ParamBinding& bind);

struct SspnetParams {
  BackboneParams backbone;
  CamParams cam;
  NeckParams neck;

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    BackboneParams::visit(self.backbone, prefix, f);
    CamParams::visit(self.cam, prefix, f);
    NeckParams::visit(self.neck, prefix, f);
  }
};

/// backbone -> CAM -> SEM -> SSM -> output convs.
NeckOutput sspnet_forward(const Var& image, const SspnetParams& params, ParamBinding& bind);

}  // namespace sspnet
