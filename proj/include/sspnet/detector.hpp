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

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "sspnet/config.hpp"
#include "sspnet/metrics.hpp"
#include "sspnet/neck.hpp"

namespace sspnet {

inline constexpr Index kRoiGrid = 3;
inline constexpr Index kRpnHidden = 8;

/// Pyramid network plus a shared dense RPN head and a two-layer RoI head.
struct DetectorParams {
  SspnetParams net;
  ConvLayer rpn_conv;  // 3x3, shared across levels
  ConvLayer rpn_out;   // 1x1, 5 outputs per anchor shape: objectness then (dx, dy, dw, dh)
  Linear head_hidden;  // pooled 3x3xC features -> hidden
  Linear head_out;     // hidden -> 2 class logits + 4 deltas

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    SspnetParams::visit(self.net, prefix, f);
    ConvLayer::visit(self.rpn_conv, prefix + "rpn.conv", f);
    ConvLayer::visit(self.rpn_out, prefix + "rpn.out", f);
    Linear::visit(self.head_hidden, prefix + "head.hidden", f);
    Linear::visit(self.head_out, prefix + "head.out", f);
  }
};

struct Detector {
  MergeRule neck = MergeRule::Ssm;
  AnchorSpec anchors;
  DetectorParams params;

  Index anchors_per_cell() const;
};

MergeRule parse_neck(const std::string& name);
const char* neck_name(MergeRule rule);

/// Fresh weights drawn from the "init" stream of `config.seed`; both neck variants get identical weights.
Detector init_detector(const ExperimentConfig& config, AnchorSpec anchors);

/// k-means anchors over the non-ignored training boxes when enabled, otherwise the geometric ladder.
AnchorSpec choose_anchors(const ExperimentConfig& config, std::span<const GtBox> boxes);

// (dx, dy, dw, dh) relative to `ref`, and back. Decoded log-scales are clamped.
std::array<double, 4> encode_box(const Box& ref, const Box& target);
Box decode_box(const Box& ref, std::span<const double> deltas);

/// Greedy NMS over score-sorted boxes; returns kept indices in score order.
std::vector<int> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_thr, int limit);

struct AnchorGrid {
  std::vector<Box> boxes;   // level-major, then row, col, shape
  std::vector<Index> flat;   // position of each anchor's objectness in the concatenated RPN output
  std::vector<Index> plane;  // channel stride of that level; delta j sits at flat + (j + 1) * plane
};

/// Anchors tiled over the given per-level map shapes.
AnchorGrid tile_anchors(const AnchorSpec& spec, std::span<const std::pair<Index, Index>> shapes, Index per_cell);

/// Forward pass state for one image.
struct DetectorPass {
  NeckOutput neck;
  Var rpn;       // flattened RPN outputs of every level
  Var features;  // flattened P_k of every level
  AnchorGrid grid;
  std::vector<std::pair<Index, Index>> shapes;
  std::vector<Index> feature_offset;  // start of each level in `features`
  Index width = 0, height = 0;
};

DetectorPass detector_forward(const Detector& det, const Var& image, ParamBinding& bind);

/// Objectness-ranked, NMS-filtered proposals clipped to the image.
std::vector<Proposal> propose(const DetectorPass& pass, const ExperimentConfig& config);

/// FPN-style level for a box of this scale: clamp(2 + floor(log2(s / 8)), 2, 5).
int roi_level(const Box& box);

/// 3x3 nearest-grid pooling of each box from its level; returns [R, 9 * C].
Var roi_pool(const DetectorPass& pass, std::span<const Box> boxes);

/// Head outputs [R, 6] for the given boxes.
Var head_forward(const Detector& det, const DetectorPass& pass, std::span<const Box> boxes, ParamBinding& bind);

/// Scored, NMS-filtered detections for one image.
std::vector<Detection> detect(const Detector& det, const Tensor& image, int image_id, const ExperimentConfig& config);

struct StepLosses {
  Var total, rpn, head, attention;
};

/// Joint training loss for one image. All sampling is driven by `sample_seed`.
StepLosses detector_losses(const Detector& det, const DetectorPass& pass, std::span<const GtBox> gts,
                           const ExperimentConfig& config, std::uint64_t sample_seed, ParamBinding& bind);

}  // namespace sspnet
