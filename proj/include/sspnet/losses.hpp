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

#include <span>
#include <utility>
#include <vector>

#include "sspnet/autograd.hpp"
#include "sspnet/cam.hpp"

namespace sspnet {

struct LossWeights {
  double alpha = 0.01;  // attention BCE
  double beta = 1.0;    // attention dice
  double mu1 = 1.0;     // RPN regression
  double mu2 = 1.0;     // head regression

  void validate() const;
};

inline constexpr double kDiceSmoothing = 1.0;
inline constexpr double kProbabilityClip = 1e-7;

/// 1 − (2ΣA·S + ε) / (ΣA² + ΣS² + ε), ε = 1.
Var dice_loss(const Var& attention, const Tensor& target);

struct OhemSelection {
  std::vector<Index> positives;
  std::vector<Index> negatives;  // ordered by descending loss
};

/// Keeps every positive and the neg_ratio·|pos| highest-loss negatives; with no positives,
/// the top max(1, 0.25% of cells) negatives.
OhemSelection select_ohem(const Tensor& cell_losses, const Tensor& target, Index neg_ratio = 3);

/// Per-cell BCE on probabilities clipped to [1e-7, 1 − 1e-7], averaged over the OHEM selection.
Var bce_ohem_loss(const Var& attention, const Tensor& target, Index neg_ratio = 3);

/// Σ_k α·bce_ohem(A_k, S_k) + β·dice(A_k, S_k).
Var attention_loss(const AttentionPyramid& attention, std::span<const Tensor> targets, const LossWeights& weights);

/// Elementwise 0.5d² if |d| < 1 else |d| − 0.5, averaged over elements.
Var smooth_l1(const Var& pred, const Tensor& target);
/// Same per-element loss, summed.
Var smooth_l1_sum(const Var& pred, const Tensor& target);

/// Mean binary cross-entropy on logits.
Var bce_with_logits(const Var& logits, const Tensor& targets);
/// Mean softmax cross-entropy; logits [R,K], labels in [0,K).
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Sampled RPN anchors and their positives' regression targets.
struct RpnBatch {
  Var logits;          // [n]
  Tensor labels;       // [n] in {0,1}
  Var deltas;          // [m,4], invalid when m = 0
  Tensor target_deltas;
};

struct HeadBatch {
  Var logits;  // [r,2], column 1 = person
  std::vector<int> labels;
  Var deltas;  // [p,4], invalid when p = 0
  Tensor target_deltas;
};

/// (L_RPN, L_Head): classification mean + μ/N_reg Σ smooth-L1 over positives, N_reg ≥ 1.
std::pair<Var, Var> detection_losses(const RpnBatch& rpn, const HeadBatch& head, const LossWeights& weights);

/// L_RPN + L_Head + L_A.
Var joint_loss(const Var& rpn, const Var& head, const Var& attention);

}  // namespace sspnet
