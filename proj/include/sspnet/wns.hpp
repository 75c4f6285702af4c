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

#include <cstdint>
#include <span>
#include <vector>

#include "sspnet/boxes.hpp"
#include "sspnet/errors.hpp"

namespace sspnet {

inline constexpr double kDefaultWnsLambda = 0.6;

struct SampleScore {
  int index = 0;
  double confidence = 0;  // C_i
  double max_iof = 0;     // I_i
  double fused = 0;       // s_i
};

struct Candidate {
  double confidence = 0;
  double max_iof = 0;
};

/// s_i = softmax_i(λ·C_i + (1 − λ)·I_i).
std::vector<double> wns_scores(std::span<const Candidate> candidates, double lambda = kDefaultWnsLambda);

/// n distinct indices, each draw proportional to the remaining scores.
std::vector<int> wns_sample(std::span<const double> scores, int n, std::uint64_t seed);

struct Proposal {
  Box box;
  double objectness = 0;
};

struct CandidatePool {
  std::vector<int> proposal_index;  // position in the proposal list
  std::vector<Candidate> candidates;
};

/// Proposals whose max IoU to every GT is below neg_iou; C_i = objectness, I_i = max IoF.
CandidatePool candidate_pool(std::span<const Proposal> proposals, std::span<const Box> gts, double neg_iou = 0.5);

}  // namespace sspnet
