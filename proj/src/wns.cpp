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

#include "sspnet/wns.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sspnet/anchors.hpp"
#include "sspnet/errors.hpp"
#include "sspnet/rng.hpp"

namespace sspnet {

std::vector<double> wns_scores(std::span<const Candidate> candidates, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("wns lambda must lie in [0,1]");
  if (candidates.empty()) throw ArgumentError("wns_scores: empty candidate pool");
  std::vector<double> logits;
  logits.reserve(candidates.size());
  for (const Candidate& c : candidates) logits.push_back(lambda * c.confidence + (1.0 - lambda) * c.max_iof);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) z += (l = std::exp(l - mx));
  for (double& l : logits) l /= z;
  return logits;
}

std::vector<int> wns_sample(std::span<const double> scores, int n, std::uint64_t seed) {
  if (n < 0 || static_cast<size_t>(n) > scores.size()) {
    throw ArgumentError("wns_sample: cannot draw " + std::to_string(n) + " from a pool of " +
                        std::to_string(scores.size()));
  }
  Rng rng = Rng::for_stage(seed, "wns");
  std::vector<double> remaining(scores.begin(), scores.end());
  std::vector<int> picked;
  picked.reserve(static_cast<size_t>(n));
  for (int draw = 0; draw < n; ++draw) {
    const double total = std::accumulate(remaining.begin(), remaining.end(), 0.0);
    double r = rng.uniform() * total;
    int chosen = -1;
    for (size_t i = 0; i < remaining.size(); ++i) {
      if (remaining[i] <= 0) continue;
      chosen = static_cast<int>(i);
      if ((r -= remaining[i]) < 0) break;
    }
    if (chosen < 0) {
      // Every remaining weight is zero: fall back to the first unpicked index.
      for (size_t i = 0; i < remaining.size(); ++i) {
        if (std::find(picked.begin(), picked.end(), static_cast<int>(i)) == picked.end()) {
          chosen = static_cast<int>(i);
          break;
        }
      }
    }
    picked.push_back(chosen);
    remaining[static_cast<size_t>(chosen)] = 0.0;
  }
  return picked;
}

CandidatePool candidate_pool(std::span<const Proposal> proposals, std::span<const Box> gts, double neg_iou) {
  CandidatePool pool;
  for (size_t p = 0; p < proposals.size(); ++p) {
    double max_iou = 0.0, max_iof = 0.0;
    for (const Box& g : gts) {
      max_iou = std::max(max_iou, iou(g, proposals[p].box));
      max_iof = std::max(max_iof, iof(g, proposals[p].box));
    }
    if (max_iou >= neg_iou) continue;
    pool.proposal_index.push_back(static_cast<int>(p));
    pool.candidates.push_back({proposals[p].objectness, max_iof});
  }
  return pool;
}

}  // namespace sspnet
