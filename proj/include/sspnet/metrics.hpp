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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sspnet/anchors.hpp"

namespace sspnet {

struct Detection {
  int image_id = 0;
  Box box;
  double score = 0;
};

enum class MatchFlag : int { FalsePositive = 0, TruePositive = 1, Ignored = -1 };

struct MatchResult {
  std::vector<MatchFlag> det_flags;
  std::vector<bool> gt_matched;
  Index n_gt = 0;  // non-ignored GTs
};

/// Greedy one-to-one matching in the given (descending score) order. A detection takes the
/// highest-IoU unmatched non-ignored GT at or above iou_thr; failing that, overlapping an
/// ignored GT marks it Ignored; otherwise it is a false positive.
MatchResult match_detections(std::span<const Detection> dets, std::span<const GtBox> gts, double iou_thr);

/// All-points interpolated area under the PR curve; nullopt when n_gt = 0.
std::optional<double> average_precision(std::span<const MatchFlag> flags, Index n_gt);

/// 1 − TP/n_gt over all detections; nullopt when n_gt = 0.
std::optional<double> miss_rate(std::span<const MatchFlag> flags, Index n_gt);

using GroundTruth = std::map<int, std::vector<GtBox>>;

struct MetricCell {
  double iou_thr = 0;
  ScalePartition partition = ScalePartition::All;
  Index n_gt = 0;
  std::optional<double> ap;
  std::optional<double> mr;
};

struct MetricReport {
  std::vector<MetricCell> cells;

  const MetricCell* find(double iou_thr, ScalePartition p) const;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

inline const std::vector<double> kDefaultIouThresholds{0.25, 0.5, 0.75};
inline const std::vector<ScalePartition> kDefaultPartitions{ScalePartition::Tiny1, ScalePartition::Tiny2,
                                                           ScalePartition::Tiny3, ScalePartition::Tiny,
                                                           ScalePartition::Small, ScalePartition::All};

/// Cross product of thresholds x partitions. GTs outside a partition are treated as ignored.
MetricReport evaluate(std::span<const Detection> dets, const GroundTruth& gts,
                      std::span<const double> thresholds = kDefaultIouThresholds,
                      std::span<const ScalePartition> partitions = kDefaultPartitions);

nlohmann::json detection_to_json(const Detection& d);
Detection detection_from_json(const nlohmann::json& j);

}  // namespace sspnet
