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
#include "sspnet/tensor.hpp"

namespace sspnet {

struct AnchorShape {
  double w = 0, h = 0;
  friend bool operator==(const AnchorShape&, const AnchorShape&) = default;
};

/// IoU of two co-centred shapes.
double shape_iou(const AnchorShape& a, const AnchorShape& b);

struct AnchorSpec {
  std::vector<std::vector<AnchorShape>> per_level;  // index 0 is level 2
  std::vector<Index> strides;
};

/// Squares {4, 8, 16, 32}, one per level.
AnchorSpec geometric_ladder();

struct KMeansResult {
  std::vector<AnchorShape> centroids;  // sorted by area, ascending
  std::vector<double> objective;       // Σ(1 − best IoU) after seeding and after every iteration
  int iterations = 0;
};

/// Lloyd iterations under d = 1 − IoU with k-means++ seeding.
KMeansResult kmeans_anchors(std::span<const GtBox> boxes, int k, std::uint64_t seed, int max_iterations = 300);

double mean_best_iou(std::span<const GtBox> boxes, std::span<const AnchorShape> anchors);

/// Splits area-sorted centroids into contiguous per-level groups, smallest to level 2.
AnchorSpec anchors_per_level(std::span<const AnchorShape> centroids, int levels = 4);

struct LayerAssignment {
  struct Entry {
    int gt = 0;
    Index row = 0, col = 0;  // cell nearest to the GT centre
    double best_iou = 0;
    bool matched = false;
  };
  std::vector<std::vector<Entry>> per_level;
  std::vector<std::vector<int>> positive_levels;  // per GT, level numbers (2..5)
  std::vector<bool> forced;                        // matched nowhere; assigned to best level
};

/// Anchors are placed at the cell nearest each GT centre; positive iff best IoU >= pos_thr.
LayerAssignment match_anchors(std::span<const GtBox> gts, const AnchorSpec& spec, double pos_thr);

/// Binary S_k: a cell is 1 iff it overlaps a non-ignored GT positive at level k.
std::vector<Tensor> supervised_heatmaps(const LayerAssignment& assign, std::span<const GtBox> gts,
                                        std::span<const std::pair<Index, Index>> shapes,
                                        std::span<const Index> strides);

enum class ScalePartition { Tiny1, Tiny2, Tiny3, Tiny, Small, All };

const char* partition_name(ScalePartition p);
bool in_partition(double scale, ScalePartition p);

struct ScalePartitions {
  std::vector<int> tiny1, tiny2, tiny3, tiny, small;
};

/// tiny1 [2,8], tiny2 (8,12], tiny3 (12,20], tiny [2,20], small (20,32].
ScalePartitions partition_by_scale(std::span<const GtBox> gts);

}  // namespace sspnet
