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

#include "sspnet/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sspnet/rng.hpp"

namespace sspnet {

double iof(const Box& fg, const Box& other) {
  if (!(fg.area() > 0)) throw ArgumentError("iof: foreground box has zero area");
  return intersection_area(fg, other) / fg.area();
}

double shape_iou(const AnchorShape& a, const AnchorShape& b) {
  const double inter = std::min(a.w, b.w) * std::min(a.h, b.h);
  return inter / (a.w * a.h + b.w * b.h - inter);
}

AnchorSpec geometric_ladder() {
  AnchorSpec spec;
  for (int l = 0; l < 4; ++l) {
    const double side = 4.0 * static_cast<double>(1 << l);
    spec.per_level.push_back({{side, side}});
    spec.strides.push_back(Index{4} << l);
  }
  return spec;
}

namespace {

AnchorShape shape_of(const GtBox& b) { return {b.box.w, b.box.h}; }

int nearest(const AnchorShape& s, std::span<const AnchorShape> centroids) {
  int best = 0;
  double best_d = 2.0;
  for (size_t c = 0; c < centroids.size(); ++c) {
    const double d = 1.0 - shape_iou(s, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double objective(std::span<const GtBox> boxes, std::span<const AnchorShape> centroids) {
  double total = 0.0;
  for (const GtBox& b : boxes) total += 1.0 - shape_iou(shape_of(b), centroids[static_cast<size_t>(nearest(shape_of(b), centroids))]);
  return total;
}

double cluster_cost(std::span<const GtBox> boxes, std::span<const int> assignment, int cluster, const AnchorShape& c) {
  double cost = 0.0;
  for (size_t i = 0; i < boxes.size(); ++i) {
    if (assignment[i] == cluster) cost += 1.0 - shape_iou(shape_of(boxes[i]), c);
  }
  return cost;
}

}  // namespace

KMeansResult kmeans_anchors(std::span<const GtBox> boxes, int k, std::uint64_t seed, int max_iterations) {
  if (k < 1) throw ArgumentError("kmeans_anchors: k must be >= 1");
  if (static_cast<size_t>(k) > boxes.size()) {
    throw ArgumentError("kmeans_anchors: k=" + std::to_string(k) + " exceeds " + std::to_string(boxes.size()) +
                        " boxes");
  }
  for (const GtBox& b : boxes) {
    if (!(b.box.w > 0 && b.box.h > 0)) throw ArgumentError("kmeans_anchors: boxes need positive extents");
  }
  Rng rng = Rng::for_stage(seed, "kmeans");

  // k-means++ seeding with squared IoU distance.
  std::vector<AnchorShape> centroids{shape_of(boxes[rng.below(boxes.size())])};
  while (centroids.size() < static_cast<size_t>(k)) {
    std::vector<double> weight(boxes.size());
    double total = 0.0;
    for (size_t i = 0; i < boxes.size(); ++i) {
      const double d = 1.0 - shape_iou(shape_of(boxes[i]), centroids[static_cast<size_t>(nearest(shape_of(boxes[i]), centroids))]);
      weight[i] = d * d;
      total += weight[i];
    }
    size_t pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total;
      while (pick + 1 < boxes.size() && (r -= weight[pick]) >= 0) ++pick;
      while (weight[pick] == 0 && pick > 0) --pick;
    } else {
      pick = rng.below(boxes.size());
    }
    centroids.push_back(shape_of(boxes[pick]));
  }

  KMeansResult result;
  result.objective.push_back(objective(boxes, centroids));
  std::vector<int> assignment(boxes.size(), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < boxes.size(); ++i) {
      const int c = nearest(shape_of(boxes[i]), centroids);
      changed = changed || c != assignment[i];
      assignment[i] = c;
    }
    if (!changed) break;
    result.iterations = iter + 1;
    for (int c = 0; c < k; ++c) {
      AnchorShape mean{0, 0};
      int count = 0;
      for (size_t i = 0; i < boxes.size(); ++i) {
        if (assignment[i] != c) continue;
        mean.w += boxes[i].box.w;
        mean.h += boxes[i].box.h;
        ++count;
      }
      if (count == 0) continue;
      mean = {mean.w / count, mean.h / count};
      // The mean is not the IoU-distance minimiser; keep the old centroid if it is better.
      auto& current = centroids[static_cast<size_t>(c)];
      if (cluster_cost(boxes, assignment, c, mean) <= cluster_cost(boxes, assignment, c, current)) current = mean;
    }
    result.objective.push_back(objective(boxes, centroids));
  }
  std::sort(centroids.begin(), centroids.end(), [](const AnchorShape& a, const AnchorShape& b) {
    return a.w * a.h < b.w * b.h || (a.w * a.h == b.w * b.h && a.w < b.w);
  });
  result.centroids = std::move(centroids);
  return result;
}

double mean_best_iou(std::span<const GtBox> boxes, std::span<const AnchorShape> anchors) {
  if (boxes.empty() || anchors.empty()) return 0.0;
  double total = 0.0;
  for (const GtBox& b : boxes) {
    double best = 0.0;
    for (const AnchorShape& a : anchors) best = std::max(best, shape_iou(shape_of(b), a));
    total += best;
  }
  return total / static_cast<double>(boxes.size());
}

AnchorSpec anchors_per_level(std::span<const AnchorShape> centroids, int levels) {
  if (centroids.empty() || levels < 1) throw ArgumentError("anchors_per_level: nothing to distribute");
  AnchorSpec spec;
  const size_t n = centroids.size();
  for (int l = 0; l < levels; ++l) {
    const size_t lo = n * static_cast<size_t>(l) / static_cast<size_t>(levels);
    size_t hi = n * static_cast<size_t>(l + 1) / static_cast<size_t>(levels);
    std::vector<AnchorShape> group(centroids.begin() + static_cast<std::ptrdiff_t>(lo),
                                   centroids.begin() + static_cast<std::ptrdiff_t>(hi));
    // Fewer centroids than levels: reuse the nearest larger one.
    if (group.empty()) group.push_back(centroids[std::min(lo, n - 1)]);
    spec.per_level.push_back(std::move(group));
    spec.strides.push_back(Index{4} << l);
  }
  return spec;
}

LayerAssignment match_anchors(std::span<const GtBox> gts, const AnchorSpec& spec, double pos_thr) {
  if (!(pos_thr > 0 && pos_thr < 1)) throw ArgumentError("match_anchors: pos_thr must lie in (0,1)");
  if (spec.per_level.size() != spec.strides.size()) throw ArgumentError("match_anchors: malformed anchor spec");
  LayerAssignment out;
  out.per_level.resize(spec.per_level.size());
  out.positive_levels.resize(gts.size());
  out.forced.assign(gts.size(), false);
  for (size_t g = 0; g < gts.size(); ++g) {
    const Box& box = gts[g].box;
    int best_level = 0;
    double best_overall = -1.0;
    for (size_t l = 0; l < spec.per_level.size(); ++l) {
      const double s = static_cast<double>(spec.strides[l]);
      LayerAssignment::Entry e;
      e.gt = static_cast<int>(g);
      e.row = static_cast<Index>(std::floor(box.cy() / s));
      e.col = static_cast<Index>(std::floor(box.cx() / s));
      const double cx = (static_cast<double>(e.col) + 0.5) * s, cy = (static_cast<double>(e.row) + 0.5) * s;
      for (const AnchorShape& a : spec.per_level[l]) e.best_iou = std::max(e.best_iou, iou(Box::centered(cx, cy, a.w, a.h), box));
      e.matched = e.best_iou >= pos_thr;
      if (e.matched) out.positive_levels[g].push_back(static_cast<int>(l) + 2);
      if (e.best_iou > best_overall) {
        best_overall = e.best_iou;
        best_level = static_cast<int>(l);
      }
      out.per_level[l].push_back(e);
    }
    if (out.positive_levels[g].empty()) {
      out.forced[g] = true;
      out.per_level[static_cast<size_t>(best_level)][g].matched = true;
      out.positive_levels[g].push_back(best_level + 2);
    }
  }
  return out;
}

std::vector<Tensor> supervised_heatmaps(const LayerAssignment& assign, std::span<const GtBox> gts,
                                        std::span<const std::pair<Index, Index>> shapes,
                                        std::span<const Index> strides) {
  if (shapes.size() != strides.size() || shapes.size() != assign.per_level.size()) {
    throw DimensionError("supervised_heatmaps: level count mismatch");
  }
  std::vector<Tensor> maps;
  for (size_t l = 0; l < shapes.size(); ++l) {
    const auto [rows, cols] = shapes[l];
    Tensor s = Tensor::zeros({1, 1, rows, cols});
    const double stride = static_cast<double>(strides[l]);
    for (const auto& e : assign.per_level[l]) {
      const GtBox& gt = gts[static_cast<size_t>(e.gt)];
      if (!e.matched || gt.ignore) continue;
      const Index r0 = std::max<Index>(0, static_cast<Index>(std::floor(gt.box.y / stride)));
      const Index c0 = std::max<Index>(0, static_cast<Index>(std::floor(gt.box.x / stride)));
      const Index r1 = std::min<Index>(rows, static_cast<Index>(std::ceil((gt.box.y + gt.box.h) / stride)));
      const Index c1 = std::min<Index>(cols, static_cast<Index>(std::ceil((gt.box.x + gt.box.w) / stride)));
      for (Index r = r0; r < r1; ++r)
        for (Index c = c0; c < c1; ++c) s.at(0, 0, r, c) = 1.0;
    }
    maps.push_back(std::move(s));
  }
  return maps;
}

const char* partition_name(ScalePartition p) {
  switch (p) {
    case ScalePartition::Tiny1: return "tiny1";
    case ScalePartition::Tiny2: return "tiny2";
    case ScalePartition::Tiny3: return "tiny3";
    case ScalePartition::Tiny: return "tiny";
    case ScalePartition::Small: return "small";
    case ScalePartition::All: return "all";
  }
  return "?";
}

bool in_partition(double scale, ScalePartition p) {
  switch (p) {
    case ScalePartition::Tiny1: return scale >= 2 && scale <= 8;
    case ScalePartition::Tiny2: return scale > 8 && scale <= 12;
    case ScalePartition::Tiny3: return scale > 12 && scale <= 20;
    case ScalePartition::Tiny: return scale >= 2 && scale <= 20;
    case ScalePartition::Small: return scale > 20 && scale <= 32;
    case ScalePartition::All: return true;
  }
  return false;
}

ScalePartitions partition_by_scale(std::span<const GtBox> gts) {
  ScalePartitions out;
  for (size_t i = 0; i < gts.size(); ++i) {
    const double s = gts[i].scale();
    const int idx = static_cast<int>(i);
    if (in_partition(s, ScalePartition::Tiny1)) out.tiny1.push_back(idx);
    else if (in_partition(s, ScalePartition::Tiny2)) out.tiny2.push_back(idx);
    else if (in_partition(s, ScalePartition::Tiny3)) out.tiny3.push_back(idx);
    if (in_partition(s, ScalePartition::Tiny)) out.tiny.push_back(idx);
    if (in_partition(s, ScalePartition::Small)) out.small.push_back(idx);
  }
  return out;
}

}  // namespace sspnet
