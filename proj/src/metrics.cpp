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

#include "sspnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace sspnet {

MatchResult match_detections(std::span<const Detection> dets, std::span<const GtBox> gts, double iou_thr) {
  MatchResult r;
  r.gt_matched.assign(gts.size(), false);
  for (const GtBox& g : gts) r.n_gt += g.ignore ? 0 : 1;
  for (const Detection& d : dets) {
    int best = -1;
    double best_iou = iou_thr;
    bool hits_ignored = false;
    for (size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(d.box, gts[g].box);
      if (gts[g].ignore) {
        hits_ignored = hits_ignored || o >= iou_thr;
        continue;
      }
      if (r.gt_matched[g] || o < best_iou) continue;
      if (best < 0 || o > best_iou) {
        best = static_cast<int>(g);
        best_iou = o;
      }
    }
    if (best >= 0) {
      r.gt_matched[static_cast<size_t>(best)] = true;
      r.det_flags.push_back(MatchFlag::TruePositive);
    } else {
      r.det_flags.push_back(hits_ignored ? MatchFlag::Ignored : MatchFlag::FalsePositive);
    }
  }
  return r;
}

std::optional<double> average_precision(std::span<const MatchFlag> flags, Index n_gt) {
  if (n_gt <= 0) return std::nullopt;
  std::vector<double> precision, recall;
  double tp = 0, fp = 0;
  for (MatchFlag f : flags) {
    if (f == MatchFlag::Ignored) continue;
    (f == MatchFlag::TruePositive ? tp : fp) += 1;
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / static_cast<double>(n_gt));
  }
  for (size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

std::optional<double> miss_rate(std::span<const MatchFlag> flags, Index n_gt) {
  if (n_gt <= 0) return std::nullopt;
  const auto tp = std::count(flags.begin(), flags.end(), MatchFlag::TruePositive);
  return 1.0 - static_cast<double>(tp) / static_cast<double>(n_gt);
}

const MetricCell* MetricReport::find(double iou_thr, ScalePartition p) const {
  for (const MetricCell& c : cells) {
    if (c.iou_thr == iou_thr && c.partition == p) return &c;
  }
  return nullptr;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const MetricCell& c : cells) {
    nlohmann::json j{{"iou", c.iou_thr}, {"partition", partition_name(c.partition)}, {"n_gt", c.n_gt}};
    j["ap"] = c.ap ? nlohmann::json(*c.ap) : nlohmann::json(nullptr);
    j["mr"] = c.mr ? nlohmann::json(*c.mr) : nlohmann::json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %5s %6s %8s %8s\n", "partition", "iou", "n_gt", "AP", "MR");
  os << line;
  auto fmt = [](const std::optional<double>& v) {
    char b[16];
    if (v) std::snprintf(b, sizeof b, "%8.4f", *v);
    else std::snprintf(b, sizeof b, "%8s", "-");
    return std::string(b);
  };
  for (const MetricCell& c : cells) {
    std::snprintf(line, sizeof line, "%-10s %5.2f %6lld %s %s\n", partition_name(c.partition), c.iou_thr,
                  static_cast<long long>(c.n_gt), fmt(c.ap).c_str(), fmt(c.mr).c_str());
    os << line;
  }
  return os.str();
}

MetricReport evaluate(std::span<const Detection> dets, const GroundTruth& gts, std::span<const double> thresholds,
                      std::span<const ScalePartition> partitions) {
  std::map<int, std::vector<Detection>> by_image;
  for (const Detection& d : dets) {
    if (!gts.contains(d.image_id)) throw DataError("detection refers to unknown image id " + std::to_string(d.image_id));
    by_image[d.image_id].push_back(d);
  }
  for (auto& [id, list] : by_image) {
    std::stable_sort(list.begin(), list.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  }

  MetricReport report;
  for (ScalePartition part : partitions) {
    for (double thr : thresholds) {
      std::vector<std::pair<double, MatchFlag>> pooled;
      Index n_gt = 0;
      for (const auto& [id, image_gts] : gts) {
        std::vector<GtBox> filtered = image_gts;
        for (GtBox& g : filtered) g.ignore = g.ignore || !in_partition(g.scale(), part);
        auto it = by_image.find(id);
        const std::span<const Detection> image_dets =
            it == by_image.end() ? std::span<const Detection>() : std::span<const Detection>(it->second);
        MatchResult m = match_detections(image_dets, filtered, thr);
        n_gt += m.n_gt;
        for (size_t i = 0; i < image_dets.size(); ++i) pooled.emplace_back(image_dets[i].score, m.det_flags[i]);
      }
      std::stable_sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<MatchFlag> flags;
      for (const auto& p : pooled) flags.push_back(p.second);
      report.cells.push_back({thr, part, n_gt, average_precision(flags, n_gt), miss_rate(flags, n_gt)});
    }
  }
  return report;
}

nlohmann::json detection_to_json(const Detection& d) {
  return {{"image_id", d.image_id}, {"bbox", {d.box.x, d.box.y, d.box.w, d.box.h}}, {"score", d.score}};
}

Detection detection_from_json(const nlohmann::json& j) {
  try {
    const auto& b = j.at("bbox");
    return {j.at("image_id").get<int>(), {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()},
            j.at("score").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed detection record: ") + e.what());
  }
}

}  // namespace sspnet
