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
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sspnet/losses.hpp"
#include "sspnet/wns.hpp"

namespace sspnet {

struct ExperimentConfig {
  std::uint64_t seed = 0;

  // Synthetic data.
  int image_size = 64;
  int num_images = 20;
  int objects_min = 2;
  int objects_max = 6;
  double scale_min = 2.0;
  double scale_max = 28.0;
  double occlusion = 0.3;  // probability an object is partially covered

  // Anchors and supervision.
  bool kmeans_anchors = true;
  int anchors_k = 4;
  double pos_iou = 0.5;

  std::string neck = "sspnet";  // sspnet | baseline
  int stage_channels = 16;      // backbone width
  int channels = 8;             // pyramid and ASPP width

  LossWeights loss;
  double wns_lambda = kDefaultWnsLambda;

  // SGD.
  double lr = 0.002;
  double momentum = 0.9;
  int epochs = 10;
  int decay_epoch = 8;
  double decay_factor = 0.1;

  // Patch cropping for external images.
  int crop_width = 640;
  int crop_height = 512;
  int crop_overlap = 30;

  // Detector sampling and inference.
  int rpn_batch = 64;
  int proposals = 48;
  int head_positives = 8;
  int head_negatives = 24;
  int hidden = 32;
  double rpn_nms_iou = 0.7;
  double nms_iou = 0.5;
  double score_threshold = 0.05;
  int max_detections = 40;

  /// Visits (dotted key, field) for every setting.
  template <class Self, class F>
  static void visit(Self& c, F&& f) {
    f("seed", c.seed);
    f("data.image_size", c.image_size);
    f("data.num_images", c.num_images);
    f("data.objects_min", c.objects_min);
    f("data.objects_max", c.objects_max);
    f("data.scale_min", c.scale_min);
    f("data.scale_max", c.scale_max);
    f("data.occlusion", c.occlusion);
    f("anchors.kmeans", c.kmeans_anchors);
    f("anchors.k", c.anchors_k);
    f("anchors.pos_iou", c.pos_iou);
    f("model.neck", c.neck);
    f("model.stage_channels", c.stage_channels);
    f("model.channels", c.channels);
    f("loss.alpha", c.loss.alpha);
    f("loss.beta", c.loss.beta);
    f("loss.mu1", c.loss.mu1);
    f("loss.mu2", c.loss.mu2);
    f("wns.lambda", c.wns_lambda);
    f("optim.lr", c.lr);
    f("optim.momentum", c.momentum);
    f("optim.epochs", c.epochs);
    f("optim.decay_epoch", c.decay_epoch);
    f("optim.decay_factor", c.decay_factor);
    f("crop.width", c.crop_width);
    f("crop.height", c.crop_height);
    f("crop.overlap", c.crop_overlap);
    f("rpn.batch", c.rpn_batch);
    f("rpn.proposals", c.proposals);
    f("rpn.nms_iou", c.rpn_nms_iou);
    f("head.positives", c.head_positives);
    f("head.negatives", c.head_negatives);
    f("head.hidden", c.hidden);
    f("eval.nms_iou", c.nms_iou);
    f("eval.score_threshold", c.score_threshold);
    f("eval.max_detections", c.max_detections);
  }

  /// Throws ArgumentError on out-of-domain settings.
  void validate() const;

  /// Sets one dotted key from its textual form; unknown keys and unparsable values throw ArgumentError.
  void set(std::string_view key, std::string_view value);

  nlohmann::json to_json() const;
  /// Flat dotted-key object; keys not listed are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Overwrites only the keys present in `j`.
  void merge(const nlohmann::json& j);
  /// Reads a JSON file (IoError when unreadable, ArgumentError when malformed).
  static ExperimentConfig load(const std::filesystem::path& path);
  static nlohmann::json read_json(const std::filesystem::path& path);
};

}  // namespace sspnet
