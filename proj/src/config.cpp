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

#include "sspnet/config.hpp"

#include <charconv>
#include <fstream>

#include "sspnet/errors.hpp"

namespace sspnet {

namespace {

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ArgumentError("config: cannot parse '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

void assign(std::string_view key, std::string_view text, std::uint64_t& out) { out = parse_number<std::uint64_t>(key, text); }
void assign(std::string_view key, std::string_view text, int& out) { out = parse_number<int>(key, text); }
void assign(std::string_view key, std::string_view text, double& out) { out = parse_number<double>(key, text); }
void assign(std::string_view, std::string_view text, std::string& out) { out = std::string(text); }
void assign(std::string_view key, std::string_view text, bool& out) {
  if (text == "true" || text == "1") out = true;
  else if (text == "false" || text == "0") out = false;
  else throw ArgumentError("config: expected a boolean for " + std::string(key) + ", got '" + std::string(text) + "'");
}

template <class T>
void assign_json(const std::string& key, const nlohmann::json& j, T& out) {
  try {
    out = j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ArgumentError("config: wrong type for " + key + ": " + j.dump());
  }
  if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!j.is_number_unsigned()) throw ArgumentError("config: expected a non-negative integer for " + key);
  } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    if (!j.is_number_integer()) throw ArgumentError("config: expected an integer for " + key);
  } else if constexpr (std::is_arithmetic_v<T> && !std::is_same_v<T, bool>) {
    if (!j.is_number()) throw ArgumentError("config: expected a number for " + key);
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError("config: " + what);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(image_size > 0 && image_size % 32 == 0, "data.image_size must be a positive multiple of 32");
  require(num_images >= 0, "data.num_images must be non-negative");
  require(objects_min >= 0 && objects_max >= objects_min, "need 0 <= data.objects_min <= data.objects_max");
  require(scale_min > 0 && scale_max >= scale_min, "need 0 < data.scale_min <= data.scale_max");
  require(occlusion >= 0 && occlusion <= 1, "data.occlusion must lie in [0,1]");
  require(anchors_k >= 1, "anchors.k must be >= 1");
  require(pos_iou > 0 && pos_iou < 1, "anchors.pos_iou must lie in (0,1)");
  require(neck == "sspnet" || neck == "baseline", "model.neck must be 'sspnet' or 'baseline', got '" + neck + "'");
  require(stage_channels > 0 && channels > 0, "model widths must be positive");
  loss.validate();
  require(wns_lambda >= 0 && wns_lambda <= 1, "wns.lambda must lie in [0,1]");
  require(lr >= 0, "optim.lr must be non-negative");
  require(momentum >= 0 && momentum < 1, "optim.momentum must lie in [0,1)");
  require(epochs >= 0 && decay_epoch >= 0, "optim.epochs and optim.decay_epoch must be non-negative");
  require(decay_factor > 0, "optim.decay_factor must be positive");
  require(crop_width > 0 && crop_height > 0 && crop_overlap >= 0 && crop_overlap < std::min(crop_width, crop_height),
          "crop sizes must be positive with overlap below both sides");
  require(rpn_batch > 0 && proposals > 0 && head_positives >= 0 && head_negatives >= 0 && hidden > 0,
          "detector sampling sizes must be positive");
  require(rpn_nms_iou > 0 && rpn_nms_iou <= 1 && nms_iou > 0 && nms_iou <= 1, "NMS thresholds must lie in (0,1]");
  require(score_threshold >= 0 && score_threshold <= 1, "eval.score_threshold must lie in [0,1]");
  require(max_detections > 0, "eval.max_detections must be positive");
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  bool found = false;
  visit(*this, [&](std::string_view name, auto& field) {
    if (name != key) return;
    assign(key, value, field);
    found = true;
  });
  if (!found) throw ArgumentError("config: unknown key '" + std::string(key) + "'");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  visit(*this, [&](std::string_view name, const auto& field) { j[std::string(name)] = field; });
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.merge(j);
  return c;
}

void ExperimentConfig::merge(const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("config: top level must be an object of dotted keys");
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    visit(*this, [&](std::string_view name, auto& field) {
      if (name != key) return;
      assign_json(key, value, field);
      found = true;
    });
    if (!found) throw ArgumentError("config: unknown key '" + key + "'");
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

nlohmann::json ExperimentConfig::read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return j;
}

}  // namespace sspnet
