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

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sspnet/config.hpp"
#include "sspnet/metrics.hpp"
#include "sspnet/tensor.hpp"

namespace sspnet {

/// 8-bit binary PGM (P5) as a [1,1,H,W] tensor scaled to [0,1].
Tensor read_pgm(const std::filesystem::path& path);
/// Values are clamped to [0,1] and rounded to 8 bits.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

struct ImageRecord {
  int id = 0;
  std::string file;  // relative to the dataset root
  Index width = 0, height = 0;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<ImageRecord> images;
  GroundTruth gts;  // every image id has an entry, possibly empty

  Tensor load_image(const ImageRecord& record) const;
  std::vector<GtBox> all_boxes() const;
};

/// Accepts the annotation file or the directory holding annotations.json.
Dataset load_dataset(const std::filesystem::path& path);
void save_annotations(const Dataset& dataset, const std::filesystem::path& file);

/// Writes `count` synthetic images plus annotations.json under `dir`. The split label
/// selects an independent random stream, so train and held-out sets never coincide.
Dataset gen_synthetic(const ExperimentConfig& config, const std::filesystem::path& dir, int count,
                      std::string_view split);

/// Tiles a width x height image with crop windows overlapping by `overlap` pixels; the
/// last window in each direction is flush with the border.
std::vector<Box> crop_windows(Index width, Index height, int crop_width, int crop_height, int overlap);
/// Boxes clipped to `window` in window coordinates. Objects less than half inside are ignored.
std::vector<GtBox> crop_boxes(std::span<const GtBox> gts, const Box& window);
Tensor crop_image(const Tensor& image, const Box& window);

}  // namespace sspnet
