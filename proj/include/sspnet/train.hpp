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
#include <functional>
#include <vector>

#include "sspnet/dataset.hpp"
#include "sspnet/detector.hpp"

namespace sspnet {

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0;
  double mean_loss = 0;
  MetricReport report;  // on the evaluation set after this epoch
};

struct TrainOptions {
  const Dataset* eval_set = nullptr;  // defaults to the training set
  std::filesystem::path dump_dir;     // where offending tensors go on a numeric failure
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  Detector detector;
  std::vector<double> loss_curve;  // joint loss per step, before the update
  std::vector<EpochLog> epochs;
};

/// Learning rate for a 1-based epoch: lr, times decay_factor from decay_epoch onwards.
double lr_at_epoch(const ExperimentConfig& config, int epoch);

/// One image per SGD step, images visited in a seeded order every epoch. Throws NumericError
/// (after writing the non-finite tensors to dump_dir, if set) as soon as a loss or gradient
/// stops being finite.
TrainResult train_toy(const ExperimentConfig& config, const Dataset& train, const TrainOptions& options = {});

/// Runs inference over every image and scores the detections.
MetricReport evaluate_detector(const Detector& det, const Dataset& data, const ExperimentConfig& config,
                               std::vector<Detection>* detections = nullptr);

// Checkpoint: a directory holding manifest.json and one SSPT file per parameter tensor.
void save_checkpoint(const std::filesystem::path& dir, const Detector& det, const ExperimentConfig& config, int epoch);

struct Checkpoint {
  ExperimentConfig config;
  Detector detector;
  int epoch = 0;
};

/// IoError when the directory, manifest or any tensor is missing, or a tensor's shape
/// disagrees with the architecture described by the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace sspnet
