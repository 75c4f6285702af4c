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
#include <string>
#include <vector>

#include "sspnet/gradcheck.hpp"

namespace sspnet {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0;
  Index coordinates = 0;
  /// Probe points redrawn because a ±eps probe switched a piecewise branch.
  Index resamples = 0;
  int seeds = 0;
  double seconds = 0;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  double seconds = 0;

  double worst() const;
  bool passed(double tolerance = 1e-4) const { return worst() < tolerance; }
  /// Wall-clock columns are optional so that the table itself is reproducible.
  std::string to_table(bool timing = true) const;
};

struct GradSuiteOptions {
  int seeds = 100;
  double eps = 1e-5;
  std::uint64_t base_seed = 0;
  /// Coordinates probed per seed for the whole-network check (all coordinates elsewhere).
  Index network_coordinates = 24;
  /// Run only checks whose name starts with this prefix.
  std::string only;
};

/// Finite-difference checks over every primitive, every loss, CAM, SEM, SSM, the
/// CAM→SEM→SSM stack and the whole network.
GradSuiteReport run_gradient_suite(const GradSuiteOptions& options = {});

}  // namespace sspnet
