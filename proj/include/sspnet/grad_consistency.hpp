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

#include <array>
#include <vector>

#include "sspnet/anchors.hpp"
#include "sspnet/neck.hpp"

namespace sspnet {

/// A position (row, col) on the level-2 grid, identified across levels by the
/// nearest-upsample index map: level k sees (row >> (k-2), col >> (k-2)).
struct CellLocation {
  Index row = 0, col = 0;

  CellLocation at_level(int k) const { return {row >> (k - kFirstLevel), col >> (k - kFirstLevel)}; }
};

/// Detached linear objectness probe evaluated at one cell: BCE(w·x + b, label).
struct LevelProbe {
  Eigen::VectorXd weight;  // one entry per channel
  double bias = 0.0;
  double label = 0.0;
};

/// Per-level probe loss on `features` ([1,C,H,W]) at `cell`.
Var probe_loss(const Var& features, const LevelProbe& probe, CellLocation cell);

/// ψ_k = A_5·A_k·Π_{n=k+1}^{4} A_n² read at aligned cells; ψ_5 = 1 (the direct path).
/// `attention[0]` is level 2.
double psi(std::span<const Tensor> attention, CellLocation location, int k);

struct GradReport {
  CellLocation location;
  std::array<Eigen::VectorXd, kNumLevels> g;              // ∂L_{P_k}/∂P'_k at the aligned cell
  std::array<double, kNumLevels> psi{};                   // attention coefficient per level
  std::array<Eigen::VectorXd, kNumLevels> contribution;   // ∂L_{P_k}/∂P'_5 via autograd
  Eigen::VectorXd autograd_total;                         // ∂L/∂P'_5, L = Σ_k L_{P_k}
  Eigen::VectorXd decomposed_total;                       // Σ_k ψ_k·g_k
  double residual = 0.0;                                  // max |autograd − decomposed|
  bool sign_conflict = false;                             // opposite-signed non-zero ψ_k·g_k

  const Eigen::VectorXd& g_at(int k) const { return g[static_cast<size_t>(k - kFirstLevel)]; }
  double psi_at(int k) const { return psi[static_cast<size_t>(k - kFirstLevel)]; }
};

/// Top-down merge with frozen attention: the graph in which the ψ decomposition is exact.
struct ControlledScene {
  Tensor p5;                       // P'_5, [1,C,H5,W5]
  std::vector<Tensor> laterals;    // C_2..C_4
  std::vector<Tensor> attention;   // A_2..A_5, single channel, treated as constants
  std::vector<LevelProbe> probes;  // levels 2..5
};

/// Random scene with the given top-level size; attention drawn from (lo, hi).
ControlledScene random_scene(std::uint64_t seed, Index channels, Index top_size, double attention_lo = 0.05,
                             double attention_hi = 0.95);

GradReport verify_decomposition(const ControlledScene& scene, CellLocation location);

/// g_k of a full network. Probes read P_k (after the output conv); the gradient is taken
/// at P'_k. `rule` selects the SSM chain or the plain FPN merge over shared weights.
std::array<Eigen::VectorXd, kNumLevels> per_layer_gradients(const SspnetParams& params, MergeRule rule,
                                                            const Tensor& image, std::span<const LevelProbe> probes,
                                                            CellLocation location);

/// Decomposition report over the full network with attention left on the tape. The
/// residual is the part not captured by the aligned-cell ψ decomposition.
GradReport full_graph_report(const SspnetParams& params, MergeRule rule, const Tensor& image,
                             std::span<const LevelProbe> probes, CellLocation location);

/// Gradient mass from background-labelled levels that opposes the positive levels' net
/// direction, summed over channels.
double conflict_mass(std::span<const Eigen::VectorXd> contributions, std::span<const double> labels);

struct ConflictSample {
  CellLocation location;
  double baseline_mass = 0;
  double sspnet_mass = 0;
};

struct ConflictSummary {
  std::vector<ConflictSample> samples;
  double mean_baseline = 0;
  double mean_sspnet = 0;
  double fraction_reduced = 0;  // share of samples with sspnet_mass < baseline_mass
};

struct SceneSample {
  Tensor image;  // [1,1,H,W]
  std::vector<GtBox> gts;
};

/// Probes every tiny GT centre; a level is labelled positive where match_anchors puts the GT.
ConflictSummary conflict_report(const SspnetParams& params, std::span<const SceneSample> scenes,
                                const AnchorSpec& anchors, double pos_iou, std::span<const LevelProbe> probe_weights);

}  // namespace sspnet
