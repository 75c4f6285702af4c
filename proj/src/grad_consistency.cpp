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

#include "sspnet/grad_consistency.hpp"

#include <algorithm>
#include <cmath>

#include "sspnet/losses.hpp"

namespace sspnet {

namespace {

void require_cell(const Tensor& map, CellLocation cell, const char* what) {
  if (map.rank() != 4 || cell.row < 0 || cell.col < 0 || cell.row >= map.dim(2) || cell.col >= map.dim(3)) {
    throw ArgumentError(std::string(what) + ": location (" + std::to_string(cell.row) + "," +
                        std::to_string(cell.col) + ") outside map " + shape_str(map.shape()));
  }
}

Eigen::VectorXd cell_vector(const Tensor& t, CellLocation cell) {
  Eigen::VectorXd v(t.dim(1));
  for (Index c = 0; c < t.dim(1); ++c) v[c] = t.at(0, c, cell.row, cell.col);
  return v;
}

bool has_sign_conflict(std::span<const Eigen::VectorXd> terms) {
  const Index channels = terms.front().size();
  for (Index c = 0; c < channels; ++c) {
    bool pos = false, neg = false;
    for (const auto& t : terms) {
      pos = pos || t[c] > 0;
      neg = neg || t[c] < 0;
    }
    if (pos && neg) return true;
  }
  return false;
}

void finish_report(GradReport& r) {
  r.decomposed_total = Eigen::VectorXd::Zero(r.autograd_total.size());
  std::array<Eigen::VectorXd, kNumLevels> gated;
  for (size_t i = 0; i < kNumLevels; ++i) {
    gated[i] = r.psi[i] * r.g[i];
    r.decomposed_total += gated[i];
  }
  r.residual = (r.autograd_total - r.decomposed_total).cwiseAbs().maxCoeff();
  r.sign_conflict = has_sign_conflict(gated);
}

}  // namespace

Var probe_loss(const Var& features, const LevelProbe& probe, CellLocation cell) {
  const Tensor& f = features.value();
  require_cell(f, cell, "probe_loss");
  if (probe.weight.size() != f.dim(1)) throw DimensionError("probe_loss: probe width does not match channels");
  std::vector<Index> idx;
  for (Index c = 0; c < f.dim(1); ++c) idx.push_back(f.offset(0, c, cell.row, cell.col));
  Var v = gather(features, idx, {f.dim(1)});
  Var logit = add_scalar(dot(v, Tensor({f.dim(1)}, probe.weight.array())), probe.bias);
  return bce_with_logits(logit, Tensor::scalar(probe.label));
}

double psi(std::span<const Tensor> attention, CellLocation location, int k) {
  if (attention.size() != kNumLevels) throw ArgumentError("psi: expected attention for levels 2..5");
  if (k < kFirstLevel || k > kLastLevel) throw ArgumentError("psi: level out of range");
  if (k == kLastLevel) return 1.0;
  auto a = [&](int n) {
    const Tensor& m = attention[static_cast<size_t>(n - kFirstLevel)];
    const CellLocation c = location.at_level(n);
    require_cell(m, c, "psi");
    return m.at(0, 0, c.row, c.col);
  };
  double value = a(kLastLevel) * a(k);
  for (int n = k + 1; n <= kLastLevel - 1; ++n) value *= a(n) * a(n);
  return value;
}

ControlledScene random_scene(std::uint64_t seed, Index channels, Index top_size, double attention_lo,
                             double attention_hi) {
  Rng rng = Rng::for_stage(seed, "controlled-scene");
  auto normal = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
  };
  ControlledScene s;
  s.p5 = normal({1, channels, top_size, top_size});
  for (int k = kFirstLevel; k < kLastLevel; ++k) {
    s.laterals.push_back(normal({1, channels, top_size << (kLastLevel - k), top_size << (kLastLevel - k)}));
  }
  for (int k = kFirstLevel; k <= kLastLevel; ++k) {
    const Index side = top_size << (kLastLevel - k);
    Tensor a({1, 1, side, side});
    for (Index i = 0; i < a.numel(); ++i) a[i] = rng.uniform(attention_lo, attention_hi);
    s.attention.push_back(std::move(a));
  }
  for (int k = kFirstLevel; k <= kLastLevel; ++k) {
    LevelProbe p;
    p.weight = Eigen::VectorXd(channels);
    for (Index c = 0; c < channels; ++c) p.weight[c] = rng.normal();
    p.bias = 0.5 * rng.normal();
    p.label = k == kFirstLevel ? 1.0 : 0.0;
    s.probes.push_back(std::move(p));
  }
  return s;
}

GradReport verify_decomposition(const ControlledScene& scene, CellLocation location) {
  if (scene.laterals.size() != kNumLevels - 1 || scene.attention.size() != kNumLevels ||
      scene.probes.size() != kNumLevels) {
    throw ArgumentError("verify_decomposition: scene must describe levels 2..5");
  }
  require_cell(scene.laterals.front(), location, "verify_decomposition");

  Tape tape;
  FeaturePyramid laterals;
  AttentionPyramid attention;
  for (int k = kFirstLevel; k <= kLastLevel; ++k) {
    const size_t i = static_cast<size_t>(k - kFirstLevel);
    laterals.levels.push_back(k == kLastLevel ? tape.leaf(scene.p5) : tape.constant(scene.laterals[i]));
    laterals.strides.push_back(Index{1} << k);
    attention.maps.push_back(tape.constant(scene.attention[i]));
    attention.strides.push_back(Index{1} << k);
  }
  FeaturePyramid merged = ssm_chain(laterals, attention);
  const Var& top = merged.level(kLastLevel);
  const CellLocation top_cell = location.at_level(kLastLevel);

  GradReport report;
  report.location = location;
  std::vector<Var> losses;
  for (int k = kFirstLevel; k <= kLastLevel; ++k) {
    const size_t i = static_cast<size_t>(k - kFirstLevel);
    const CellLocation cell = location.at_level(k);
    Var loss = probe_loss(merged.level(k), scene.probes[i], cell);
    losses.push_back(loss);
    tape.backward(loss);
    report.g[i] = cell_vector(merged.level(k).grad(), cell);
    report.contribution[i] = cell_vector(top.grad(), top_cell);
    report.psi[i] = psi(scene.attention, location, k);
  }
  Var total = losses.front();
  for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  tape.backward(total);
  report.autograd_total = cell_vector(top.grad(), top_cell);
  finish_report(report);
  return report;
}

namespace {

NeckOutput forward_rule(const SspnetParams& params, MergeRule rule, const Var& image, ParamBinding& bind) {
  FeaturePyramid c = extract_features(image, params.backbone, bind);
  if (rule == MergeRule::Baseline) return baseline_neck(c, params.neck, bind);
  return sspnet_neck(c, context_attention(c, params.cam, bind), params.neck, bind);
}

std::vector<Tensor> attention_values(const NeckOutput& out) {
  std::vector<Tensor> a;
  if (out.attention) {
    for (const Var& m : out.attention->maps) a.push_back(m.value());
  }
  return a;
}


GradReport sweep_levels(const SspnetParams& params, MergeRule rule, const Tensor& image,
                        std::span<const LevelProbe> probes, CellLocation location) {
  if (probes.size() != kNumLevels) throw ArgumentError("expected one probe per level");
  Tape tape;
  ParamBinding bind(tape, false);
  // The image is a leaf only so that every intermediate map carries a gradient.
  NeckOutput out = forward_rule(params, rule, tape.leaf(image), bind);
  require_cell(out.merged.level(kFirstLevel).value(), location, "per_layer_gradients");
  const std::vector<Tensor> attention = attention_values(out);
  const Var& top = out.merged.level(kLastLevel);
  const CellLocation top_cell = location.at_level(kLastLevel);

  GradReport report;
  report.location = location;
  std::vector<Var> losses;
  for (int k = kFirstLevel; k <= kLastLevel; ++k) {
    const size_t i = static_cast<size_t>(k - kFirstLevel);
    const CellLocation cell = location.at_level(k);
    Var loss = probe_loss(out.outputs.level(k), probes[i], cell);
    losses.push_back(loss);
    tape.backward(loss);
    report.g[i] = cell_vector(out.merged.level(k).grad(), cell);
    report.contribution[i] = cell_vector(top.grad(), top_cell);
    report.psi[i] = rule == MergeRule::Ssm ? psi(attention, location, k) : 1.0;
  }
  Var total = losses.front();
  for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  tape.backward(total);
  report.autograd_total = cell_vector(top.grad(), top_cell);
  finish_report(report);
  return report;
}

}  // namespace

std::array<Eigen::VectorXd, kNumLevels> per_layer_gradients(const SspnetParams& params, MergeRule rule,
                                                            const Tensor& image, std::span<const LevelProbe> probes,
                                                            CellLocation location) {
  return sweep_levels(params, rule, image, probes, location).g;
}

GradReport full_graph_report(const SspnetParams& params, MergeRule rule, const Tensor& image,
                             std::span<const LevelProbe> probes, CellLocation location) {
  return sweep_levels(params, rule, image, probes, location);
}

double conflict_mass(std::span<const Eigen::VectorXd> contributions, std::span<const double> labels) {
  if (contributions.size() != labels.size() || contributions.empty()) {
    throw ArgumentError("conflict_mass: one label per contribution required");
  }
  double mass = 0.0;
  for (Index c = 0; c < contributions.front().size(); ++c) {
    double reference = 0.0;
    for (size_t k = 0; k < labels.size(); ++k) {
      if (labels[k] > 0.5) reference += contributions[k][c];
    }
    if (reference == 0.0) continue;
    for (size_t k = 0; k < labels.size(); ++k) {
      const double v = contributions[k][c];
      if (labels[k] <= 0.5 && v * reference < 0) mass += std::abs(v);
    }
  }
  return mass;
}

ConflictSummary conflict_report(const SspnetParams& params, std::span<const SceneSample> scenes,
                                const AnchorSpec& anchors, double pos_iou, std::span<const LevelProbe> probe_weights) {
  ConflictSummary summary;
  for (const SceneSample& scene : scenes) {
    const LayerAssignment assign = match_anchors(scene.gts, anchors, pos_iou);
    const Index rows = scene.image.dim(2) / 4, cols = scene.image.dim(3) / 4;
    for (size_t g = 0; g < scene.gts.size(); ++g) {
      const GtBox& gt = scene.gts[g];
      if (gt.ignore || !in_partition(gt.scale(), ScalePartition::Tiny)) continue;
      CellLocation loc{std::clamp<Index>(static_cast<Index>(std::floor(gt.box.cy() / 4.0)), 0, rows - 1),
                       std::clamp<Index>(static_cast<Index>(std::floor(gt.box.cx() / 4.0)), 0, cols - 1)};
      std::vector<LevelProbe> probes(probe_weights.begin(), probe_weights.end());
      std::vector<double> labels(kNumLevels, 0.0);
      for (int level : assign.positive_levels[g]) labels[static_cast<size_t>(level - kFirstLevel)] = 1.0;
      for (size_t i = 0; i < kNumLevels; ++i) probes[i].label = labels[i];

      ConflictSample sample{loc, 0, 0};
      const GradReport base = sweep_levels(params, MergeRule::Baseline, scene.image, probes, loc);
      const GradReport ssp = sweep_levels(params, MergeRule::Ssm, scene.image, probes, loc);
      sample.baseline_mass = conflict_mass(base.contribution, labels);
      sample.sspnet_mass = conflict_mass(ssp.contribution, labels);
      summary.samples.push_back(sample);
    }
  }
  if (!summary.samples.empty()) {
    Index reduced = 0;
    for (const auto& s : summary.samples) {
      summary.mean_baseline += s.baseline_mass;
      summary.mean_sspnet += s.sspnet_mass;
      if (s.sspnet_mass < s.baseline_mass) ++reduced;
    }
    const double n = static_cast<double>(summary.samples.size());
    summary.mean_baseline /= n;
    summary.mean_sspnet /= n;
    summary.fraction_reduced = static_cast<double>(reduced) / n;
  }
  return summary;
}

}  // namespace sspnet
