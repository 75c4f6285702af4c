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

#include "sspnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sspnet {

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || mu1 < 0 || mu2 < 0) throw ArgumentError("loss weights must be non-negative");
}

namespace {

void require_match(const Var& a, const Tensor& t, const char* op) {
  if (a.shape() != t.shape()) {
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs target " + shape_str(t.shape()));
  }
}

double clip_prob(double p) { return std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip); }

double cell_bce(double a, double s) {
  return -(s * std::log(clip_prob(a)) + (1.0 - s) * std::log(clip_prob(1.0 - a)));
}

// d/da of cell_bce, zero where the clip is active.
double cell_bce_grad(double a, double s) {
  double g = 0.0;
  if (a > kProbabilityClip && a < 1.0 - kProbabilityClip) g = -s / a + (1.0 - s) / (1.0 - a);
  return g;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Var dice_loss(const Var& attention, const Tensor& target) {
  require_match(attention, target, "dice_loss");
  const auto& a = attention.value().data();
  const auto& s = target.data();
  const double inter = (a * s).sum();
  const double denom = a.square().sum() + s.square().sum() + kDiceSmoothing;
  const double numer = 2.0 * inter + kDiceSmoothing;
  Tensor av = attention.value();
  return attention.tape().record(
      Tensor::scalar(1.0 - numer / denom), {attention},
      [av, target, numer, denom](const Tensor& g, std::span<Tensor* const> gin) {
        gin[0]->data() += g[0] * -(2.0 * target.data() * denom - numer * 2.0 * av.data()) / (denom * denom);
      });
}

OhemSelection select_ohem(const Tensor& cell_losses, const Tensor& target, Index neg_ratio) {
  OhemSelection sel;
  std::vector<Index> negatives;
  for (Index i = 0; i < target.numel(); ++i) (target[i] > 0.5 ? sel.positives : negatives).push_back(i);
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](Index a, Index b) { return cell_losses[a] > cell_losses[b]; });
  Index keep = static_cast<Index>(sel.positives.size()) * neg_ratio;
  if (sel.positives.empty()) keep = std::max<Index>(1, target.numel() * 25 / 10000);
  keep = std::min<Index>(keep, static_cast<Index>(negatives.size()));
  sel.negatives.assign(negatives.begin(), negatives.begin() + keep);
  return sel;
}

Var bce_ohem_loss(const Var& attention, const Tensor& target, Index neg_ratio) {
  require_match(attention, target, "bce_ohem_loss");
  const Tensor& a = attention.value();
  Tensor losses(a.shape());
  for (Index i = 0; i < a.numel(); ++i) losses[i] = cell_bce(a[i], target[i]);
  OhemSelection sel = select_ohem(losses, target, neg_ratio);
  std::vector<Index> kept = sel.positives;
  kept.insert(kept.end(), sel.negatives.begin(), sel.negatives.end());
  double total = 0.0;
  for (Index i : kept) total += losses[i];
  const double count = static_cast<double>(std::max<size_t>(kept.size(), 1));
  Tensor decision(a.shape(), -1.0);
  for (Index i : kept) decision[i] = 1.0;
  attention.tape().note_branch_pattern(decision);
  Tensor av = a;
  return attention.tape().record(Tensor::scalar(total / count), {attention},
                                 [av, target, kept, count](const Tensor& g, std::span<Tensor* const> gin) {
                                   for (Index i : kept) (*gin[0])[i] += g[0] * cell_bce_grad(av[i], target[i]) / count;
                                 });
}

Var attention_loss(const AttentionPyramid& attention, std::span<const Tensor> targets, const LossWeights& weights) {
  weights.validate();
  if (attention.size() != targets.size() || attention.size() == 0) {
    throw DimensionError("attention_loss: attention and target pyramids differ in depth");
  }
  Tape& tape = attention.maps.front().tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  for (size_t k = 0; k < attention.size(); ++k) {
    total = add(total, scale(bce_ohem_loss(attention.maps[k], targets[k]), weights.alpha));
    total = add(total, scale(dice_loss(attention.maps[k], targets[k]), weights.beta));
  }
  return total;
}

Var smooth_l1_sum(const Var& pred, const Tensor& target) {
  require_match(pred, target, "smooth_l1");
  const Eigen::ArrayXd d = pred.value().data() - target.data();
  const Eigen::ArrayXd per = (d.abs() < 1.0).select(0.5 * d.square(), d.abs() - 0.5);
  pred.tape().note_branch_pattern(Tensor(pred.shape(), (d > 1.0).select(1.0, Eigen::ArrayXd::Constant(d.size(), -1.0))));
  pred.tape().note_branch_pattern(Tensor(pred.shape(), (d < -1.0).select(1.0, Eigen::ArrayXd::Constant(d.size(), -1.0))));
  return pred.tape().record(Tensor::scalar(per.sum()), {pred}, [d](const Tensor& g, std::span<Tensor* const> gin) {
    gin[0]->data() += g[0] * (d.abs() < 1.0).select(d, d.sign());
  });
}

Var smooth_l1(const Var& pred, const Tensor& target) {
  return scale(smooth_l1_sum(pred, target), 1.0 / static_cast<double>(pred.value().numel()));
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  require_match(logits, targets, "bce_with_logits");
  const Tensor& z = logits.value();
  const double n = static_cast<double>(z.numel());
  double total = 0.0;
  for (Index i = 0; i < z.numel(); ++i) total += softplus(z[i]) - targets[i] * z[i];
  Tensor zv = z;
  return logits.tape().record(Tensor::scalar(total / n), {logits},
                              [zv, targets, n](const Tensor& g, std::span<Tensor* const> gin) {
                                for (Index i = 0; i < zv.numel(); ++i) {
                                  (*gin[0])[i] += g[0] * (logistic(zv[i]) - targets[i]) / n;
                                }
                              });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != static_cast<Index>(labels.size())) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(z.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const Index rows = z.dim(0), k = z.dim(1);
  Tensor probs(z.shape());
  double total = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (Index r = 0; r < rows; ++r) {
    if (lab[static_cast<size_t>(r)] < 0 || lab[static_cast<size_t>(r)] >= k) throw ArgumentError("label out of range");
    const auto row = z.data().segment(r * k, k);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row - mx).exp().sum());
    probs.data().segment(r * k, k) = (row - lse).exp();
    total += lse - row[lab[static_cast<size_t>(r)]];
  }
  const double n = static_cast<double>(rows);
  return logits.tape().record(Tensor::scalar(total / n), {logits},
                              [probs, lab, k, n](const Tensor& g, std::span<Tensor* const> gin) {
                                Tensor d = probs;
                                for (size_t r = 0; r < lab.size(); ++r) d[static_cast<Index>(r) * k + lab[r]] -= 1.0;
                                gin[0]->data() += g[0] / n * d.data();
                              });
}

std::pair<Var, Var> detection_losses(const RpnBatch& rpn, const HeadBatch& head, const LossWeights& weights) {
  weights.validate();
  Tape& tape = rpn.logits.tape();
  auto regression = [&](const Var& deltas, const Tensor& targets, double mu) {
    if (!deltas.valid() || mu == 0.0) return tape.constant(Tensor::scalar(0.0));
    const double n_reg = std::max<Index>(1, deltas.value().dim(0));
    return scale(smooth_l1_sum(deltas, targets), mu / n_reg);
  };
  Var l_rpn = add(bce_with_logits(rpn.logits, rpn.labels), regression(rpn.deltas, rpn.target_deltas, weights.mu1));
  Var l_head = add(softmax_cross_entropy(head.logits, head.labels), regression(head.deltas, head.target_deltas, weights.mu2));
  return {l_rpn, l_head};
}

Var joint_loss(const Var& rpn, const Var& head, const Var& attention) { return add(add(rpn, head), attention); }

}  // namespace sspnet
