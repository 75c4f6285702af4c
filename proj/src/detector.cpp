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

#include "sspnet/detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <tuple>

#include "sspnet/losses.hpp"
#include "sspnet/wns.hpp"

namespace sspnet {

namespace {

constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)
constexpr double kRpnNegIou = 0.3;
constexpr double kHeadPosIou = 0.5;
constexpr int kPreNmsTop = 400;
constexpr double kObjectnessPrior = 0.05;

void shuffle(std::vector<int>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// Indices sorted by descending score; ties keep index order.
std::vector<int> ranked(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

Box clip(const Box& b, Index width, Index height) {
  const double x0 = std::clamp(b.x, 0.0, static_cast<double>(width));
  const double y0 = std::clamp(b.y, 0.0, static_cast<double>(height));
  const double x1 = std::clamp(b.x + b.w, 0.0, static_cast<double>(width));
  const double y1 = std::clamp(b.y + b.h, 0.0, static_cast<double>(height));
  return {x0, y0, x1 - x0, y1 - y0};
}

double sigmoid_value(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

MergeRule parse_neck(const std::string& name) {
  if (name == "sspnet") return MergeRule::Ssm;
  if (name == "baseline") return MergeRule::Baseline;
  throw ArgumentError("unknown neck '" + name + "' (expected sspnet or baseline)");
}

const char* neck_name(MergeRule rule) { return rule == MergeRule::Ssm ? "sspnet" : "baseline"; }

Index Detector::anchors_per_cell() const {
  size_t n = 0;
  for (const auto& level : anchors.per_level) n = std::max(n, level.size());
  return static_cast<Index>(n);
}

AnchorSpec choose_anchors(const ExperimentConfig& config, std::span<const GtBox> boxes) {
  if (!config.kmeans_anchors) return geometric_ladder();
  std::vector<GtBox> kept;
  for (const GtBox& g : boxes)
    if (!g.ignore) kept.push_back(g);
  if (kept.size() < static_cast<size_t>(config.anchors_k)) {
    throw DataError("k-means anchors need at least " + std::to_string(config.anchors_k) + " annotated boxes, found " +
                    std::to_string(kept.size()));
  }
  const KMeansResult km = kmeans_anchors(kept, config.anchors_k, Rng::for_stage(config.seed, "anchors").next());
  return anchors_per_level(km.centroids, kNumLevels);
}

Detector init_detector(const ExperimentConfig& config, AnchorSpec anchors) {
  config.validate();
  if (anchors.per_level.size() != static_cast<size_t>(kNumLevels)) throw ArgumentError("init_detector: need one anchor group per level");
  Detector det;
  det.neck = parse_neck(config.neck);
  det.anchors = std::move(anchors);
  Rng rng = Rng::for_stage(config.seed, "init");
  BackboneConfig bc;
  bc.stage_channels.assign(5, config.stage_channels);
  bc.channels = config.channels;
  CamConfig cc;
  cc.channels = config.channels;
  cc.context_channels = kNumLevels * config.channels;
  DetectorParams& p = det.params;
  p.net.backbone = init_backbone(bc, rng);
  p.net.cam = init_cam(cc, rng);
  p.net.neck = init_neck(bc.channels, rng);
  const Index a = det.anchors_per_cell();
  p.rpn_conv = make_conv(bc.channels, kRpnHidden, 3, {1, 1, 1}, rng);
  p.rpn_out = make_conv(kRpnHidden, 5 * a, 1, {}, rng);
  p.rpn_out.weight.data() *= 0.1;
  for (Index s = 0; s < a; ++s) p.rpn_out.bias[5 * s] = std::log(kObjectnessPrior / (1 - kObjectnessPrior));
  p.head_hidden = make_linear(kRoiGrid * kRoiGrid * bc.channels, config.hidden, rng);
  p.head_out = make_linear(config.hidden, 6, rng);
  p.head_out.weight.data() *= 0.1;
  return det;
}

std::array<double, 4> encode_box(const Box& ref, const Box& target) {
  return {(target.cx() - ref.cx()) / ref.w, (target.cy() - ref.cy()) / ref.h, std::log(target.w / ref.w),
          std::log(target.h / ref.h)};
}

Box decode_box(const Box& ref, std::span<const double> d) {
  const double w = ref.w * std::exp(std::min(d[2], kMaxLogScale));
  const double h = ref.h * std::exp(std::min(d[3], kMaxLogScale));
  return Box::centered(ref.cx() + d[0] * ref.w, ref.cy() + d[1] * ref.h, w, h);
}

std::vector<int> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_thr, int limit) {
  if (boxes.size() != scores.size()) throw DimensionError("nms: boxes and scores differ in length");
  std::vector<int> keep;
  for (int i : ranked(scores)) {
    if (static_cast<int>(keep.size()) >= limit) break;
    bool suppressed = false;
    for (int k : keep) {
      if (iou(boxes[i], boxes[k]) > iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

AnchorGrid tile_anchors(const AnchorSpec& spec, std::span<const std::pair<Index, Index>> shapes, Index per_cell) {
  if (shapes.size() != spec.per_level.size()) throw DimensionError("tile_anchors: level count mismatch");
  AnchorGrid g;
  Index offset = 0;
  for (size_t l = 0; l < shapes.size(); ++l) {
    const auto [rows, cols] = shapes[l];
    const double s = static_cast<double>(spec.strides[l]);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        for (size_t a = 0; a < spec.per_level[l].size(); ++a) {
          const AnchorShape& sh = spec.per_level[l][a];
          g.boxes.push_back(Box::centered((static_cast<double>(c) + 0.5) * s, (static_cast<double>(r) + 0.5) * s, sh.w, sh.h));
          g.flat.push_back(offset + (static_cast<Index>(5 * a) * rows + r) * cols + c);
          g.plane.push_back(rows * cols);
        }
    offset += 5 * per_cell * rows * cols;
  }
  return g;
}

DetectorPass detector_forward(const Detector& det, const Var& image, ParamBinding& bind) {
  const DetectorParams& p = det.params;
  DetectorPass pass;
  FeaturePyramid c = extract_features(image, p.net.backbone, bind);
  if (det.neck == MergeRule::Ssm) {
    pass.neck = sspnet_neck(c, context_attention(c, p.net.cam, bind), p.net.neck, bind);
  } else {
    pass.neck = baseline_neck(c, p.net.neck, bind);
  }
  std::vector<Var> rpn, feats;
  Index offset = 0;
  for (const Var& level : pass.neck.outputs.levels) {
    rpn.push_back(apply(p.rpn_out, relu(apply(p.rpn_conv, level, bind)), bind));
    feats.push_back(level);
    pass.shapes.emplace_back(level.value().dim(2), level.value().dim(3));
    pass.feature_offset.push_back(offset);
    offset += level.value().numel();
  }
  pass.rpn = flatten_concat(rpn);
  pass.features = flatten_concat(feats);
  pass.grid = tile_anchors(det.anchors, pass.shapes, det.anchors_per_cell());
  pass.height = image.value().dim(2);
  pass.width = image.value().dim(3);
  return pass;
}

std::vector<Proposal> propose(const DetectorPass& pass, const ExperimentConfig& config) {
  const Index width = pass.width, height = pass.height;
  const Tensor& out = pass.rpn.value();
  const size_t n = pass.grid.boxes.size();
  std::vector<double> scores(n);
  for (size_t i = 0; i < n; ++i) scores[i] = sigmoid_value(out[pass.grid.flat[i]]);
  std::vector<Box> boxes;
  std::vector<double> kept_scores;
  const std::vector<int> order = ranked(scores);
  for (size_t r = 0; r < order.size() && static_cast<int>(boxes.size()) < kPreNmsTop; ++r) {
    const size_t i = static_cast<size_t>(order[r]);
    std::array<double, 4> d;
    for (Index j = 0; j < 4; ++j) d[static_cast<size_t>(j)] = out[pass.grid.flat[i] + (j + 1) * pass.grid.plane[i]];
    const Box b = clip(decode_box(pass.grid.boxes[i], d), width, height);
    if (b.w < 1.0 || b.h < 1.0) continue;
    boxes.push_back(b);
    kept_scores.push_back(scores[i]);
  }
  std::vector<Proposal> props;
  for (int i : nms(boxes, kept_scores, config.rpn_nms_iou, config.proposals)) props.push_back({boxes[i], kept_scores[i]});
  return props;
}

int roi_level(const Box& box) {
  const double s = std::sqrt(std::max(box.area(), 1e-12));
  return std::clamp(kFirstLevel + static_cast<int>(std::floor(std::log2(s / 8.0))), kFirstLevel, kLastLevel);
}

Var roi_pool(const DetectorPass& pass, std::span<const Box> boxes) {
  if (boxes.empty()) throw ArgumentError("roi_pool: no boxes");
  const Index channels = pass.neck.outputs.channels();
  const Index width = kRoiGrid * kRoiGrid * channels;
  std::vector<Index> idx;
  idx.reserve(boxes.size() * static_cast<size_t>(width));
  for (const Box& b : boxes) {
    const size_t l = static_cast<size_t>(roi_level(b) - kFirstLevel);
    const auto [rows, cols] = pass.shapes[l];
    const double s = static_cast<double>(pass.neck.outputs.strides[l]);
    for (Index ch = 0; ch < channels; ++ch)
      for (Index i = 0; i < kRoiGrid; ++i)
        for (Index j = 0; j < kRoiGrid; ++j) {
          const double py = b.y + (static_cast<double>(i) + 0.5) * b.h / kRoiGrid;
          const double px = b.x + (static_cast<double>(j) + 0.5) * b.w / kRoiGrid;
          const Index r = std::clamp<Index>(static_cast<Index>(std::floor(py / s)), 0, rows - 1);
          const Index c = std::clamp<Index>(static_cast<Index>(std::floor(px / s)), 0, cols - 1);
          idx.push_back(pass.feature_offset[l] + (ch * rows + r) * cols + c);
        }
  }
  return gather(pass.features, idx, {static_cast<Index>(boxes.size()), width});
}

Var head_forward(const Detector& det, const DetectorPass& pass, std::span<const Box> boxes, ParamBinding& bind) {
  return apply(det.params.head_out, relu(apply(det.params.head_hidden, roi_pool(pass, boxes), bind)), bind);
}

std::vector<Detection> detect(const Detector& det, const Tensor& image, int image_id, const ExperimentConfig& config) {
  Tape tape;
  ParamBinding bind(tape, false);
  const DetectorPass pass = detector_forward(det, tape.constant(image), bind);
  const Index width = image.dim(3), height = image.dim(2);
  const std::vector<Proposal> props = propose(pass, config);
  if (props.empty()) return {};
  std::vector<Box> rois;
  for (const Proposal& p : props) rois.push_back(p.box);
  const Tensor out = head_forward(det, pass, rois, bind).value();
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (size_t r = 0; r < rois.size(); ++r) {
    const Index row = static_cast<Index>(r) * 6;
    const double score = sigmoid_value(out[row + 1] - out[row]);
    if (score < config.score_threshold) continue;
    const std::array<double, 4> d{out[row + 2], out[row + 3], out[row + 4], out[row + 5]};
    const Box b = clip(decode_box(rois[r], d), width, height);
    if (!(b.w > 0 && b.h > 0)) continue;
    boxes.push_back(b);
    scores.push_back(score);
  }
  std::vector<Detection> dets;
  for (int i : nms(boxes, scores, config.nms_iou, config.max_detections)) dets.push_back({image_id, boxes[i], scores[i]});
  return dets;
}

StepLosses detector_losses(const Detector& det, const DetectorPass& pass, std::span<const GtBox> gts,
                           const ExperimentConfig& config, std::uint64_t sample_seed, ParamBinding& bind) {
  Tape& tape = pass.rpn.tape();
  std::vector<Box> pos_gts, ign_gts;
  for (const GtBox& g : gts) (g.ignore ? ign_gts : pos_gts).push_back(g.box);

  // RPN: IoU >= pos_iou or a GT's best anchor is positive; below 0.3 to everything is negative.
  const AnchorGrid& grid = pass.grid;
  const size_t n = grid.boxes.size();
  std::vector<int> label(n, -1), target(n, -1);
  std::vector<double> best_for_gt(pos_gts.size(), 0.0);
  std::vector<int> best_anchor(pos_gts.size(), -1);
  for (size_t i = 0; i < n; ++i) {
    double best = 0.0, ign = 0.0;
    int arg = -1;
    for (size_t g = 0; g < pos_gts.size(); ++g) {
      const double v = iou(grid.boxes[i], pos_gts[g]);
      if (v > best) best = v, arg = static_cast<int>(g);
      if (v > best_for_gt[g]) best_for_gt[g] = v, best_anchor[g] = static_cast<int>(i);
    }
    for (const Box& b : ign_gts) ign = std::max(ign, iou(grid.boxes[i], b));
    if (best >= config.pos_iou) {
      label[i] = 1;
      target[i] = arg;
    } else if (best < kRpnNegIou && ign < kRpnNegIou) {
      label[i] = 0;
    }
  }
  for (size_t g = 0; g < pos_gts.size(); ++g) {
    if (best_anchor[g] < 0) continue;
    label[static_cast<size_t>(best_anchor[g])] = 1;
    target[static_cast<size_t>(best_anchor[g])] = static_cast<int>(g);
  }
  std::vector<int> pos, neg;
  for (size_t i = 0; i < n; ++i) {
    if (label[i] == 1) pos.push_back(static_cast<int>(i));
    if (label[i] == 0) neg.push_back(static_cast<int>(i));
  }
  Rng rng = Rng::for_stage(sample_seed, "rpn");
  shuffle(pos, rng);
  shuffle(neg, rng);
  pos.resize(std::min<size_t>(pos.size(), static_cast<size_t>(config.rpn_batch / 2)));
  neg.resize(std::min<size_t>(neg.size(), static_cast<size_t>(config.rpn_batch) - pos.size()));

  RpnBatch rpn;
  std::vector<Index> logit_idx;
  Tensor labels({static_cast<Index>(pos.size() + neg.size())});
  for (int i : pos) logit_idx.push_back(grid.flat[static_cast<size_t>(i)]);
  for (int i : neg) logit_idx.push_back(grid.flat[static_cast<size_t>(i)]);
  for (size_t i = 0; i < pos.size(); ++i) labels[static_cast<Index>(i)] = 1.0;
  rpn.logits = gather(pass.rpn, logit_idx, {static_cast<Index>(logit_idx.size())});
  rpn.labels = labels;
  if (!pos.empty()) {
    std::vector<Index> didx;
    rpn.target_deltas = Tensor({static_cast<Index>(pos.size()), 4});
    for (size_t p = 0; p < pos.size(); ++p) {
      const size_t i = static_cast<size_t>(pos[p]);
      const auto t = encode_box(grid.boxes[i], pos_gts[static_cast<size_t>(target[i])]);
      for (Index j = 0; j < 4; ++j) {
        didx.push_back(grid.flat[i] + (j + 1) * grid.plane[i]);
        rpn.target_deltas[static_cast<Index>(p) * 4 + j] = t[static_cast<size_t>(j)];
      }
    }
    rpn.deltas = gather(pass.rpn, didx, {static_cast<Index>(pos.size()), 4});
  }

  // Head: proposals plus the GTs themselves. Negatives come from WNS over the low-IoU pool.
  const std::vector<Proposal> props = propose(pass, config);
  std::vector<Box> rois;
  std::vector<int> head_labels;
  std::vector<std::array<double, 4>> head_targets;
  std::vector<int> roi_pos;
  std::vector<Box> candidates_pos;
  for (size_t i = 0; i < props.size() + pos_gts.size(); ++i) {
    const Box& b = i < props.size() ? props[i].box : pos_gts[i - props.size()];
    double best = 0.0;
    int arg = -1;
    for (size_t g = 0; g < pos_gts.size(); ++g) {
      const double v = iou(b, pos_gts[g]);
      if (v > best) best = v, arg = static_cast<int>(g);
    }
    if (best < kHeadPosIou) continue;
    roi_pos.push_back(static_cast<int>(i));
    candidates_pos.push_back(pos_gts[static_cast<size_t>(arg)]);
  }
  Rng head_rng = Rng::for_stage(sample_seed, "head");
  std::vector<int> order(roi_pos.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, head_rng);
  order.resize(std::min<size_t>(order.size(), static_cast<size_t>(config.head_positives)));
  for (int o : order) {
    const size_t i = static_cast<size_t>(roi_pos[static_cast<size_t>(o)]);
    const Box& b = i < props.size() ? props[i].box : pos_gts[i - props.size()];
    rois.push_back(b);
    head_labels.push_back(1);
    head_targets.push_back(encode_box(b, candidates_pos[static_cast<size_t>(o)]));
  }
  std::vector<Proposal> clean;
  for (const Proposal& p : props) {
    bool near_ignored = false;
    for (const Box& b : ign_gts) near_ignored = near_ignored || iou(p.box, b) >= kHeadPosIou;
    if (!near_ignored) clean.push_back(p);
  }
  const CandidatePool pool = candidate_pool(clean, pos_gts, kHeadPosIou);
  if (!pool.candidates.empty() && config.head_negatives > 0) {
    const std::vector<double> s = wns_scores(pool.candidates, config.wns_lambda);
    const int take = std::min<int>(config.head_negatives, static_cast<int>(s.size()));
    for (int k : wns_sample(s, take, Rng::for_stage(sample_seed, "wns").next())) {
      rois.push_back(clean[static_cast<size_t>(pool.proposal_index[static_cast<size_t>(k)])].box);
      head_labels.push_back(0);
    }
  }

  HeadBatch head;
  if (rois.empty()) {
    head.logits = tape.constant(Tensor::zeros({0, 2}));
  } else {
    const Var raw = head_forward(det, pass, rois, bind);
    std::vector<Index> cls, reg;
    for (size_t r = 0; r < rois.size(); ++r) {
      cls.push_back(static_cast<Index>(r) * 6);
      cls.push_back(static_cast<Index>(r) * 6 + 1);
    }
    head.logits = gather(raw, cls, {static_cast<Index>(rois.size()), 2});
    head.labels = head_labels;
    if (!head_targets.empty()) {
      head.target_deltas = Tensor({static_cast<Index>(head_targets.size()), 4});
      for (size_t p = 0; p < head_targets.size(); ++p)
        for (Index j = 0; j < 4; ++j) {
          reg.push_back(static_cast<Index>(p) * 6 + 2 + j);  // positives lead the RoI list
          head.target_deltas[static_cast<Index>(p) * 4 + j] = head_targets[p][static_cast<size_t>(j)];
        }
      head.deltas = gather(raw, reg, {static_cast<Index>(head_targets.size()), 4});
    }
  }

  StepLosses out;
  if (rois.empty()) {
    out.rpn = add(bce_with_logits(rpn.logits, rpn.labels),
                  rpn.deltas.valid() ? scale(smooth_l1_sum(rpn.deltas, rpn.target_deltas),
                                             config.loss.mu1 / static_cast<double>(pos.size()))
                                     : tape.constant(Tensor::scalar(0.0)));
    out.head = tape.constant(Tensor::scalar(0.0));
  } else {
    std::tie(out.rpn, out.head) = detection_losses(rpn, head, config.loss);
  }
  if (pass.neck.attention) {
    const LayerAssignment assign = match_anchors(gts, det.anchors, config.pos_iou);
    const std::vector<Tensor> targets = supervised_heatmaps(assign, gts, pass.shapes, det.anchors.strides);
    out.attention = attention_loss(*pass.neck.attention, targets, config.loss);
  } else {
    out.attention = tape.constant(Tensor::scalar(0.0));
  }
  out.total = joint_loss(out.rpn, out.head, out.attention);
  return out;
}

}  // namespace sspnet
