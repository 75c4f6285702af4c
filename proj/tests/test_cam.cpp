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

#include <doctest.h>

#include "sspnet/anchors.hpp"
#include "sspnet/cam.hpp"
#include "sspnet/gradcheck.hpp"
#include "sspnet/losses.hpp"
#include "test_util.hpp"

using namespace sspnet;
using sspnet::testing::random_tensor;

namespace {

FeaturePyramid pyramid_of(Tape& tape, const std::vector<Tensor>& levels) {
  FeaturePyramid p;
  Index stride = 4;
  for (const Tensor& t : levels) {
    p.levels.push_back(tape.leaf(t));
    p.strides.push_back(stride);
    stride *= 2;
  }
  return p;
}

std::vector<Tensor> random_levels(Rng& rng, Index channels, Index bottom) {
  std::vector<Tensor> out;
  for (Index side = bottom; out.size() < 4; side /= 2) out.push_back(random_tensor({1, channels, side, side}, rng));
  return out;
}

void zero(ConvLayer& layer) {
  layer.weight = Tensor(layer.weight.shape());
  layer.bias = Tensor(layer.bias.shape());
}

}  // namespace

TEST_CASE("context concatenates every level at bottom resolution") {
  Tape tape;
  Rng rng(1);
  Var fc = build_context(pyramid_of(tape, random_levels(rng, 4, 16)));
  CHECK(fc.value().shape() == Shape{1, 16, 16, 16});

  std::vector<Tensor> zeros;
  for (Index side : {8, 4, 2, 1}) zeros.emplace_back(Shape{1, 4, side, side});
  CHECK(build_context(pyramid_of(tape, zeros)).value().data().abs().maxCoeff() == 0.0);

  FeaturePyramid empty;
  CHECK_THROWS_AS(build_context(empty), ArgumentError);
}

TEST_CASE("one C5 cell fills a stride-ratio block of its concat slice") {
  Tape tape;
  std::vector<Tensor> levels;
  for (Index side : {16, 8, 4, 2}) levels.emplace_back(Shape{1, 4, side, side});
  levels[3].at(0, 2, 1, 0) = 5.0;
  const Tensor fc = build_context(pyramid_of(tape, levels)).value();
  const Index block = 32 / 4;
  for (Index c = 0; c < 16; ++c)
    for (Index i = 0; i < 16; ++i)
      for (Index j = 0; j < 16; ++j) {
        const bool inside = c == 12 + 2 && i / block == 1 && j / block == 0;
        CHECK(fc.at(0, c, i, j) == (inside ? 5.0 : 0.0));
      }
}

TEST_CASE("ASPP shapes, zero weights, and rate validation") {
  Rng rng(2);
  CamConfig cfg;
  cfg.aspp_rates = {1};
  CamParams params = init_cam(cfg, rng);
  zero(params.aspp_point);
  zero(params.aspp_atrous[0]);
  zero(params.aspp_fuse);
  Tape tape;
  ParamBinding bind(tape);
  Var out = aspp(tape.constant(random_tensor({1, 16, 8, 8}, rng)), params, bind);
  CHECK(out.value() == Tensor({1, 4, 8, 8}));

  CamConfig wide;
  wide.aspp_rates = {1, 2, 3, 4};
  CamParams p2 = init_cam(wide, rng);
  Var y = aspp(tape.constant(random_tensor({1, 16, 8, 8}, rng)), p2, bind);
  CHECK(y.value().shape() == Shape{1, 4, 8, 8});
  for (const ConvLayer& b : p2.aspp_atrous) {
    CHECK(apply(b, tape.constant(random_tensor({1, 16, 8, 8}, rng)), bind).value().shape() == Shape{1, 4, 8, 8});
  }

  CamConfig bad;
  bad.aspp_rates = {1, 0};
  CHECK_THROWS_AS(init_cam(bad, rng), ArgumentError);
  bad.aspp_rates = {};
  CHECK_THROWS_AS(init_cam(bad, rng), ArgumentError);
}

TEST_CASE("dilation-2 branch on an impulse lays weights out on a checkerboard") {
  Rng rng(3);
  CamParams params = init_cam({}, rng);
  const ConvLayer& branch = params.aspp_atrous[1];
  REQUIRE(branch.spec.dilation == 2);
  Tensor impulse({1, 16, 9, 9});
  impulse.at(0, 5, 4, 4) = 1.0;
  Tape tape;
  ParamBinding bind(tape);
  const Tensor out = apply(branch, tape.constant(impulse), bind).value();
  CHECK(max_abs_diff(out, sspnet::testing::reference_conv(impulse, branch.weight, branch.bias, 1, 2, 2)) < 1e-12);
  for (Index o = 0; o < 4; ++o)
    for (Index u = 0; u < 3; ++u)
      for (Index v = 0; v < 3; ++v) CHECK(out.at(0, o, 4 - 2 * (u - 1), 4 - 2 * (v - 1)) == branch.weight.at(o, 5, u, v));
  CHECK(out.at(0, 0, 3, 4) == 0.0);
  CHECK(out.at(0, 0, 5, 5) == 0.0);
}

TEST_CASE("gate heatmaps: shapes, zero gates, saturation, geometry") {
  Rng rng(4);
  CamParams params = init_cam({}, rng);
  Tape tape;
  ParamBinding bind(tape);
  Var fc = tape.constant(random_tensor({1, 4, 16, 16}, rng));
  AttentionPyramid a = attention_heatmaps(fc, params.gates, bind);
  const Index sides[] = {16, 8, 4, 2};
  for (size_t i = 0; i < 4; ++i) {
    CHECK(a.maps[i].value().shape() == Shape{1, 1, sides[i], sides[i]});
    CHECK(a.maps[i].value().data().minCoeff() > 0.0);
    CHECK(a.maps[i].value().data().maxCoeff() < 1.0);
  }

  auto gates = params.gates;
  for (auto& g : gates) zero(g);
  ParamBinding zero_bind(tape);
  for (const Var& m : attention_heatmaps(fc, gates, zero_bind).maps) CHECK(m.value().data().isApproxToConstant(0.5, 0.0));
  for (auto& g : gates) g.bias = Tensor({1}, 20.0);
  ParamBinding saturated_bind(tape);
  for (const Var& m : attention_heatmaps(fc, gates, saturated_bind).maps) {
    CHECK((1.0 - m.value().data()).abs().maxCoeff() < 1e-8);
    CHECK(m.value().data().maxCoeff() < 1.0);
  }

  CHECK_THROWS_AS(attention_heatmaps(tape.constant(Tensor({1, 4, 12, 12})), params.gates, bind),
                  DegenerateGeometryError);
}

TEST_CASE("attention shapes track the pyramid") {
  Rng rng(5);
  for (Index bottom : {8, 16}) {
    CamParams params = init_cam({}, rng);
    Tape tape;
    ParamBinding bind(tape);
    FeaturePyramid c = pyramid_of(tape, random_levels(rng, 4, bottom));
    AttentionPyramid a = context_attention(c, params, bind);
    for (int k = kFirstLevel; k <= kLastLevel; ++k) {
      const Shape& fs = c.level(k).value().shape();
      CHECK(a.level(k).value().shape() == Shape{1, 1, fs[2], fs[3]});
    }
  }
}

TEST_CASE("heatmaps are differentiable in the context and the gates") {
  Rng rng(6);
  CamParams params = init_cam({}, rng);
  const Tensor fc = random_tensor({1, 4, 8, 8}, rng, 0.5);
  std::vector<Tensor> readout;
  for (Index side : {8, 4, 2, 1}) readout.push_back(random_tensor({1, 1, side, side}, rng));
  auto total = [&](Tape& t, const AttentionPyramid& a) {
    Var s = t.constant(Tensor::scalar(0));
    for (size_t i = 0; i < 4; ++i) s = add(s, dot(a.maps[i], readout[i]));
    return s;
  };

  GradCheckResult wrt_context = finite_diff_check(
      [&](Tape& t, const Var& x) {
        ParamBinding bind(t, false);
        return total(t, attention_heatmaps(x, params.gates, bind));
      },
      fc);
  CHECK(wrt_context.max_rel_error < 1e-4);

  std::vector<Tensor*> gate_tensors;
  for (auto& g : params.gates) {
    gate_tensors.push_back(&g.weight);
    gate_tensors.push_back(&g.bias);
  }
  ParamPack pack(gate_tensors);
  GradCheckResult wrt_gates = finite_diff_check(
      [&](Tape& t, const Var& x) {
        ParamBinding bind(t, false);
        Index off = 0;
        for (Tensor* p : gate_tensors) {
          std::vector<Index> idx(static_cast<size_t>(p->numel()));
          for (Index i = 0; i < p->numel(); ++i) idx[static_cast<size_t>(i)] = off + i;
          bind.bind(*p, gather(x, idx, p->shape()));
          off += p->numel();
        }
        return total(t, attention_heatmaps(t.constant(fc), params.gates, bind));
      },
      pack.pack());
  CHECK(wrt_gates.max_rel_error < 1e-4);
}

TEST_CASE("supervised training lifts attention inside positive regions") {
  // Bright squares on a dark background, two tiny and one larger object.
  const std::vector<GtBox> gts{{{6, 6, 6, 6}}, {{40, 12, 8, 8}}, {{20, 36, 20, 20}}};
  Tensor image({1, 1, 64, 64}, 0.1);
  for (const GtBox& g : gts)
    for (Index i = static_cast<Index>(g.box.y); i < static_cast<Index>(g.box.y + g.box.h); ++i)
      for (Index j = static_cast<Index>(g.box.x); j < static_cast<Index>(g.box.x + g.box.w); ++j) image.at(0, 0, i, j) = 0.9;

  AnchorSpec spec = geometric_ladder();
  const LayerAssignment assign = match_anchors(gts, spec, 0.5);
  const std::vector<std::pair<Index, Index>> shapes{{16, 16}, {8, 8}, {4, 4}, {2, 2}};
  const std::vector<Tensor> targets = supervised_heatmaps(assign, gts, shapes, spec.strides);

  Rng rng(7);
  BackboneParams backbone = init_backbone({}, rng);
  CamParams cam = init_cam({}, rng);
  std::vector<Tensor*> trainable;
  BackboneParams::visit(backbone, "", [&](const std::string&, Tensor& t) { trainable.push_back(&t); });
  CamParams::visit(cam, "", [&](const std::string&, Tensor& t) { trainable.push_back(&t); });

  AttentionPyramid last;
  std::vector<Tensor> maps;
  for (int step = 0; step < 200; ++step) {
    Tape tape;
    ParamBinding bind(tape);
    AttentionPyramid a = context_attention(extract_features(tape.constant(image), backbone, bind), cam, bind);
    Var loss = attention_loss(a, targets, {});
    tape.backward(loss);
    for (Tensor* p : trainable) p->data() -= 0.05 * bind.grad(*p).data();
    maps.clear();
    for (const Var& m : a.maps) maps.push_back(m.value());
  }
  for (size_t l = 0; l < 4; ++l) {
    const Tensor& s = targets[l];
    const double n_in = s.data().sum();
    if (n_in == 0 || n_in == s.numel()) continue;
    const double mean_in = (maps[l].data() * s.data()).sum() / n_in;
    const double mean_out = (maps[l].data() * (1.0 - s.data())).sum() / (static_cast<double>(s.numel()) - n_in);
    CAPTURE(l);
    CHECK(mean_in > mean_out);
  }
}
