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

#include "sspnet/gradient_suite.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>

#include "sspnet/losses.hpp"
#include "sspnet/neck.hpp"

namespace sspnet {

double GradSuiteReport::worst() const {
  double w = 0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

std::string GradSuiteReport::to_table(bool timing) const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %12s %8s %7s %9s", "check", "max_rel_err", "coords", "seeds", "resampled");
  os << line << (timing ? "  seconds\n" : "\n");
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-26s %12.3e %8lld %7d %9lld", e.name.c_str(), e.max_rel_error,
                  static_cast<long long>(e.coordinates), e.seeds, static_cast<long long>(e.resamples));
    os << line;
    if (timing) {
      std::snprintf(line, sizeof line, " %8.2f", e.seconds);
      os << line;
    }
    os << "\n";
  }
  std::snprintf(line, sizeof line, "worst %.3e", worst());
  os << line;
  if (timing) {
    std::snprintf(line, sizeof line, " in %.1f s", seconds);
    os << line;
  }
  os << "\n";
  return os.str();
}

namespace {

struct Probe {
  ScalarGraph graph;
  Tensor point;
  std::vector<Index> coordinates;  // empty: all
};

using ProbeFactory = std::function<Probe(Rng&)>;

Tensor normal(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor binary(Shape shape, Rng& rng, double p) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform() < p ? 1.0 : 0.0;
  return t;
}

// Packs several tensors into one probe point; `Slices` re-splits the leaf on the tape.
class Packed {
 public:
  void add(Tensor t) { parts_.push_back(std::move(t)); }

  Tensor point() const {
    std::vector<Tensor*> ptrs;
    for (auto& p : parts_) ptrs.push_back(const_cast<Tensor*>(&p));
    return ParamPack(ptrs).pack();
  }

  std::vector<Var> slices(const Var& flat) const {
    std::vector<Var> out;
    Index off = 0;
    for (const Tensor& p : parts_) {
      std::vector<Index> idx(static_cast<size_t>(p.numel()));
      std::iota(idx.begin(), idx.end(), off);
      out.push_back(gather(flat, idx, p.shape()));
      off += p.numel();
    }
    return out;
  }

 private:
  std::vector<Tensor> parts_;
};

// Σ_i dot(outputs_i, fixed random weights); keeps gradients O(1) in every coordinate.
struct Readout {
  std::vector<Tensor> weights;

  Var operator()(Tape& tape, std::span<const Var> outputs) const {
    Var total = tape.constant(Tensor::scalar(0.0));
    for (size_t i = 0; i < outputs.size(); ++i) total = add(total, dot(outputs[i], weights[i]));
    return total;
  }

  static Readout for_shapes(const std::vector<Shape>& shapes, Rng& rng) {
    Readout r;
    for (const Shape& s : shapes) r.weights.push_back(normal(s, rng));
    return r;
  }
};

template <class Fn>
Probe unary_probe(Shape shape, Shape out, Rng& rng, Fn fn, double lo = -2.0, double hi = 2.0) {
  auto r = std::make_shared<Readout>(Readout::for_shapes({out}, rng));
  return {[r, fn](Tape& t, const Var& x) {
            Var y = fn(x);
            return (*r)(t, std::vector<Var>{y});
          },
          uniform(shape, rng, lo, hi),
          {}};
}

template <class Fn>
Probe binary_probe(Shape sa, Shape sb, Shape sout, Rng& rng, Fn fn) {
  auto pack = std::make_shared<Packed>();
  pack->add(normal(sa, rng));
  pack->add(normal(sb, rng));
  auto r = std::make_shared<Readout>(Readout::for_shapes({sout}, rng));
  return {[pack, r, fn](Tape& t, const Var& x) {
            auto s = pack->slices(x);
            return (*r)(t, std::vector<Var>{fn(s[0], s[1])});
          },
          pack->point(),
          {}};
}

struct NetFixture {
  SspnetParams params;
  std::vector<Tensor*> tensors;
};

std::shared_ptr<NetFixture> make_net(Rng& rng, Index channels, Index pyramid_levels_channels) {
  auto net = std::make_shared<NetFixture>();
  BackboneConfig bc;
  bc.channels = channels;
  net->params.backbone = init_backbone(bc, rng);
  CamConfig cc;
  cc.channels = channels;
  cc.context_channels = pyramid_levels_channels;
  net->params.cam = init_cam(cc, rng);
  net->params.neck = init_neck(channels, rng);
  // Non-zero biases so every term of the gradient is exercised.
  SspnetParams::visit(net->params, "", [&](const std::string& name, Tensor& t) {
    if (name.ends_with(".bias")) t = normal(t.shape(), rng, 0.1);
    net->tensors.push_back(&t);
  });
  return net;
}

std::vector<std::pair<std::string, ProbeFactory>> checks(const GradSuiteOptions& options) {
  std::vector<std::pair<std::string, ProbeFactory>> c;

  c.emplace_back("conv2d", [](Rng& rng) {
    const Index stride = 1 + static_cast<Index>(rng.below(2)), dilation = 1 + static_cast<Index>(rng.below(2));
    const Index padding = static_cast<Index>(rng.below(2)), k = rng.below(2) ? 3 : 1;
    auto pack = std::make_shared<Packed>();
    pack->add(normal({1, 2, 7, 7}, rng));
    pack->add(normal({3, 2, k, k}, rng, 0.5));
    pack->add(normal({3}, rng));
    const Conv2dSpec spec{stride, dilation, padding};
    const Index ho = conv_output_extent(7, k, spec);
    auto r = std::make_shared<Readout>(Readout::for_shapes({{1, 3, ho, ho}}, rng));
    return Probe{[pack, r, spec](Tape& t, const Var& x) {
                   auto s = pack->slices(x);
                   return (*r)(t, std::vector<Var>{conv2d(s[0], s[1], s[2], spec)});
                 },
                 pack->point(),
                 {}};
  });
  c.emplace_back("sigmoid", [](Rng& rng) { return unary_probe({2, 5}, {2, 5}, rng, [](const Var& x) { return sigmoid(x); }, -4, 4); });
  c.emplace_back("relu", [](Rng& rng) { return unary_probe({2, 5}, {2, 5}, rng, [](const Var& x) { return relu(x); }); });
  c.emplace_back("softmax", [](Rng& rng) {
    const Index axis = static_cast<Index>(rng.below(2));
    return unary_probe({3, 4}, {3, 4}, rng, [axis](const Var& x) { return softmax(x, axis); });
  });
  c.emplace_back("mul", [](Rng& rng) {
    return binary_probe({2, 3}, {2, 3}, {2, 3}, rng, [](const Var& a, const Var& b) { return mul(a, b); });
  });
  c.emplace_back("mul_broadcast", [](Rng& rng) {
    return binary_probe({1, 3, 4, 4}, {1, 1, 4, 4}, {1, 3, 4, 4}, rng,
                        [](const Var& a, const Var& b) { return mul(a, b); });
  });
  c.emplace_back("add", [](Rng& rng) {
    return binary_probe({2, 3}, {2, 3}, {2, 3}, rng, [](const Var& a, const Var& b) { return add(a, b); });
  });
  c.emplace_back("one_plus", [](Rng& rng) { return unary_probe({4}, {4}, rng, [](const Var& x) { return one_plus(x); }); });
  c.emplace_back("scale", [](Rng& rng) { return unary_probe({4}, {4}, rng, [](const Var& x) { return scale(x, -1.7); }); });
  c.emplace_back("concat", [](Rng& rng) {
    return binary_probe({1, 2, 3, 3}, {1, 1, 3, 3}, {1, 3, 3, 3}, rng, [](const Var& a, const Var& b) {
      return concat(std::vector<Var>{a, b}, 1);
    });
  });
  c.emplace_back("nearest_upsample", [](Rng& rng) {
    const Index f = 2 + static_cast<Index>(rng.below(2));
    return unary_probe({1, 2, 3, 3}, {1, 2, 3 * f, 3 * f}, rng, [f](const Var& x) { return nearest_upsample(x, f); });
  });
  c.emplace_back("sum", [](Rng& rng) { return unary_probe({3, 3}, {1}, rng, [](const Var& x) { return sum(x); }); });
  c.emplace_back("gather", [](Rng& rng) {
    std::vector<Index> idx;
    for (int i = 0; i < 8; ++i) idx.push_back(static_cast<Index>(rng.below(12)));
    return unary_probe({3, 4}, {2, 4}, rng, [idx](const Var& x) { return gather(x, idx, {2, 4}); });
  });
  c.emplace_back("flatten_concat", [](Rng& rng) {
    return binary_probe({2, 2}, {3}, {7}, rng, [](const Var& a, const Var& b) {
      return flatten_concat(std::vector<Var>{a, b});
    });
  });
  c.emplace_back("matmul", [](Rng& rng) {
    return binary_probe({3, 4}, {4, 2}, {3, 2}, rng, [](const Var& a, const Var& b) { return matmul(a, b); });
  });
  c.emplace_back("add_bias", [](Rng& rng) {
    return binary_probe({3, 4}, {4}, {3, 4}, rng, [](const Var& a, const Var& b) { return add_bias(a, b); });
  });

  c.emplace_back("dice_loss", [](Rng& rng) {
    Tensor s = binary({1, 1, 4, 4}, rng, 0.3);
    return Probe{[s](Tape&, const Var& a) { return dice_loss(a, s); }, uniform({1, 1, 4, 4}, rng, 0.05, 0.95), {}};
  });
  c.emplace_back("bce_ohem_loss", [](Rng& rng) {
    Tensor s = binary({1, 1, 6, 6}, rng, rng.uniform() < 0.2 ? 0.0 : 0.08);
    return Probe{[s](Tape&, const Var& a) { return bce_ohem_loss(a, s); }, uniform({1, 1, 6, 6}, rng, 0.05, 0.95), {}};
  });
  c.emplace_back("smooth_l1", [](Rng& rng) {
    Tensor target = normal({3, 4}, rng);
    return Probe{[target](Tape&, const Var& p) { return smooth_l1(p, target); }, normal({3, 4}, rng, 1.5), {}};
  });
  c.emplace_back("bce_with_logits", [](Rng& rng) {
    Tensor y = binary({6}, rng, 0.5);
    return Probe{[y](Tape&, const Var& z) { return bce_with_logits(z, y); }, normal({6}, rng, 2.0), {}};
  });
  c.emplace_back("softmax_cross_entropy", [](Rng& rng) {
    std::vector<int> labels;
    for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(rng.below(2)));
    return Probe{[labels](Tape&, const Var& z) { return softmax_cross_entropy(z, labels); }, normal({5, 2}, rng, 2.0), {}};
  });
  c.emplace_back("attention_loss", [](Rng& rng) {
    auto pack = std::make_shared<Packed>();
    std::vector<Tensor> targets;
    for (Index side : {8, 4, 2, 1}) {
      pack->add(uniform({1, 1, side, side}, rng, 0.05, 0.95));
      targets.push_back(binary({1, 1, side, side}, rng, 0.2));
    }
    LossWeights w;
    w.alpha = rng.uniform(0.01, 1.0);
    return Probe{[pack, targets, w](Tape&, const Var& x) {
                   AttentionPyramid a;
                   a.maps = pack->slices(x);
                   return attention_loss(a, targets, w);
                 },
                 pack->point(),
                 {}};
  });
  c.emplace_back("detection_losses", [](Rng& rng) {
    auto pack = std::make_shared<Packed>();
    pack->add(normal({6}, rng));
    pack->add(normal({2, 4}, rng));
    pack->add(normal({5, 2}, rng));
    pack->add(normal({3, 4}, rng));
    Tensor rpn_labels = binary({6}, rng, 0.5), rpn_t = normal({2, 4}, rng), head_t = normal({3, 4}, rng);
    std::vector<int> head_labels;
    for (int i = 0; i < 5; ++i) head_labels.push_back(static_cast<int>(rng.below(2)));
    return Probe{[=](Tape&, const Var& x) {
                   auto s = pack->slices(x);
                   auto [l_rpn, l_head] =
                       detection_losses({s[0], rpn_labels, s[1], rpn_t}, {s[2], head_labels, s[3], head_t}, {});
                   return joint_loss(l_rpn, l_head, scale(l_rpn, 0.0));
                 },
                 pack->point(),
                 {}};
  });

  c.emplace_back("sem", [](Rng& rng) {
    return binary_probe({1, 3, 4, 4}, {1, 1, 4, 4}, {1, 3, 4, 4}, rng, [](const Var& f, const Var& a) { return sem(f, a); });
  });
  c.emplace_back("ssm_merge", [](Rng& rng) {
    auto pack = std::make_shared<Packed>();
    pack->add(normal({1, 3, 2, 2}, rng));
    pack->add(uniform({1, 1, 2, 2}, rng, 0.05, 0.95));
    pack->add(uniform({1, 1, 4, 4}, rng, 0.05, 0.95));
    pack->add(normal({1, 3, 4, 4}, rng));
    auto r = std::make_shared<Readout>(Readout::for_shapes({{1, 3, 4, 4}}, rng));
    return Probe{[pack, r](Tape& t, const Var& x) {
                   auto s = pack->slices(x);
                   return (*r)(t, std::vector<Var>{ssm_merge(s[0], s[1], s[2], s[3])});
                 },
                 pack->point(),
                 {}};
  });

  // CAM over a 1x4x8x8 bottom level, first w.r.t. the pyramid then w.r.t. its parameters.
  auto pyramid_pack = [](Rng& rng) {
    auto pack = std::make_shared<Packed>();
    for (Index side : {8, 4, 2, 1}) pack->add(normal({1, 4, side, side}, rng, 0.5));
    return pack;
  };
  auto as_pyramid = [](std::vector<Var> levels) {
    FeaturePyramid p;
    p.levels = std::move(levels);
    p.strides = {4, 8, 16, 32};
    return p;
  };
  const std::vector<Shape> attention_shapes{{1, 1, 8, 8}, {1, 1, 4, 4}, {1, 1, 2, 2}, {1, 1, 1, 1}};
  const std::vector<Shape> feature_shapes{{1, 4, 8, 8}, {1, 4, 4, 4}, {1, 4, 2, 2}, {1, 4, 1, 1}};

  c.emplace_back("cam.inputs", [=](Rng& rng) {
    auto net = make_net(rng, 4, 16);
    auto pack = pyramid_pack(rng);
    auto r = std::make_shared<Readout>(Readout::for_shapes(attention_shapes, rng));
    return Probe{[=](Tape& t, const Var& x) {
                   ParamBinding bind(t, false);
                   return (*r)(t, context_attention(as_pyramid(pack->slices(x)), net->params.cam, bind).maps);
                 },
                 pack->point(),
                 {}};
  });
  c.emplace_back("cam.params", [=](Rng& rng) {
    auto net = make_net(rng, 4, 16);
    std::vector<Tensor> pyramid;
    for (const Shape& s : feature_shapes) pyramid.push_back(normal(s, rng));
    std::vector<Tensor*> cam_tensors;
    CamParams::visit(net->params.cam, "", [&](const std::string&, Tensor& t) { cam_tensors.push_back(&t); });
    auto r = std::make_shared<Readout>(Readout::for_shapes(attention_shapes, rng));
    ParamPack pp(cam_tensors);
    // A random residue class of coordinates per seed; over 100 seeds every parameter is hit.
    std::vector<Index> coords;
    const Index phase = static_cast<Index>(rng.below(10));
    for (Index i = phase; i < pp.size(); i += 10) coords.push_back(i);
    return Probe{[=](Tape& t, const Var& x) {
                   ParamBinding bind(t, false);
                   Index off = 0;
                   for (Tensor* p : cam_tensors) {
                     std::vector<Index> idx(static_cast<size_t>(p->numel()));
                     std::iota(idx.begin(), idx.end(), off);
                     bind.bind(*p, gather(x, idx, p->shape()));
                     off += p->numel();
                   }
                   std::vector<Var> levels;
                   for (const Tensor& l : pyramid) levels.push_back(t.constant(l));
                   return (*r)(t, context_attention(as_pyramid(levels), net->params.cam, bind).maps);
                 },
                 pp.pack(),
                 coords};
  });
  c.emplace_back("cam_sem_ssm.stack", [=](Rng& rng) {
    auto net = make_net(rng, 4, 16);
    auto pack = pyramid_pack(rng);
    std::vector<Shape> shapes = feature_shapes;
    shapes.insert(shapes.end(), attention_shapes.begin(), attention_shapes.end());
    auto r = std::make_shared<Readout>(Readout::for_shapes(shapes, rng));
    return Probe{[=](Tape& t, const Var& x) {
                   ParamBinding bind(t, false);
                   FeaturePyramid c = as_pyramid(pack->slices(x));
                   AttentionPyramid a = context_attention(c, net->params.cam, bind);
                   NeckOutput out = sspnet_neck(c, a, net->params.neck, bind);
                   std::vector<Var> outs = out.outputs.levels;
                   outs.insert(outs.end(), a.maps.begin(), a.maps.end());
                   return (*r)(t, outs);
                 },
                 pack->point(),
                 {}};
  });

  const Index network_coords = options.network_coordinates;
  c.emplace_back("network", [=](Rng& rng) {
    auto net = make_net(rng, 4, 16);
    const Tensor image = uniform({1, 1, 32, 32}, rng, 0.0, 1.0);
    std::vector<Shape> shapes{{1, 4, 8, 8}, {1, 4, 4, 4}, {1, 4, 2, 2}, {1, 4, 1, 1}};
    auto r = std::make_shared<Readout>(Readout::for_shapes(shapes, rng));
    std::vector<Tensor> targets;
    for (const Shape& s : attention_shapes) targets.push_back(binary(s, rng, 0.25));
    std::vector<Tensor*> all = net->tensors;
    auto image_holder = std::make_shared<Tensor>(image);
    all.insert(all.begin(), image_holder.get());
    ParamPack pp(all);
    // Probe a seeded subset: always some image pixels, the rest spread over parameters.
    std::vector<Index> coords;
    for (Index i = 0; i < network_coords; ++i) {
      coords.push_back(i < network_coords / 4 ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(image.numel())))
                                              : static_cast<Index>(rng.below(static_cast<std::uint64_t>(pp.size()))));
    }
    return Probe{[=](Tape& t, const Var& x) {
                   ParamBinding bind(t, false);
                   Index off = 0;
                   Var img;
                   for (Tensor* p : all) {
                     std::vector<Index> idx(static_cast<size_t>(p->numel()));
                     std::iota(idx.begin(), idx.end(), off);
                     Var slice = gather(x, idx, p->shape());
                     if (p == image_holder.get()) img = slice;
                     else bind.bind(*p, slice);
                     off += p->numel();
                   }
                   NeckOutput out = sspnet_forward(img, net->params, bind);
                   return add((*r)(t, out.outputs.levels), attention_loss(*out.attention, targets, {}));
                 },
                 pp.pack(),
                 coords};
  });
  return c;
}

}  // namespace

GradSuiteReport run_gradient_suite(const GradSuiteOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteReport report;
  for (const auto& [name, make] : checks(options)) {
    if (!name.starts_with(options.only)) continue;
    const auto check_start = std::chrono::steady_clock::now();
    GradSuiteEntry entry{name, 0.0, 0, 0, options.seeds};
    for (int seed = 0; seed < options.seeds; ++seed) {
      Rng rng = Rng::for_stage(options.base_seed + static_cast<std::uint64_t>(seed), name);
      GradCheckResult result;
      for (int attempt = 0; attempt < 20; ++attempt) {
        Probe p = make(rng);
        result = finite_diff_check(p.graph, p.point, options.eps, p.coordinates);
        if (result.kink_crossings == 0) break;
        ++entry.resamples;
      }
      entry.max_rel_error = std::max(entry.max_rel_error, result.max_rel_error);
      entry.coordinates += result.coordinates_checked;
    }
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - check_start).count();
    report.entries.push_back(entry);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace sspnet
