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

#include "sspnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sspnet {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }

Tensor Var::grad() const {
  const auto& node = tape_->nodes_.at(id_);
  if (node.grad.empty()) return Tensor::zeros(node.value.shape());
  return node.grad;
}

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

Var Tape::check_owned(const Var& v) const {
  if (!v.valid() || v.tape_ != this) throw ArgumentError("variable does not belong to this tape");
  return v;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& v : inputs) {
    check_owned(v);
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
  check_owned(loss);
  if (loss.value().numel() != 1) {
    throw ArgumentError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  auto& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad = Tensor::ones(root.value.shape());

  std::vector<Tensor*> grad_in;
  for (size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.backward) continue;
    grad_in.clear();
    for (size_t in : node.inputs) {
      Node& src = nodes_[in];
      if (!src.requires_grad) {
        grad_in.push_back(nullptr);
        continue;
      }
      if (src.grad.empty()) src.grad = Tensor::zeros(src.value.shape());
      grad_in.push_back(&src.grad);
    }
    node.backward(node.grad, grad_in);
  }
}

void Tape::note_branch_pattern(const Tensor& decision) {
  std::uint64_t h = kink_signature_;
  for (Index i = 0; i < decision.numel(); ++i) {
    h ^= decision[i] > 0.0 ? 0x9e3779b97f4a7c15ULL : 0x632be59bd9b4e019ULL;
    h *= 0x100000001b3ULL;
    h ^= static_cast<std::uint64_t>(i);
  }
  kink_signature_ = h;
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Var& x, Index rank, const char* op) {
  if (x.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

// Column matrix [C*kh*kw, Ho*Wo] for batch item n.
Eigen::MatrixXd im2col(const Tensor& x, Index n, Index kh, Index kw, Index ho, Index wo, const Conv2dSpec& s) {
  const Index c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(c_in * kh * kw, ho * wo);
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const Index row = (c * kh + ki) * kw + kj;
        for (Index oi = 0; oi < ho; ++oi) {
          const Index ii = oi * s.stride - s.padding + ki * s.dilation;
          if (ii < 0 || ii >= h) continue;
          for (Index oj = 0; oj < wo; ++oj) {
            const Index jj = oj * s.stride - s.padding + kj * s.dilation;
            if (jj < 0 || jj >= w) continue;
            cols(row, oi * wo + oj) = x.at(n, c, ii, jj);
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Eigen::MatrixXd& cols, Tensor& dx, Index n, Index kh, Index kw, Index ho, Index wo,
                const Conv2dSpec& s) {
  const Index c_in = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  for (Index c = 0; c < c_in; ++c) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        const Index row = (c * kh + ki) * kw + kj;
        for (Index oi = 0; oi < ho; ++oi) {
          const Index ii = oi * s.stride - s.padding + ki * s.dilation;
          if (ii < 0 || ii >= h) continue;
          for (Index oj = 0; oj < wo; ++oj) {
            const Index jj = oj * s.stride - s.padding + kj * s.dilation;
            if (jj < 0 || jj >= w) continue;
            dx.at(n, c, ii, jj) += cols(row, oi * wo + oj);
          }
        }
      }
    }
  }
}

// Splits a shape around `axis` into (outer, extent, inner) for row-major traversal.
struct AxisSplit {
  Index outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, Index axis) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) {
    throw ArgumentError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Index conv_output_extent(Index in, Index kernel, const Conv2dSpec& spec) {
  const Index span = in + 2 * spec.padding - spec.dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / spec.stride + 1;
}

Var conv2d(const Var& x, const Var& w, const Var& b, const Conv2dSpec& spec) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0) {
    throw ArgumentError("conv2d: stride and dilation must be >= 1 and padding >= 0");
  }
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.dim(1) != wv.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(xv.dim(1)) + " channels, weights expect " +
                         std::to_string(wv.dim(1)));
  }
  const bool has_bias = b.valid();
  if (has_bias && b.shape() != Shape{wv.dim(0)}) {
    throw DimensionError("conv2d: bias shape " + shape_str(b.shape()) + " for " + std::to_string(wv.dim(0)) +
                         " output channels");
  }
  const Index n_batch = xv.dim(0), c_out = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const Index ho = conv_output_extent(xv.dim(2), kh, spec);
  const Index wo = conv_output_extent(xv.dim(3), kw, spec);
  if (ho < 1 || wo < 1) {
    throw DegenerateGeometryError("conv2d: input " + shape_str(xv.shape()) + " admits no output position");
  }
  const Index k = wv.dim(1) * kh * kw, p = ho * wo;

  Tensor out({n_batch, c_out, ho, wo});
  Eigen::Map<const RowMat> wm(wv.data().data(), c_out, k);
  for (Index n = 0; n < n_batch; ++n) {
    Eigen::Map<RowMat> om(out.data().data() + n * c_out * p, c_out, p);
    om.noalias() = wm * im2col(xv, n, kh, kw, ho, wo, spec);
    if (has_bias) om.colwise() += b.value().data().matrix();
  }

  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return x.tape().record(std::move(out), std::move(inputs),
                         [xv, wv, spec, has_bias, n_batch, c_out, kh, kw, ho, wo, k, p](
                             const Tensor& g, std::span<Tensor* const> gin) {
                           Eigen::Map<const RowMat> wm(wv.data().data(), c_out, k);
                           for (Index n = 0; n < n_batch; ++n) {
                             Eigen::Map<const RowMat> gm(g.data().data() + n * c_out * p, c_out, p);
                             const Eigen::MatrixXd cols = im2col(xv, n, kh, kw, ho, wo, spec);
                             if (gin[1]) {
                               Eigen::Map<RowMat> dw(gin[1]->data().data(), c_out, k);
                               dw.noalias() += gm * cols.transpose();
                             }
                             if (has_bias && gin[2]) gin[2]->data().matrix() += gm.rowwise().sum();
                             if (gin[0]) {
                               const Eigen::MatrixXd dcols = wm.transpose() * gm;
                               col2im_add(dcols, *gin[0], n, kh, kw, ho, wo, spec);
                             }
                           }
                         });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  out.data() = 1.0 / (1.0 + (-out.data()).exp());
  Tensor saved = out;
  return x.tape().record(std::move(out), {x}, [saved](const Tensor& g, std::span<Tensor* const> gin) {
    gin[0]->data() += g.data() * saved.data() * (1.0 - saved.data());
  });
}

Var relu(const Var& x) {
  x.tape().note_branch_pattern(x.value());
  Tensor out = x.value();
  out.data() = out.data().max(0.0);
  Tensor saved = x.value();
  return x.tape().record(std::move(out), {x}, [saved](const Tensor& g, std::span<Tensor* const> gin) {
    gin[0]->data() += (saved.data() > 0.0).select(g.data(), 0.0);
  });
}

Var softmax(const Var& x, Index axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor out = x.value();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index e = 0; e < s.extent; ++e) mx = std::max(mx, out[base + e * s.inner]);
      double z = 0.0;
      for (Index e = 0; e < s.extent; ++e) {
        double& v = out[base + e * s.inner];
        v = std::exp(v - mx);
        z += v;
      }
      for (Index e = 0; e < s.extent; ++e) out[base + e * s.inner] /= z;
    }
  }
  Tensor saved = out;
  return x.tape().record(std::move(out), {x}, [saved, s](const Tensor& g, std::span<Tensor* const> gin) {
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.extent * s.inner + i;
        double dotp = 0.0;
        for (Index e = 0; e < s.extent; ++e) dotp += g[base + e * s.inner] * saved[base + e * s.inner];
        for (Index e = 0; e < s.extent; ++e) {
          const Index at = base + e * s.inner;
          (*gin[0])[at] += saved[at] * (g[at] - dotp);
        }
      }
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() == b.shape()) {
    Tensor out = a.value();
    out.data() *= b.value().data();
    Tensor av = a.value(), bv = b.value();
    return a.tape().record(std::move(out), {a, b}, [av, bv](const Tensor& g, std::span<Tensor* const> gin) {
      if (gin[0]) gin[0]->data() += g.data() * bv.data();
      if (gin[1]) gin[1]->data() += g.data() * av.data();
    });
  }
  // Single-channel broadcast: identify the full operand and the gate.
  const bool a_is_gate = a.value().rank() == 4 && a.value().dim(1) == 1;
  const Var& full = a_is_gate ? b : a;
  const Var& gate = a_is_gate ? a : b;
  const Tensor& fv = full.value();
  const Tensor& gv = gate.value();
  if (fv.rank() != 4 || gv.rank() != 4 || gv.dim(1) != 1 || fv.dim(0) != gv.dim(0) || fv.dim(2) != gv.dim(2) ||
      fv.dim(3) != gv.dim(3)) {
    throw DimensionError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are neither equal nor single-channel broadcastable");
  }
  const Index n_batch = fv.dim(0), channels = fv.dim(1), plane = fv.dim(2) * fv.dim(3);
  Tensor out = fv;
  for (Index n = 0; n < n_batch; ++n) {
    const auto gate_plane = gv.data().segment(n * plane, plane);
    for (Index c = 0; c < channels; ++c) out.data().segment((n * channels + c) * plane, plane) *= gate_plane;
  }
  const size_t full_slot = a_is_gate ? 1 : 0, gate_slot = a_is_gate ? 0 : 1;
  Tensor saved_full = fv, saved_gate = gv;
  return a.tape().record(std::move(out), {a, b},
                         [=](const Tensor& g, std::span<Tensor* const> gin) {
                           for (Index n = 0; n < n_batch; ++n) {
                             const auto gate_plane = saved_gate.data().segment(n * plane, plane);
                             for (Index c = 0; c < channels; ++c) {
                               const Index off = (n * channels + c) * plane;
                               const auto gp = g.data().segment(off, plane);
                               if (gin[full_slot]) gin[full_slot]->data().segment(off, plane) += gp * gate_plane;
                               if (gin[gate_slot]) {
                                 gin[gate_slot]->data().segment(n * plane, plane) +=
                                     gp * saved_full.data().segment(off, plane);
                               }
                             }
                           }
                         });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.data() += b.value().data();
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gin) {
    for (Tensor* t : gin) {
      if (t) t->data() += g.data();
    }
  });
}

Var add_scalar(const Var& x, double c) {
  Tensor out = x.value();
  out.data() += c;
  return x.tape().record(std::move(out), {x},
                         [](const Tensor& g, std::span<Tensor* const> gin) { gin[0]->data() += g.data(); });
}

Var scale(const Var& x, double c) {
  Tensor out = x.value();
  out.data() *= c;
  return x.tape().record(std::move(out), {x},
                         [c](const Tensor& g, std::span<Tensor* const> gin) { gin[0]->data() += c * g.data(); });
}

Var concat(std::span<const Var> xs, Index axis) {
  if (xs.empty()) throw ArgumentError("concat of zero tensors");
  const Shape& ref = xs.front().shape();
  Shape out_shape = ref;
  out_shape.at(static_cast<size_t>(axis)) = 0;
  std::vector<AxisSplit> splits;
  for (const Var& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == ref.size();
    for (size_t d = 0; ok && d < s.size(); ++d) ok = static_cast<Index>(d) == axis || s[d] == ref[d];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(ref));
    splits.push_back(split_axis(s, axis));
    out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }
  const Index total_extent = out_shape[static_cast<size_t>(axis)];
  const Index outer = splits.front().outer, inner = splits.front().inner;
  Tensor out(out_shape);
  Index offset = 0;
  std::vector<Index> offsets;
  for (size_t i = 0; i < xs.size(); ++i) {
    offsets.push_back(offset);
    const Index block = splits[i].extent * inner;
    for (Index o = 0; o < outer; ++o) {
      out.data().segment(o * total_extent * inner + offset * inner, block) =
          xs[i].value().data().segment(o * block, block);
    }
    offset += splits[i].extent;
  }
  return xs.front().tape().record(
      std::move(out), std::vector<Var>(xs.begin(), xs.end()),
      [splits, offsets, outer, inner, total_extent](const Tensor& g, std::span<Tensor* const> gin) {
        for (size_t i = 0; i < gin.size(); ++i) {
          if (!gin[i]) continue;
          const Index block = splits[i].extent * inner;
          for (Index o = 0; o < outer; ++o) {
            gin[i]->data().segment(o * block, block) +=
                g.data().segment(o * total_extent * inner + offsets[i] * inner, block);
          }
        }
      });
}

Var nearest_upsample(const Var& x, Index factor) {
  if (factor < 1) throw ArgumentError("nearest_upsample: factor must be >= 1");
  require_rank(x, 4, "nearest_upsample");
  const Tensor& xv = x.value();
  const Index n_b = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n_b, ch, h * factor, w * factor});
  for (Index n = 0; n < n_b; ++n)
    for (Index c = 0; c < ch; ++c)
      for (Index i = 0; i < h * factor; ++i)
        for (Index j = 0; j < w * factor; ++j) out.at(n, c, i, j) = xv.at(n, c, i / factor, j / factor);
  return x.tape().record(std::move(out), {x}, [factor](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& dx = *gin[0];
    for (Index n = 0; n < g.dim(0); ++n)
      for (Index c = 0; c < g.dim(1); ++c)
        for (Index i = 0; i < g.dim(2); ++i)
          for (Index j = 0; j < g.dim(3); ++j) dx.at(n, c, i / factor, j / factor) += g.at(n, c, i, j);
  });
}

Var sum(const Var& x) {
  return x.tape().record(Tensor::scalar(x.value().data().sum()), {x},
                         [](const Tensor& g, std::span<Tensor* const> gin) { gin[0]->data() += g[0]; });
}

Var dot(const Var& x, const Tensor& weights) {
  if (x.shape() != weights.shape()) {
    throw DimensionError("dot: " + shape_str(x.shape()) + " vs " + shape_str(weights.shape()));
  }
  const double v = (x.value().data() * weights.data()).sum();
  return x.tape().record(Tensor::scalar(v), {x}, [weights](const Tensor& g, std::span<Tensor* const> gin) {
    gin[0]->data() += g[0] * weights.data();
  });
}

Var gather(const Var& x, std::span<const Index> indices, Shape out_shape) {
  std::vector<Index> idx(indices.begin(), indices.end());
  if (shape_numel(out_shape) != static_cast<Index>(idx.size())) {
    throw DimensionError("gather: " + std::to_string(idx.size()) + " indices for shape " + shape_str(out_shape));
  }
  Tensor out(std::move(out_shape));
  const Index n = x.value().numel();
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw ArgumentError("gather: index out of range");
    out[static_cast<Index>(i)] = x.value()[idx[i]];
  }
  return x.tape().record(std::move(out), {x}, [idx](const Tensor& g, std::span<Tensor* const> gin) {
    for (size_t i = 0; i < idx.size(); ++i) (*gin[0])[idx[i]] += g[static_cast<Index>(i)];
  });
}

Var flatten_concat(std::span<const Var> xs) {
  if (xs.empty()) throw ArgumentError("flatten_concat of zero tensors");
  std::vector<Index> sizes;
  Index total = 0;
  for (const Var& x : xs) {
    sizes.push_back(x.value().numel());
    total += sizes.back();
  }
  Tensor out({total});
  Index off = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    out.data().segment(off, sizes[i]) = xs[i].value().data();
    off += sizes[i];
  }
  return xs.front().tape().record(std::move(out), std::vector<Var>(xs.begin(), xs.end()),
                                  [sizes](const Tensor& g, std::span<Tensor* const> gin) {
                                    Index o = 0;
                                    for (size_t i = 0; i < sizes.size(); ++i) {
                                      if (gin[i]) gin[i]->data() += g.data().segment(o, sizes[i]);
                                      o += sizes[i];
                                    }
                                  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index r = a.value().dim(0), d = a.value().dim(1), o = b.value().dim(1);
  if (b.value().dim(0) != d) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({r, o});
  Eigen::Map<const RowMat> am(a.value().data().data(), r, d);
  Eigen::Map<const RowMat> bm(b.value().data().data(), d, o);
  Eigen::Map<RowMat>(out.data().data(), r, o).noalias() = am * bm;
  Tensor av = a.value(), bv = b.value();
  return a.tape().record(std::move(out), {a, b}, [av, bv, r, d, o](const Tensor& g, std::span<Tensor* const> gin) {
    Eigen::Map<const RowMat> gm(g.data().data(), r, o);
    if (gin[0]) {
      Eigen::Map<RowMat>(gin[0]->data().data(), r, d).noalias() +=
          gm * Eigen::Map<const RowMat>(bv.data().data(), d, o).transpose();
    }
    if (gin[1]) {
      Eigen::Map<RowMat>(gin[1]->data().data(), d, o).noalias() +=
          Eigen::Map<const RowMat>(av.data().data(), r, d).transpose() * gm;
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_bias");
  const Index r = x.value().dim(0), o = x.value().dim(1);
  if (bias.shape() != Shape{o}) {
    throw DimensionError("add_bias: " + shape_str(bias.shape()) + " for " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  Eigen::Map<RowMat>(out.data().data(), r, o).rowwise() += bias.value().data().matrix().transpose();
  return x.tape().record(std::move(out), {x, bias}, [r, o](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0]) gin[0]->data() += g.data();
    if (gin[1]) gin[1]->data().matrix() += Eigen::Map<const RowMat>(g.data().data(), r, o).colwise().sum().transpose();
  });
}

}  // namespace sspnet
