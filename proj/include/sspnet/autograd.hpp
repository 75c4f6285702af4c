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
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "sspnet/tensor.hpp"

namespace sspnet {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  /// Gradient after Tape::backward; zeros when the node received none.
  Tensor grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  size_t id_ = 0;
};

/// Accumulates into grad_in[i] (nullptr when input i needs no gradient).
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

/// Append-only record of primitive applications. Node ids are a topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Registers an op output. The backward rule is dropped when no input requires grad.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss; previous gradients are cleared first.
  void backward(const Var& loss);

  size_t size() const { return nodes_.size(); }

  /// Hash of every piecewise branch decision seen so far (relu activity, OHEM selection,
  /// smooth-L1 regime). Two evaluations of the same graph share a signature iff no op
  /// switched branches between them.
  std::uint64_t kink_signature() const { return kink_signature_; }
  /// Records the sign pattern of `decision` (> 0 is one branch, otherwise the other).
  void note_branch_pattern(const Tensor& decision);

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<size_t> inputs;
    BackwardFn backward;
  };

  Var check_owned(const Var& v) const;

  std::deque<Node> nodes_;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
};

struct Conv2dSpec {
  Index stride = 1;
  Index dilation = 1;
  Index padding = 0;
};

Index conv_output_extent(Index in, Index kernel, const Conv2dSpec& spec);

/// x [N,C,H,W], w [O,C,kh,kw], optional b [O]. Zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, const Conv2dSpec& spec);

Var sigmoid(const Var& x);
Var relu(const Var& x);
Var softmax(const Var& x, Index axis);

/// Elementwise product. Equal shapes, or rank-4 operands where one side has a single
/// channel that is broadcast over the other's channels.
Var mul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_scalar(const Var& x, double c);
Var scale(const Var& x, double c);
inline Var one_plus(const Var& x) { return add_scalar(x, 1.0); }

Var concat(std::span<const Var> xs, Index axis);
Var nearest_upsample(const Var& x, Index factor);

Var sum(const Var& x);
/// Sum of x ⊙ weights with constant weights.
Var dot(const Var& x, const Tensor& weights);

/// out.flat[i] = x.flat[indices[i]], reshaped to out_shape.
Var gather(const Var& x, std::span<const Index> indices, Shape out_shape);
/// Flattens every input and concatenates them into one rank-1 tensor.
Var flatten_concat(std::span<const Var> xs);

/// a [R,D] · b [D,O].
Var matmul(const Var& a, const Var& b);
/// x [R,O] + bias [O] broadcast over rows.
Var add_bias(const Var& x, const Var& bias);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace sspnet
