// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "bbcq/tensor.hpp"

namespace bbcq {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

/// A forward value, optionally tied to a tape node. Vars without a node are
/// constants: gradients do not flow into them.
struct Var {
  Tensor value;
  NodeId node = kNoNode;

  bool tracked() const noexcept { return node != kNoNode; }
};

/// Records operations for reverse-mode differentiation.
///
/// A non-recording tape evaluates the same kernels but keeps nothing, so a
/// forward pass through it is bitwise identical to a recorded one. Tapes are
/// single-writer; recording and backward() must not overlap.
class Tape {
 public:
  /// Accumulates parent gradients given the node's output gradient.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor> grad_parents)>;

  explicit Tape(bool recording = true);
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  /// A differentiable input.
  Var input(Tensor value);
  /// A value gradients do not flow into.
  static Var constant(Tensor value) { return Var{std::move(value), kNoNode}; }

  /// Registers `value` as the result of an op over `parents`. Untracked
  /// parents are ignored; if none are tracked the result is a constant.
  Var record(Tensor value, std::span<const Var* const> parents, BackwardFn backward);

  /// Reverse sweep from a one-element loss. Afterwards grad() is available
  /// for every node.
  void backward(const Var& loss);

  /// Gradient of the last backward() loss w.r.t. `v`. Zero-filled when the
  /// node did not influence the loss.
  const Tensor& grad(const Var& v) const;

 private:
  struct Node {
    Shape shape;
    std::vector<NodeId> parents;
    BackwardFn backward;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Differentiable ops. Each evaluates with the matching bbcq::ops kernel.
namespace ad {

Var matmul(Tape& t, const Var& a, const Var& b);
Var add(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);
Var scale(Tape& t, const Var& x, double factor);
Var add_bias(Tape& t, const Var& x, const Var& bias);
Var permute(Tape& t, const Var& x, std::span<const std::size_t> perm);
Var transpose(Tape& t, const Var& x);
Var reshape(Tape& t, const Var& x, const Shape& shape);
/// Reuses the storage of `x` on a non-recording tape.
Var reshape(Tape& t, Var&& x, const Shape& shape);
Var concat(Tape& t, std::span<const Var> parts, std::size_t axis);
Var softmax(Tape& t, const Var& x, std::size_t axis);
Var layernorm(Tape& t, const Var& x, const Var& gamma, const Var& beta);
Var gelu(Tape& t, const Var& x);
Var mean_axis(Tape& t, const Var& x, std::size_t axis);
Var sum(Tape& t, const Var& x);
Var cross_entropy(Tape& t, const Var& logits, std::span<const std::int64_t> labels);

/// Replaces the forward value with `transformed` (same shape) and passes the
/// gradient straight through. Used for fake quantization.
Var straight_through(Tape& t, const Var& x, Tensor transformed);

}  // namespace ad
}  // namespace bbcq
