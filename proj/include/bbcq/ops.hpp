// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "bbcq/tensor.hpp"

// Stateless tensor kernels. All reductions accumulate left to right in index
// order so results are bit-reproducible for a given build.
namespace bbcq::ops {

inline constexpr double kLayerNormEps = 1e-6;

/// [m x k] x [k x n] -> [m x n], or batched [g x m x k] x [g x k x n] -> [g x m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Reorders axes: out.shape[i] = x.shape[perm[i]].
Tensor permute(const Tensor& x, std::span<const std::size_t> perm);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Slice [begin, end) of `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Adds a vector along the last axis.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis, then applies gamma/beta.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps);
/// Exact erf formulation.
Tensor gelu(const Tensor& x);
double gelu_derivative(double x);

Tensor mean_axis(const Tensor& x, std::size_t axis);
double sum(const Tensor& x);
double min_value(const Tensor& x);
double max_value(const Tensor& x);

/// Mean over the batch of -log softmax(logits)[label]; logits are [B x C].
double cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels);

/// Index of the first maximum in each row of a [B x C] tensor.
std::vector<std::size_t> argmax_rows(const Tensor& x);

}  // namespace bbcq::ops
