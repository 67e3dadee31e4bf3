// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "bbcq/autodiff.hpp"
#include "bbcq/ops.hpp"
#include "bbcq/random.hpp"
#include "bbcq/tensor.hpp"
#include "bbcq/vit.hpp"

namespace testutil {

inline bbcq::Tensor random_tensor(bbcq::Rng& rng, bbcq::Shape shape, double lo = -1.0, double hi = 1.0) {
  bbcq::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline bbcq::ModelSpec tiny_spec(std::uint64_t seed, std::size_t blocks = 2) {
  bbcq::ModelSpec spec;
  spec.num_blocks = blocks;
  spec.embed_dim = 8;
  spec.num_heads = 2;
  spec.mlp_ratio = 2.0;
  spec.patch_count = 4;
  spec.num_classes = 3;
  spec.init_seed = seed;
  return spec;
}

/// |g - fd| / max(|g|, |fd|, floor): relative error, read as absolute error
/// scaled by `floor` for entries too small to carry a relative digit.
inline double rel_error(double g, double fd, double floor) {
  return std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), floor});
}

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdFloor = 1e-6;

/// Largest relative error between the tape gradient of `loss(x)` and central
/// differences over every element of x.
inline double max_fd_error(const std::function<bbcq::Var(bbcq::Tape&, const bbcq::Var&)>& loss, bbcq::Tensor x) {
  bbcq::Tape tape(true);
  const bbcq::Var xin = tape.input(x);
  tape.backward(loss(tape, xin));
  const bbcq::Tensor g = tape.grad(xin);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    auto eval = [&](double v) {
      x[i] = v;
      bbcq::Tape t(false);
      return loss(t, bbcq::Tape::constant(x)).value.item();
    };
    const double fd = (eval(saved + kFdStep) - eval(saved - kFdStep)) / (2.0 * kFdStep);
    x[i] = saved;
    worst = std::max(worst, rel_error(g[i], fd, kFdFloor));
  }
  return worst;
}

}  // namespace testutil
