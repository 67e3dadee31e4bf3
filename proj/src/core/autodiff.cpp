// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "bbcq/error.hpp"
#include "bbcq/memstats.hpp"
#include "bbcq/ops.hpp"

namespace bbcq {

Tape::Tape(bool recording) : recording_(recording) {
  if (recording_) memstats::on_create(memstats::Kind::kRecordingTape);
}

Tape::~Tape() {
  if (recording_) memstats::on_destroy(memstats::Kind::kRecordingTape);
}

Var Tape::input(Tensor value) {
  if (!recording_) return Var{std::move(value), kNoNode};
  nodes_.push_back(Node{value.shape(), {}, nullptr});
  return Var{std::move(value), nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var* const> parents, BackwardFn backward) {
  if (!recording_) return Var{std::move(value), kNoNode};
  std::vector<NodeId> ids;
  ids.reserve(parents.size());
  bool any = false;
  for (const Var* p : parents) {
    ids.push_back(p->node);
    any = any || p->tracked();
  }
  if (!any) return Var{std::move(value), kNoNode};
  nodes_.push_back(Node{value.shape(), std::move(ids), std::move(backward)});
  return Var{std::move(value), nodes_.size() - 1};
}

void Tape::backward(const Var& loss) {
  if (!loss.tracked() || loss.node >= nodes_.size()) {
    throw Error(ErrorKind::kContract, "backward: loss is not recorded on this tape");
  }
  if (loss.value.size() != 1) {
    throw Error(ErrorKind::kContract, "backward: loss must be scalar, got " + shape_to_string(loss.value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.node] = Tensor(loss.value.shape(), 1.0);

  for (NodeId id = loss.node + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (grads_[id].empty() || node.parents.empty()) continue;
    std::vector<Tensor> gp(node.parents.size());
    for (std::size_t j = 0; j < node.parents.size(); ++j) {
      if (node.parents[j] != kNoNode) gp[j] = Tensor(nodes_[node.parents[j]].shape);
    }
    node.backward(grads_[id], gp);
    for (std::size_t j = 0; j < node.parents.size(); ++j) {
      const NodeId p = node.parents[j];
      if (p == kNoNode) continue;
      if (grads_[p].empty()) {
        grads_[p] = std::move(gp[j]);
      } else {
        auto dst = grads_[p].data();
        const auto src = gp[j].data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (grads_[id].empty()) grads_[id] = Tensor(nodes_[id].shape);
  }
}

const Tensor& Tape::grad(const Var& v) const {
  if (!v.tracked() || v.node >= grads_.size()) {
    throw Error(ErrorKind::kContract, "grad: value is not a recorded node or backward() has not run");
  }
  return grads_[v.node];
}

namespace ad {
namespace {

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  const auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <std::size_t N>
Var record_op(Tape& t, Tensor value, const Var* const (&parents)[N], Tape::BackwardFn fn) {
  return t.record(std::move(value), std::span<const Var* const>(parents, N), std::move(fn));
}

}  // namespace

Var matmul(Tape& t, const Var& a, const Var& b) {
  Tensor out = ops::matmul(a.value, b.value);
  if (!t.recording()) return Var{std::move(out), kNoNode};
  const Var* parents[] = {&a, &b};
  return record_op(t, std::move(out), parents,
                   [av = a.value, bv = b.value](const Tensor& g, std::span<Tensor> gp) {
                     if (!gp[0].empty()) accumulate(gp[0], ops::matmul(g, ops::transpose(bv)));
                     if (!gp[1].empty()) accumulate(gp[1], ops::matmul(ops::transpose(av), g));
                   });
}

Var add(Tape& t, const Var& a, const Var& b) {
  const Var* parents[] = {&a, &b};
  return record_op(t, ops::add(a.value, b.value), parents, [](const Tensor& g, std::span<Tensor> gp) {
    for (Tensor& p : gp) {
      if (!p.empty()) accumulate(p, g);
    }
  });
}

Var mul(Tape& t, const Var& a, const Var& b) {
  Tensor out = ops::mul(a.value, b.value);
  if (!t.recording()) return Var{std::move(out), kNoNode};
  const Var* parents[] = {&a, &b};
  return record_op(t, std::move(out), parents,
                   [av = a.value, bv = b.value](const Tensor& g, std::span<Tensor> gp) {
                     if (!gp[0].empty()) accumulate(gp[0], ops::mul(g, bv));
                     if (!gp[1].empty()) accumulate(gp[1], ops::mul(g, av));
                   });
}

Var scale(Tape& t, const Var& x, double factor) {
  const Var* parents[] = {&x};
  return record_op(t, ops::scale(x.value, factor), parents, [factor](const Tensor& g, std::span<Tensor> gp) {
    accumulate(gp[0], ops::scale(g, factor));
  });
}

Var add_bias(Tape& t, const Var& x, const Var& bias) {
  const Var* parents[] = {&x, &bias};
  return record_op(t, ops::add_bias(x.value, bias.value), parents, [](const Tensor& g, std::span<Tensor> gp) {
    if (!gp[0].empty()) accumulate(gp[0], g);
    if (!gp[1].empty()) {
      const std::size_t n = gp[1].size();
      auto db = gp[1].data();
      const auto src = g.data();
      for (std::size_t i = 0; i < src.size(); ++i) db[i % n] += src[i];
    }
  });
}

Var permute(Tape& t, const Var& x, std::span<const std::size_t> perm) {
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] < inverse.size()) inverse[perm[i]] = i;
  }
  const Var* parents[] = {&x};
  return record_op(t, ops::permute(x.value, perm), parents,
                   [inverse = std::move(inverse)](const Tensor& g, std::span<Tensor> gp) {
                     accumulate(gp[0], ops::permute(g, inverse));
                   });
}

Var transpose(Tape& t, const Var& x) {
  const Var* parents[] = {&x};
  return record_op(t, ops::transpose(x.value), parents, [](const Tensor& g, std::span<Tensor> gp) {
    accumulate(gp[0], ops::transpose(g));
  });
}

Var reshape(Tape& t, const Var& x, const Shape& shape) {
  const Var* parents[] = {&x};
  return record_op(t, ops::reshape(x.value, shape), parents,
                   [in_shape = x.value.shape()](const Tensor& g, std::span<Tensor> gp) {
                     accumulate(gp[0], g.reshaped(in_shape));
                   });
}

Var reshape(Tape& t, Var&& x, const Shape& shape) {
  if (t.recording()) return reshape(t, static_cast<const Var&>(x), shape);
  return Tape::constant(std::move(x.value).reshaped(shape));
}

Var concat(Tape& t, std::span<const Var> parts, std::size_t axis) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value);
  Tensor out = ops::concat(values, axis);
  if (!t.recording()) return Var{std::move(out), kNoNode};
  std::vector<const Var*> parents;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    parents.push_back(&p);
    widths.push_back(p.value.dim(axis));
  }
  return t.record(std::move(out), parents, [axis, widths = std::move(widths)](const Tensor& g, std::span<Tensor> gp) {
    std::size_t begin = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (!gp[i].empty()) accumulate(gp[i], ops::slice(g, axis, begin, begin + widths[i]));
      begin += widths[i];
    }
  });
}

Var softmax(Tape& t, const Var& x, std::size_t axis) {
  Tensor out = ops::softmax(x.value, axis);
  if (!t.recording()) return Var{std::move(out), kNoNode};
  const Var* parents[] = {&x};
  return record_op(t, out, parents, [y = out, axis](const Tensor& g, std::span<Tensor> gp) {
    const Shape& shape = y.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    const std::size_t len = shape[axis];
    auto dx = gp[0].data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t k = base + j * inner;
          dx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Var layernorm(Tape& t, const Var& x, const Var& gamma, const Var& beta) {
  Tensor out = ops::layernorm(x.value, gamma.value, beta.value);
  if (!t.recording()) return Var{std::move(out), kNoNode};
  const Var* parents[] = {&x, &gamma, &beta};
  return record_op(t, std::move(out), parents,
                   [xv = x.value, gv = gamma.value](const Tensor& g, std::span<Tensor> gp) {
                     const std::size_t n = xv.shape().back();
                     const std::size_t rows = xv.size() / n;
                     const double dn = static_cast<double>(n);
                     std::vector<double> xhat(n), dxhat(n);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* xr = xv.data().data() + r * n;
                       const double* gr = g.data().data() + r * n;
                       const double shift = xr[0];
                       double acc = 0.0;
                       for (std::size_t j = 0; j < n; ++j) acc += xr[j] - shift;
                       const double mean = shift + acc / dn;
                       double var = 0.0;
                       for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
                       var /= dn;
                       const double inv = 1.0 / std::sqrt(var + ops::kLayerNormEps);
                       double sum_d = 0.0, sum_dx = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         xhat[j] = (xr[j] - mean) * inv;
                         dxhat[j] = gr[j] * gv[j];
                         sum_d += dxhat[j];
                         sum_dx += dxhat[j] * xhat[j];
                       }
                       if (!gp[0].empty()) {
                         double* dx = gp[0].data().data() + r * n;
                         for (std::size_t j = 0; j < n; ++j) {
                           dx[j] += inv * (dxhat[j] - sum_d / dn - xhat[j] * sum_dx / dn);
                         }
                       }
                       if (!gp[1].empty()) {
                         for (std::size_t j = 0; j < n; ++j) gp[1][j] += gr[j] * xhat[j];
                       }
                       if (!gp[2].empty()) {
                         for (std::size_t j = 0; j < n; ++j) gp[2][j] += gr[j];
                       }
                     }
                   });
}

Var gelu(Tape& t, const Var& x) {
  Tensor out = ops::gelu(x.value);
  if (!t.recording()) return Var{std::move(out), kNoNode};
  const Var* parents[] = {&x};
  return record_op(t, std::move(out), parents, [xv = x.value](const Tensor& g, std::span<Tensor> gp) {
    auto dx = gp[0].data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * ops::gelu_derivative(xv[i]);
  });
}

Var mean_axis(Tape& t, const Var& x, std::size_t axis) {
  const Var* parents[] = {&x};
  return record_op(t, ops::mean_axis(x.value, axis), parents,
                   [shape = x.value.shape(), axis](const Tensor& g, std::span<Tensor> gp) {
                     std::size_t outer = 1, inner = 1;
                     for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
                     for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
                     const std::size_t len = shape[axis];
                     auto dx = gp[0].data();
                     for (std::size_t o = 0; o < outer; ++o) {
                       for (std::size_t j = 0; j < len; ++j) {
                         for (std::size_t in = 0; in < inner; ++in) {
                           dx[(o * len + j) * inner + in] += g[o * inner + in] / static_cast<double>(len);
                         }
                       }
                     }
                   });
}

Var sum(Tape& t, const Var& x) {
  const Var* parents[] = {&x};
  return record_op(t, Tensor::scalar(ops::sum(x.value)), parents, [](const Tensor& g, std::span<Tensor> gp) {
    const double s = g[0];
    for (double& v : gp[0].data()) v += s;
  });
}

Var cross_entropy(Tape& t, const Var& logits, std::span<const std::int64_t> labels) {
  Tensor out = Tensor::scalar(ops::cross_entropy(logits.value, labels));
  if (!t.recording()) return Var{std::move(out), kNoNode};
  const Var* parents[] = {&logits};
  return record_op(t, std::move(out), parents,
                   [z = logits.value, y = std::vector<std::int64_t>(labels.begin(), labels.end())](
                       const Tensor& g, std::span<Tensor> gp) {
                     const Tensor p = ops::softmax(z, 1);
                     const std::size_t batch = z.dim(0), classes = z.dim(1);
                     const double s = g[0] / static_cast<double>(batch);
                     auto dz = gp[0].data();
                     for (std::size_t i = 0; i < batch; ++i) {
                       for (std::size_t c = 0; c < classes; ++c) {
                         const double target = static_cast<std::size_t>(y[i]) == c ? 1.0 : 0.0;
                         dz[i * classes + c] += s * (p[i * classes + c] - target);
                       }
                     }
                   });
}

Var straight_through(Tape& t, const Var& x, Tensor transformed) {
  if (transformed.shape() != x.value.shape()) {
    throw Error(ErrorKind::kDimension, "straight_through: shape changed from " + shape_to_string(x.value.shape()) +
                                           " to " + shape_to_string(transformed.shape()));
  }
  const Var* parents[] = {&x};
  return record_op(t, std::move(transformed), parents, [](const Tensor& g, std::span<Tensor> gp) {
    accumulate(gp[0], g);
  });
}

}  // namespace ad
}  // namespace bbcq
