// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "bbcq/error.hpp"

namespace bbcq::ops {
namespace {

[[noreturn]] void dimension_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::kDimension,
              std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " + shape_to_string(b));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dimension_error(op, a.shape(), b.shape());
}

void check_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw Error(ErrorKind::kIndex, std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                                       shape_to_string(x.shape()));
  }
}

// outer x len x inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Every c[i][j] starts at zero and is accumulated over p in increasing order
// in all paths below, so tiling does not change results.
typedef double Vec4 __attribute__((vector_size(32)));

void matmul_rows(const double* a, const double* b, double* c, std::size_t rows, std::size_t k, std::size_t n,
                 std::size_t j0) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* ci = c + r * n;
    const double* ai = a + r * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = j0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

#if defined(__x86_64__) && defined(__GNUC__) && !defined(__clang__)
__attribute__((target_clones("avx2", "default")))
#endif
// `c` must arrive zeroed.
void matmul_kernel(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* ai = a + i * k;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      Vec4 acc[4][2] = {};
      for (std::size_t p = 0; p < k; ++p) {
        Vec4 b0, b1;
        std::memcpy(&b0, b + p * n + j, sizeof b0);
        std::memcpy(&b1, b + p * n + j + 4, sizeof b1);
        for (std::size_t r = 0; r < 4; ++r) {
          const double v = ai[r * k + p];
          const Vec4 x = {v, v, v, v};
          acc[r][0] += x * b0;
          acc[r][1] += x * b1;
        }
      }
      for (std::size_t r = 0; r < 4; ++r) {
        std::memcpy(c + (i + r) * n + j, &acc[r][0], sizeof(Vec4));
        std::memcpy(c + (i + r) * n + j + 4, &acc[r][1], sizeof(Vec4));
      }
    }
    if (j < n) matmul_rows(ai, b, c + i * n, 4, k, n, j);
  }
  matmul_rows(a + i * k, b, c + i * n, m - i, k, n, 0);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) dimension_error("matmul", a.shape(), b.shape());
    Tensor c(Shape{m, n});
    matmul_kernel(a.data().data(), b.data().data(), c.data().data(), m, k, n);
    return c;
  }
  if (a.rank() == 3 && b.rank() == 3) {
    const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != g || b.dim(1) != k) dimension_error("matmul", a.shape(), b.shape());
    Tensor c(Shape{g, m, n});
    for (std::size_t i = 0; i < g; ++i) {
      matmul_kernel(a.data().data() + i * m * k, b.data().data() + i * k * n, c.data().data() + i * m * n, m, k, n);
    }
    return c;
  }
  dimension_error("matmul", a.shape(), b.shape());
}

Tensor permute(const Tensor& x, std::span<const std::size_t> perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw Error(ErrorKind::kDimension, "permute: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] >= r || seen[perm[i]]) throw Error(ErrorKind::kDimension, "permute: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = x.dim(perm[i]);
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * x.dim(i);
  std::vector<std::size_t> stride_of_out(r);
  for (std::size_t i = 0; i < r; ++i) stride_of_out[i] = in_strides[perm[i]];

  Tensor out(out_shape);
  std::vector<std::size_t> idx(r, 0);
  const auto src = x.data();
  auto dst = out.data();
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < dst.size(); ++flat) {
    dst[flat] = src[offset];
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      offset += stride_of_out[ax];
      if (idx[ax] < out_shape[ax]) break;
      offset -= stride_of_out[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw Error(ErrorKind::kDimension, "transpose: needs rank >= 2, got " + shape_to_string(x.shape()));
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

Tensor reshape(const Tensor& x, const Shape& shape) { return x.reshaped(shape); }

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorKind::kContract, "concat: no inputs");
  check_axis("concat", parts[0], axis);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != out_shape.size()) dimension_error("concat", parts[0].shape(), p.shape());
    for (std::size_t i = 0; i < p.rank(); ++i) {
      if (i != axis && p.dim(i) != parts[0].dim(i)) dimension_error("concat", parts[0].shape(), p.shape());
    }
    out_shape[axis] += p.dim(axis);
  }
  Tensor out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  auto dst = out.data();
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t chunk = p.dim(axis) * os.inner;
    const auto src = p.data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk, dst.begin() + o * os.len * os.inner + col * os.inner);
    }
    col += p.dim(axis);
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  check_axis("slice", x, axis);
  if (begin >= end || end > x.dim(axis)) {
    throw Error(ErrorKind::kIndex, "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                       ") invalid for " + shape_to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t chunk = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().begin() + (o * s.len + begin) * s.inner, chunk, out.data().begin() + o * chunk);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = a;
  auto o = out.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out = a;
  auto o = out.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = a;
  auto o = out.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= y[i];
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = x;
  for (double& v : out.data()) v *= factor;
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != n) dimension_error("add_bias", x.shape(), bias.shape());
  Tensor out = x;
  auto o = out.data();
  const auto b = bias.data();
  for (std::size_t r = 0; r < o.size(); r += n) {
    for (std::size_t j = 0; j < n; ++j) o[r + j] += b[j];
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis("softmax", x, axis);
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out(x.shape());
  const auto in = x.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t t = 0; t < s.inner; ++t) {
      const std::size_t base = o * s.len * s.inner + t;
      double mx = in[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(in[base + j * s.inner] - mx);
        dst[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) dst[base + j * s.inner] /= total;
    }
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.shape().back();
  if (gamma.size() != n || beta.size() != n) dimension_error("layernorm", x.shape(), gamma.shape());
  Tensor out(x.shape());
  const auto in = x.data();
  auto dst = out.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * n;
    // Shifted accumulation: exact mean for constant rows.
    const double shift = xr[0];
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += xr[j] - shift;
    const double mean = shift + acc / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) dst[r * n + j] = (xr[j] - mean) * inv * g[j] + b[j];
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return out;
}

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  check_axis("mean_axis", x, axis);
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  const auto in = x.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t t = 0; t < s.inner; ++t) {
      double acc = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) acc += in[(o * s.len + j) * s.inner + t];
      dst[o * s.inner + t] = acc / static_cast<double>(s.len);
    }
  }
  return out;
}

double sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return acc;
}

double min_value(const Tensor& x) { return *std::min_element(x.data().begin(), x.data().end()); }
double max_value(const Tensor& x) { return *std::max_element(x.data().begin(), x.data().end()); }

double cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(ErrorKind::kDimension, "cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                                           std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  const auto z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::int64_t y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw Error(ErrorKind::kIndex, "cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                         std::to_string(classes) + ")");
    }
    const double* row = z.data() + i * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double se = 0.0;
    for (std::size_t c = 0; c < classes; ++c) se += std::exp(row[c] - mx);
    total += std::log(se) - (row[y] - mx);
  }
  return total / static_cast<double>(batch);
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw Error(ErrorKind::kDimension, "argmax_rows: expected rank 2, got " + shape_to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (x[r * cols + c] > x[r * cols + best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

}  // namespace bbcq::ops
