// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bbcq/error.hpp"

namespace bbcq {
namespace {

void check_bits(int bits) {
  if (bits < 2 || bits > 8) {
    throw Error(ErrorKind::kParameter, "bit-width " + std::to_string(bits) + " outside [2, 8]");
  }
}

void check_softmax_max(double calibrated_max) {
  if (!(calibrated_max > kScaleEpsilon) || !std::isfinite(calibrated_max)) {
    throw Error(ErrorKind::kDegenerateScale,
                "calibrated Softmax maximum " + std::to_string(calibrated_max) + " is degenerate");
  }
}

double clamp_code(double v, std::uint32_t max_code) {
  return std::clamp(v, 0.0, static_cast<double>(max_code));
}

}  // namespace

std::string_view scheme_name(Scheme s) noexcept {
  switch (s) {
    case Scheme::kAffineUniform: return "affine-uniform";
    case Scheme::kMpq: return "mpq";
    case Scheme::kLog2: return "log2";
    case Scheme::kTwinUniform: return "twin-uniform";
  }
  return "affine-uniform";
}

std::optional<Scheme> parse_scheme(std::string_view name) noexcept {
  for (Scheme s : {Scheme::kAffineUniform, Scheme::kMpq, Scheme::kLog2, Scheme::kTwinUniform}) {
    if (scheme_name(s) == name) return s;
  }
  return std::nullopt;
}

QuantParams make_uniform(int bits, double scale, std::int64_t zero_point) {
  check_bits(bits);
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorKind::kParameter, "uniform scale must be finite and > 0, got " + std::to_string(scale));
  }
  QuantParams p;
  p.bits = bits;
  p.scale = scale;
  p.scheme = Scheme::kAffineUniform;
  if (zero_point < 0 || zero_point > static_cast<std::int64_t>(p.max_code())) {
    throw Error(ErrorKind::kParameter, "zero point " + std::to_string(zero_point) + " outside code range");
  }
  p.zero_point = zero_point;
  return p;
}

QuantParams make_mpq(int bits, double calibrated_max) {
  check_bits(bits);
  check_softmax_max(calibrated_max);
  QuantParams p;
  p.bits = bits;
  p.scheme = Scheme::kMpq;
  p.range_max = calibrated_max;
  p.scale = calibrated_max / static_cast<double>(p.max_code());
  return p;
}

QuantParams make_log2(int bits, double calibrated_max) {
  check_bits(bits);
  check_softmax_max(calibrated_max);
  QuantParams p;
  p.bits = bits;
  p.scheme = Scheme::kLog2;
  p.range_max = calibrated_max;
  p.scale = calibrated_max;
  return p;
}

QuantParams make_twin_uniform(int bits, double calibrated_max, double threshold) {
  check_bits(bits);
  check_softmax_max(calibrated_max);
  const double half_levels = static_cast<double>((1u << (bits - 1)) - 1u);
  if (threshold <= 0.0) threshold = calibrated_max / static_cast<double>(1u << (bits - 1));
  if (!(threshold > 0.0 && threshold < calibrated_max)) {
    throw Error(ErrorKind::kParameter, "twin-uniform threshold " + std::to_string(threshold) + " not in (0, " +
                                           std::to_string(calibrated_max) + ")");
  }
  QuantParams p;
  p.bits = bits;
  p.scheme = Scheme::kTwinUniform;
  p.range_max = calibrated_max;
  p.threshold = threshold;
  p.scale = threshold / half_levels;
  return p;
}

QuantParams rescale_softmax(const QuantParams& p, double calibrated_max) {
  switch (p.scheme) {
    case Scheme::kMpq: return make_mpq(p.bits, calibrated_max);
    case Scheme::kLog2: return make_log2(p.bits, calibrated_max);
    case Scheme::kTwinUniform: {
      // Keep the threshold at the same fraction of the range.
      const double ratio = p.threshold / p.range_max;
      return make_twin_uniform(p.bits, calibrated_max, ratio * calibrated_max);
    }
    case Scheme::kAffineUniform: break;
  }
  return p;
}

double round_half_away(double x) noexcept { return std::round(x); }

std::uint32_t quantize_value(double x, const QuantParams& p) noexcept {
  const std::uint32_t qmax = p.max_code();
  switch (p.scheme) {
    case Scheme::kAffineUniform: {
      const double v = round_half_away(x / p.scale) + static_cast<double>(p.zero_point);
      return static_cast<std::uint32_t>(clamp_code(v, qmax));
    }
    case Scheme::kMpq: {
      // s / Δ with Δ = max / (2^k - 1); written so that s == max gives 2^k - 1 exactly.
      const double v = round_half_away(x / p.range_max * static_cast<double>(qmax));
      return static_cast<std::uint32_t>(clamp_code(v, qmax));
    }
    case Scheme::kLog2: {
      if (!(x > 0.0)) return qmax;
      const double v = round_half_away(-std::log2(x / p.range_max));
      return static_cast<std::uint32_t>(clamp_code(v, qmax));
    }
    case Scheme::kTwinUniform: {
      const std::uint32_t half = 1u << (p.bits - 1);
      const double levels = static_cast<double>(half - 1u);
      if (x < p.threshold) {
        const auto c = static_cast<std::uint32_t>(clamp_code(round_half_away(x / p.threshold * levels), half - 1u));
        // Codes half-1 and half both reconstruct T; emit the segment-2 one so
        // requantizing a reconstruction returns the same code.
        return c == half - 1u ? half : c;
      }
      const double v = round_half_away((x - p.threshold) / (p.range_max - p.threshold) * levels);
      return half + static_cast<std::uint32_t>(clamp_code(v, half - 1u));
    }
  }
  return 0;
}

double dequantize_code(std::uint32_t code, const QuantParams& p) noexcept {
  const std::uint32_t qmax = p.max_code();
  switch (p.scheme) {
    case Scheme::kAffineUniform:
      return static_cast<double>(static_cast<std::int64_t>(code) - p.zero_point) * p.scale;
    case Scheme::kMpq:
      return p.range_max * (static_cast<double>(code) / static_cast<double>(qmax));
    case Scheme::kLog2:
      return std::ldexp(p.range_max, -static_cast<int>(code));
    case Scheme::kTwinUniform: {
      const std::uint32_t half = 1u << (p.bits - 1);
      const double levels = static_cast<double>(half - 1u);
      if (code < half) return p.threshold * (static_cast<double>(code) / levels);
      const std::uint32_t j = code - half;
      if (j == half - 1u) return p.range_max;
      return p.threshold + (p.range_max - p.threshold) * (static_cast<double>(j) / levels);
    }
  }
  return 0.0;
}

CodeTensor quantize(const Tensor& x, const QuantParams& p) {
  CodeTensor out{x.shape(), std::vector<std::uint32_t>(x.size()), p};
  const auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) out.codes[i] = quantize_value(in[i], p);
  return out;
}

Tensor dequantize(const CodeTensor& codes) {
  Tensor out(codes.shape);
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dequantize_code(codes.codes[i], codes.params);
  return out;
}

namespace {

// Same result as std::round for every finite double; inlines where std::round
// would be a library call.
inline double round_half_away_inline(double y) {
  const double t = std::trunc(y);
  return std::fabs(y - t) >= 0.5 ? t + std::copysign(1.0, y) : t;
}

#if defined(__x86_64__) && defined(__GNUC__) && !defined(__clang__)
__attribute__((target_clones("avx2", "default")))
#endif
void fake_quant_affine(double* v, std::size_t n, double scale, double zero_point, double qmax) {
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::min(std::max(round_half_away_inline(v[i] / scale) + zero_point, 0.0), qmax);
    v[i] = (c - zero_point) * scale;
  }
}

}  // namespace

Tensor fake_quant(const Tensor& x, const QuantParams& p) {
  Tensor out = x;
  auto d = out.data();
  if (p.scheme == Scheme::kAffineUniform) {
    fake_quant_affine(d.data(), d.size(), p.scale, static_cast<double>(p.zero_point),
                      static_cast<double>(p.max_code()));
    return out;
  }
  for (double& v : d) v = dequantize_code(quantize_value(v, p), p);
  return out;
}

CodeTensor uniform_quant(const Tensor& x, double scale, std::int64_t zero_point, int bits) {
  return quantize(x, make_uniform(bits, scale, zero_point));
}
Tensor uniform_dequant(const CodeTensor& codes) { return dequantize(codes); }

CodeTensor mpq_quant(const Tensor& s, int bits, double calibrated_max) {
  return quantize(s, make_mpq(bits, calibrated_max));
}
Tensor mpq_dequant(const CodeTensor& codes) { return dequantize(codes); }

CodeTensor log_quant(const Tensor& s, int bits, double calibrated_max) {
  return quantize(s, make_log2(bits, calibrated_max));
}
Tensor log_dequant(const CodeTensor& codes) { return dequantize(codes); }

CodeTensor twin_uniform_quant(const Tensor& s, int bits, double calibrated_max, double threshold) {
  if (!(threshold > 0.0)) {
    throw Error(ErrorKind::kParameter, "twin-uniform threshold must be > 0, got " + std::to_string(threshold));
  }
  return quantize(s, make_twin_uniform(bits, calibrated_max, threshold));
}
Tensor twin_uniform_dequant(const CodeTensor& codes) { return dequantize(codes); }

double calibrate_softmax_max(std::span<const Tensor> batches) {
  bool any = false;
  double mx = 0.0;
  for (const Tensor& b : batches) {
    for (double v : b.data()) {
      mx = any ? std::max(mx, v) : v;
      any = true;
    }
  }
  if (!any) throw Error(ErrorKind::kContract, "calibrate_softmax_max: empty calibration batch");
  return mx;
}

}  // namespace bbcq
