// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bbcq/tensor.hpp"

namespace bbcq {

/// Floor applied to any computed scale.
inline constexpr double kScaleEpsilon = 1e-12;

enum class Scheme {
  kAffineUniform,  // general operands, asymmetric with zero point
  kMpq,            // post-Softmax, uniform up to the calibrated maximum
  kLog2,           // post-Softmax, power-of-two grid below the maximum
  kTwinUniform,    // post-Softmax, two uniform segments split at a threshold
};

std::string_view scheme_name(Scheme s) noexcept;
std::optional<Scheme> parse_scheme(std::string_view name) noexcept;

/// One quantizer's parameters. `scale` is the step Δ (Δ₁ for twin-uniform).
/// `range_max` and `threshold` are only meaningful for post-Softmax schemes.
struct QuantParams {
  int bits = 8;
  double scale = 1.0;
  std::int64_t zero_point = 0;
  Scheme scheme = Scheme::kAffineUniform;
  double range_max = 0.0;
  double threshold = 0.0;

  std::uint32_t max_code() const noexcept { return (1u << bits) - 1u; }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Validating constructors; throw Error(kParameter / kDegenerateScale).
QuantParams make_uniform(int bits, double scale, std::int64_t zero_point);
QuantParams make_mpq(int bits, double calibrated_max);
QuantParams make_log2(int bits, double calibrated_max);
/// threshold <= 0 selects the default calibrated_max / 2^(bits-1).
QuantParams make_twin_uniform(int bits, double calibrated_max, double threshold = 0.0);
/// Same scheme and bits, re-derived for a new maximum (dynamic Softmax scales).
QuantParams rescale_softmax(const QuantParams& p, double calibrated_max);

/// Integer codes plus the parameters that produced them.
struct CodeTensor {
  Shape shape;
  std::vector<std::uint32_t> codes;
  QuantParams params;
};

/// Round half away from zero.
double round_half_away(double x) noexcept;

std::uint32_t quantize_value(double x, const QuantParams& p) noexcept;
double dequantize_code(std::uint32_t code, const QuantParams& p) noexcept;

CodeTensor quantize(const Tensor& x, const QuantParams& p);
Tensor dequantize(const CodeTensor& codes);
/// quantize followed by dequantize, without materializing codes.
Tensor fake_quant(const Tensor& x, const QuantParams& p);

CodeTensor uniform_quant(const Tensor& x, double scale, std::int64_t zero_point, int bits);
Tensor uniform_dequant(const CodeTensor& codes);
CodeTensor mpq_quant(const Tensor& s, int bits, double calibrated_max);
Tensor mpq_dequant(const CodeTensor& codes);
CodeTensor log_quant(const Tensor& s, int bits, double calibrated_max);
Tensor log_dequant(const CodeTensor& codes);
CodeTensor twin_uniform_quant(const Tensor& s, int bits, double calibrated_max, double threshold);
Tensor twin_uniform_dequant(const CodeTensor& codes);

/// Largest Softmax value observed over a calibration set.
double calibrate_softmax_max(std::span<const Tensor> batches);

}  // namespace bbcq
