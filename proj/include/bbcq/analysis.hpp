// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bbcq/calib.hpp"
#include "bbcq/io.hpp"
#include "bbcq/quant.hpp"
#include "bbcq/tensor.hpp"
#include "bbcq/vit.hpp"

namespace bbcq {

/// Shannon entropy (bits) of the code histogram. Throws kContract when empty.
double code_entropy(const CodeTensor& codes);

struct QuantReportRow {
  std::string site;
  std::string quantizer;  // uniform, log, twin-uniform, mpq
  int bits = 0;
  double calibrated_max = 0.0;
  double entropy = 0.0;
  double mean_abs_error = 0.0;
  double max_abs_error = 0.0;
  /// |dequant - x| at the largest input element.
  double max_value_error = 0.0;
  /// Fraction of rows whose input argmax stays the unique largest dequantized value.
  double argmax_preservation = 0.0;
  bool top_value_exact = false;
};

/// Softmax over the last axis, then the four post-Softmax quantizers.
/// Uniform, log and twin-uniform use the fixed range [0, 1] (twin split at
/// 2^-(bits-1)); MPQ uses the observed maximum.
std::vector<QuantReportRow> compare_softmax_quantizers(const Tensor& scores, int bits,
                                                       std::string_view site = "synthetic");

enum class SyntheticKind { kPowerLaw, kGaussian, kOneHot };
std::string_view synthetic_kind_name(SyntheticKind k) noexcept;
std::optional<SyntheticKind> parse_synthetic_kind(std::string_view name) noexcept;

/// Seeded pre-Softmax scores [rows x len].
Tensor synthetic_scores(SyntheticKind kind, std::size_t rows, std::size_t len, std::uint64_t seed);

/// Pre-Softmax attention scores of every block on `inputs`, [B*H x N x N] each.
std::vector<Tensor> attention_scores(const Model& model, const Tensor& inputs);

struct EvalMetrics {
  double accuracy = 0.0;
  double agreement = 0.0;
  double mean_loss = 0.0;
  std::size_t samples = 0;
};

/// `quant` null evaluates the full-precision model.
EvalMetrics evaluate(const Model& model, const QuantState* quant, const Dataset& data);

struct ErrorStats {
  std::size_t block = 0;
  std::vector<double> bin_edges;  // bins + 1 edges over [0, max |sigma|]
  std::vector<double> weights;    // sum of sigma^2 * h per bin, batch-averaged
  std::vector<std::size_t> counts;
  std::vector<double> percentiles;  // |sigma| at kErrorPercentiles
  double gamma = 0.0;
  double threshold = 0.0;  // bottom_threshold(sigma, gamma)
  double metric = 0.0;     // bbc_metric of the masked sigma
};

inline constexpr std::array<double, 6> kErrorPercentiles = {10.0, 25.0, 50.0, 75.0, 90.0, 100.0};

/// Nearest-rank percentile of |values|.
double nearest_rank_percentile(std::span<const double> values, double p);

ErrorStats error_stats(const Tensor& sigma, const Tensor& h_diag, double gamma, std::size_t bins = 20);

/// error_stats of every block with all sites at `state`, blocks fed their
/// cached full-precision inputs.
std::vector<ErrorStats> model_error_stats(const Model& model, const FpCache& cache, const QuantState& state,
                                          double gamma, std::size_t bins = 20);

}  // namespace bbcq
