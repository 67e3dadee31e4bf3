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

#include "bbcq/io.hpp"
#include "bbcq/memstats.hpp"
#include "bbcq/quant.hpp"
#include "bbcq/tensor.hpp"
#include "bbcq/vit.hpp"

namespace bbcq {

enum class Profile { kClassification, kDetection };
enum class SoftmaxQuantizer { kUniform, kLog, kTwin, kMpq };

std::string_view profile_name(Profile p) noexcept;
std::optional<Profile> parse_profile(std::string_view name) noexcept;
std::string_view softmax_quantizer_name(SoftmaxQuantizer q) noexcept;
std::optional<SoftmaxQuantizer> parse_softmax_quantizer(std::string_view name) noexcept;

struct CalibConfig {
  Profile profile = Profile::kClassification;
  double alpha = 0.0;
  double beta = 1.2;
  std::size_t candidates = 100;
  std::size_t rounds = 3;
  double gamma = 10.0;
  int w_bits = 8;
  int a_bits = 8;
  SoftmaxQuantizer softmax_quant = SoftmaxQuantizer::kMpq;
  bool dynamic_softmax = false;
  /// Absolute twin-uniform split; 0 selects calibrated_max / 2^(bits-1).
  double twin_threshold = 0.0;
  /// Leading samples of the calibration file to use; 0 uses all of them.
  std::size_t batch_size = 32;
  /// Layerwise baseline: each layer's own output replaces the block output.
  bool blocks_as_layers = false;

  static CalibConfig for_profile(Profile p);
  friend bool operator==(const CalibConfig&, const CalibConfig&) = default;
};

/// Throws Error(kConfig) naming the offending field.
void validate_config(const CalibConfig& cfg);

// ---------------------------------------------------------------------------
// Search primitives

struct ScaleCandidate {
  double scale;
  std::int64_t zero_point;
};

/// n evenly spaced scales over [alpha, beta] * (x_max - x_min) / 2^bits,
/// followed by the min-max scale (x_max - x_min) / (2^bits - 1).
std::vector<ScaleCandidate> candidate_scales(double x_min, double x_max, int bits, double alpha, double beta,
                                             std::size_t n);

/// (x_max - x_min) / 2^bits with its zero point.
QuantParams initial_params(double x_min, double x_max, int bits);

/// |sigma| values strictly below the returned threshold are eliminated.
/// 0 when nothing is eliminated, +inf when everything is.
double bottom_threshold(std::span<const double> sigma, double gamma);
Tensor bottom_mask(const Tensor& sigma, double gamma);

/// Sum of masked^2 * h_diag divided by the leading (batch) dimension for
/// rank >= 2 tensors.
double bbc_metric(const Tensor& masked, const Tensor& h_diag);

// ---------------------------------------------------------------------------
// Full-precision caches

struct BlockCache {
  std::size_t block = 0;
  Tensor input;   // a^b
  Tensor output;  // O^b
  Tensor grad;    // dL/dO^b
  Tensor hess;    // grad squared
  memstats::Tracked<memstats::Kind::kBlockCache> tracker;
};

struct FpCache {
  Tensor inputs;  // calibration patches before the embedding
  std::vector<BlockCache> blocks;
  Tensor logits;
  Tensor logit_hess;
  std::vector<double> softmax_max;  // per block, over the calibration batch
  double loss = 0.0;
};

enum class LossKind { kCrossEntropy, kSumLogits };

/// One recorded forward and backward pass; only block-level tensors survive.
FpCache cache_fp_pass(const Model& model, const Tensor& inputs, std::span<const std::int64_t> labels,
                      LossKind loss = LossKind::kCrossEntropy);

/// Per-layer operands, product and product Hessian (layerwise baseline).
struct LayerCache {
  int block = kModelLevel;
  SiteKind kind = SiteKind::kEmbed;
  Tensor a;
  std::vector<Tensor> b_parts;
  Tensor product;
  Tensor hess;
  memstats::Tracked<memstats::Kind::kLayerCache> tracker;
};

std::vector<LayerCache> cache_layer_pass(const Model& model, const Tensor& inputs,
                                         std::span<const std::int64_t> labels, double* loss = nullptr);

struct OperandRange {
  double min = 0.0;
  double max = 0.0;
};

/// Full-precision ranges of both operands of every layer in `block`,
/// indexed [layer - 1][operand]. Weight parts of the qkv layer share one range.
std::vector<std::array<OperandRange, 2>> block_operand_ranges(const Model& model, const BlockCache& cache);

/// Candidate quantizers of one operand: n + 1 affine-uniform parameter sets.
std::vector<QuantParams> site_candidates(const MatmulSite& site, OperandRange range, const CalibConfig& cfg);

/// Blockwise metric of `state` for the block holding `site` (embed is
/// measured at block 0's output, head at the logits).
double site_metric(const Model& model, const MatmulSite& site, const QuantState& state, const FpCache& cache,
                   double gamma);

struct SearchOutcome {
  std::vector<double> trace;
  std::size_t chosen = 0;
};

/// Evaluates every candidate with all other sites held at `state` and returns
/// the lowest-index argmin.
SearchOutcome search_site(const Model& model, const MatmulSite& site, std::span<const QuantParams> candidates,
                          const QuantState& state, const FpCache& cache, double gamma);

// ---------------------------------------------------------------------------
// Results

struct SiteResult {
  MatmulSite site;
  QuantParams params;
  std::vector<std::vector<double>> trace;  // per round
  std::size_t chosen_index = 0;
  bool searched = true;

  double chosen_metric() const { return trace.back().at(chosen_index); }
};

struct CalibResult {
  ModelSpec spec;
  CalibConfig config;
  double fp_loss = 0.0;
  std::vector<SiteResult> sites;  // execution order

  const SiteResult* find(const MatmulSite& site) const;
};

/// Throws kContract when the result names a site `spec` does not have.
QuantState make_quant_state(const CalibResult& result, const ModelSpec& spec);

CalibResult calibrate(const Model& model, const Dataset& data, const CalibConfig& cfg);

/// Leading cfg.batch_size samples of `data`.
Dataset calibration_batch(const Dataset& data, const CalibConfig& cfg);

/// Sum over blocks of the blockwise metric with every site at `state`, each
/// block fed its cached full-precision input.
double total_block_metric(const Model& model, const FpCache& cache, const QuantState& state, double gamma);

std::string calib_result_to_json(const CalibResult& result);
/// Throws kManifest for malformed documents.
CalibResult calib_result_from_json(std::string_view text);

/// Worker count for candidate evaluation, capped by BBCQ_THREADS.
std::size_t worker_count();

}  // namespace bbcq
