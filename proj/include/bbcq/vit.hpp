// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bbcq/autodiff.hpp"
#include "bbcq/quant.hpp"
#include "bbcq/tensor.hpp"

namespace bbcq {

struct ModelSpec {
  std::size_t num_blocks = 4;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  std::size_t patch_count = 8;
  std::size_t num_classes = 10;
  std::uint64_t init_seed = 0;

  std::size_t head_dim() const noexcept { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const noexcept;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Throws Error(kConfig) naming the first violated constraint.
void validate_spec(const ModelSpec& spec);

struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor w_q, w_k, w_v;  // [D x D] each
  Tensor w_o;            // [D x D]
  Tensor ln2_gamma, ln2_beta;
  Tensor w_mlp1, b_mlp1;  // [D x F], [F]
  Tensor w_mlp2, b_mlp2;  // [F x D], [D]
};

/// Immutable after construction; safe to share across concurrent forwards.
struct Model {
  ModelSpec spec;
  Tensor w_embed;  // [D x D], applied to pre-flattened patches
  std::vector<BlockParams> blocks;
  Tensor w_head;  // [D x C]
};

/// Xavier-uniform weights from a seeded generator; biases zero, layernorm identity.
Model init_model(const ModelSpec& spec);

/// Flat (name, tensor) view in file order.
std::vector<std::pair<std::string, const Tensor*>> named_parameters(const Model& model);

std::string serialize_model(const Model& model);
Model deserialize_model(std::string_view bytes);

// ---------------------------------------------------------------------------
// Matmul sites

/// Layer kinds in execution order. Block layers are numbered 1..6.
enum class SiteKind { kEmbed, kQkv, kAttnScore, kAttnApply, kOutProj, kMlp1, kMlp2, kHead };
enum class Operand { kA, kB };

inline constexpr std::size_t kLayersPerBlock = 6;
inline constexpr int kModelLevel = -1;

struct MatmulSite {
  int block = kModelLevel;  // kModelLevel for embed/head
  SiteKind kind = SiteKind::kEmbed;
  Operand operand = Operand::kA;

  friend bool operator==(const MatmulSite&, const MatmulSite&) = default;
};

std::string_view site_kind_name(SiteKind kind) noexcept;
/// 1-based layer index within a block; 0 for embed/head.
std::size_t layer_index(SiteKind kind) noexcept;
SiteKind block_layer(std::size_t layer);
bool is_block_layer(SiteKind kind) noexcept;

/// "embed.B", "block2.attn_score.A", ...
std::string site_id(const MatmulSite& site);
std::optional<MatmulSite> parse_site_id(std::string_view id);

/// Embed and head activations stay full precision.
bool is_quantizable(const MatmulSite& site) noexcept;
/// A operand of attn-apply: the post-Softmax tensor.
bool is_softmax_site(const MatmulSite& site) noexcept;
/// True for weight operands (as opposed to activations).
bool is_weight_operand(const MatmulSite& site) noexcept;

/// Every site of the model in execution order, excluded ones included.
std::vector<MatmulSite> enumerate_sites(const ModelSpec& spec);
std::vector<MatmulSite> quantizable_sites(const ModelSpec& spec);

/// Per-site fake-quant assignment used by a forward pass.
class QuantState {
 public:
  explicit QuantState(const ModelSpec& spec);

  /// nullptr when the site runs in full precision.
  const QuantParams* get(const MatmulSite& site) const;
  /// Throws Error(kContract) for unknown or excluded sites.
  void set(const MatmulSite& site, const QuantParams& params);
  void clear(const MatmulSite& site);
  std::size_t assigned_count() const noexcept;

  /// Post-Softmax scales follow the live maximum instead of the calibrated one.
  bool dynamic_softmax = false;

 private:
  std::size_t slot(const MatmulSite& site) const;

  std::size_t num_blocks_;
  std::vector<std::optional<QuantParams>> params_;
};

// ---------------------------------------------------------------------------
// Forward

struct ForwardResult {
  Tensor logits;                     // [B x C]
  std::vector<Tensor> block_outputs;  // [B x N x D] each
};

/// Input is [B x N x D]. With `quant`, assigned operands are fake-quantized
/// right before their matmul.
ForwardResult forward(const Model& model, const Tensor& input, const QuantState* quant = nullptr);

/// Runs blocks first_block.. and the head on an activation [B x N x D].
Tensor forward_tail(const Model& model, std::size_t first_block, const Tensor& activation,
                    const QuantState* quant = nullptr);

/// Intermediate values of one block, filled stage by stage.
struct BlockState {
  Var x;               // block input [B x N x D]
  Var h1;              // LN1(x)
  Var q, k, v;         // [B*H x N x d]
  Var probs;           // post-Softmax attention [B*H x N x N]
  Var ctx;             // merged heads [B*N x D]
  Var x2;              // x + attention [B x N x D]
  Var h2;              // LN2(x2)
  Var hidden;          // GeLU output [B*N x F]
  Var out;             // block output [B x N x D]
};

/// Observes each matmul as it executes: full-precision operands (before
/// fake-quant) and the product nodes.
class LayerObserver {
 public:
  virtual ~LayerObserver() = default;
  virtual void on_layer(int block, SiteKind kind, const Var& a, std::span<const Var> b_parts,
                        std::span<const Var> products) = 0;
};

/// Runs stages `first`..mlp-2 of block `block`. Stages before `first` must
/// already be present in `state` (state.x always).
void run_block(const Model& model, std::size_t block, BlockState& state, SiteKind first, const QuantState* quant,
               Tape& tape, LayerObserver* observer = nullptr);

/// Embedding of [B x N x D] patches; result is [B x N x D].
Var run_embed(const Model& model, const Var& input, const QuantState* quant, Tape& tape,
              LayerObserver* observer = nullptr);

/// Mean-pools tokens of the last block output and applies the classifier.
Var run_head(const Model& model, const Var& last_block_output, const QuantState* quant, Tape& tape,
             LayerObserver* observer = nullptr);

/// Fake-quantizes an operand per `params` (no-op when null). Post-Softmax
/// schemes rescale to the live maximum when `dynamic_softmax` is set.
Var quantize_operand(Tape& tape, const Var& v, const QuantParams* params, bool dynamic_softmax);

/// The matmul of one layer on explicit operands. For the qkv layer the three
/// weight parts are multiplied separately and concatenated on the last axis.
Tensor layer_product(SiteKind kind, const Tensor& a, std::span<const Tensor> b_parts);

}  // namespace bbcq
