// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/vit.hpp"

#include <array>
#include <cmath>
#include <string>

#include "bbcq/error.hpp"
#include "bbcq/ops.hpp"
#include "bbcq/random.hpp"

namespace bbcq {

std::size_t ModelSpec::mlp_hidden() const noexcept {
  return static_cast<std::size_t>(std::llround(static_cast<double>(embed_dim) * mlp_ratio));
}

void validate_spec(const ModelSpec& spec) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, "invalid model spec: " + msg); };
  if (spec.num_blocks < 1) fail("num_blocks must be >= 1");
  if (spec.embed_dim < 1) fail("embed_dim must be >= 1");
  if (spec.num_heads < 1) fail("num_heads must be >= 1");
  if (spec.embed_dim % spec.num_heads != 0) {
    fail("embed_dim " + std::to_string(spec.embed_dim) + " is not divisible by num_heads " +
         std::to_string(spec.num_heads));
  }
  if (!(spec.mlp_ratio > 0.0) || !std::isfinite(spec.mlp_ratio)) fail("mlp_ratio must be positive");
  const double hidden = static_cast<double>(spec.embed_dim) * spec.mlp_ratio;
  if (std::abs(hidden - std::round(hidden)) > 1e-9 || hidden < 1.0) {
    fail("embed_dim * mlp_ratio must be a positive integer");
  }
  if (spec.patch_count < 1) fail("patch_count must be >= 1");
  if (spec.num_classes < 2) fail("num_classes must be >= 2");
}

namespace {

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(Shape{fan_in, fan_out});
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

}  // namespace

Model init_model(const ModelSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.init_seed);
  const std::size_t d = spec.embed_dim, f = spec.mlp_hidden();
  Model m;
  m.spec = spec;
  m.w_embed = xavier(rng, d, d);
  m.blocks.reserve(spec.num_blocks);
  for (std::size_t b = 0; b < spec.num_blocks; ++b) {
    BlockParams p;
    p.ln1_gamma = Tensor(Shape{d}, 1.0);
    p.ln1_beta = Tensor(Shape{d}, 0.0);
    p.w_q = xavier(rng, d, d);
    p.w_k = xavier(rng, d, d);
    p.w_v = xavier(rng, d, d);
    p.w_o = xavier(rng, d, d);
    p.ln2_gamma = Tensor(Shape{d}, 1.0);
    p.ln2_beta = Tensor(Shape{d}, 0.0);
    p.w_mlp1 = xavier(rng, d, f);
    p.b_mlp1 = Tensor(Shape{f}, 0.0);
    p.w_mlp2 = xavier(rng, f, d);
    p.b_mlp2 = Tensor(Shape{d}, 0.0);
    m.blocks.push_back(std::move(p));
  }
  m.w_head = xavier(rng, d, spec.num_classes);
  return m;
}

std::vector<std::pair<std::string, const Tensor*>> named_parameters(const Model& model) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.emplace_back("embed.weight", &model.w_embed);
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const BlockParams& p = model.blocks[b];
    const std::string pre = "blocks." + std::to_string(b) + ".";
    out.emplace_back(pre + "ln1.gamma", &p.ln1_gamma);
    out.emplace_back(pre + "ln1.beta", &p.ln1_beta);
    out.emplace_back(pre + "attn.w_q", &p.w_q);
    out.emplace_back(pre + "attn.w_k", &p.w_k);
    out.emplace_back(pre + "attn.w_v", &p.w_v);
    out.emplace_back(pre + "attn.w_o", &p.w_o);
    out.emplace_back(pre + "ln2.gamma", &p.ln2_gamma);
    out.emplace_back(pre + "ln2.beta", &p.ln2_beta);
    out.emplace_back(pre + "mlp.w1", &p.w_mlp1);
    out.emplace_back(pre + "mlp.b1", &p.b_mlp1);
    out.emplace_back(pre + "mlp.w2", &p.w_mlp2);
    out.emplace_back(pre + "mlp.b2", &p.b_mlp2);
  }
  out.emplace_back("head.weight", &model.w_head);
  return out;
}

// ---------------------------------------------------------------------------
// Sites

std::string_view site_kind_name(SiteKind kind) noexcept {
  switch (kind) {
    case SiteKind::kEmbed: return "embed";
    case SiteKind::kQkv: return "qkv";
    case SiteKind::kAttnScore: return "attn_score";
    case SiteKind::kAttnApply: return "attn_apply";
    case SiteKind::kOutProj: return "out_proj";
    case SiteKind::kMlp1: return "mlp1";
    case SiteKind::kMlp2: return "mlp2";
    case SiteKind::kHead: return "head";
  }
  return "embed";
}

std::size_t layer_index(SiteKind kind) noexcept {
  switch (kind) {
    case SiteKind::kQkv: return 1;
    case SiteKind::kAttnScore: return 2;
    case SiteKind::kAttnApply: return 3;
    case SiteKind::kOutProj: return 4;
    case SiteKind::kMlp1: return 5;
    case SiteKind::kMlp2: return 6;
    default: return 0;
  }
}

SiteKind block_layer(std::size_t layer) {
  static constexpr std::array<SiteKind, kLayersPerBlock> kOrder = {
      SiteKind::kQkv, SiteKind::kAttnScore, SiteKind::kAttnApply, SiteKind::kOutProj, SiteKind::kMlp1, SiteKind::kMlp2};
  if (layer < 1 || layer > kLayersPerBlock) {
    throw Error(ErrorKind::kIndex, "block layer index " + std::to_string(layer) + " outside [1, 6]");
  }
  return kOrder[layer - 1];
}

bool is_block_layer(SiteKind kind) noexcept { return layer_index(kind) != 0; }

std::string site_id(const MatmulSite& site) {
  std::string id;
  if (is_block_layer(site.kind)) id = "block" + std::to_string(site.block) + ".";
  id += site_kind_name(site.kind);
  id += site.operand == Operand::kA ? ".A" : ".B";
  return id;
}

std::optional<MatmulSite> parse_site_id(std::string_view id) {
  MatmulSite site;
  if (id.size() < 3 || id[id.size() - 2] != '.') return std::nullopt;
  const char op = id.back();
  if (op != 'A' && op != 'B') return std::nullopt;
  site.operand = op == 'A' ? Operand::kA : Operand::kB;
  id.remove_suffix(2);
  if (id.starts_with("block")) {
    const auto dot = id.find('.');
    if (dot == std::string_view::npos || dot == 5) return std::nullopt;
    int block = 0;
    for (char c : id.substr(5, dot - 5)) {
      if (c < '0' || c > '9') return std::nullopt;
      block = block * 10 + (c - '0');
      if (block > 1'000'000) return std::nullopt;
    }
    site.block = block;
    id.remove_prefix(dot + 1);
  }
  for (SiteKind k : {SiteKind::kEmbed, SiteKind::kQkv, SiteKind::kAttnScore, SiteKind::kAttnApply, SiteKind::kOutProj,
                     SiteKind::kMlp1, SiteKind::kMlp2, SiteKind::kHead}) {
    if (site_kind_name(k) == id) {
      if (is_block_layer(k) != (site.block != kModelLevel)) return std::nullopt;
      site.kind = k;
      return site;
    }
  }
  return std::nullopt;
}

bool is_quantizable(const MatmulSite& site) noexcept {
  if (site.kind == SiteKind::kEmbed || site.kind == SiteKind::kHead) return site.operand == Operand::kB;
  return true;
}

bool is_softmax_site(const MatmulSite& site) noexcept {
  return site.kind == SiteKind::kAttnApply && site.operand == Operand::kA;
}

bool is_weight_operand(const MatmulSite& site) noexcept {
  if (site.operand == Operand::kA) return false;
  return site.kind != SiteKind::kAttnScore && site.kind != SiteKind::kAttnApply;
}

std::vector<MatmulSite> enumerate_sites(const ModelSpec& spec) {
  std::vector<MatmulSite> out;
  out.push_back({kModelLevel, SiteKind::kEmbed, Operand::kA});
  out.push_back({kModelLevel, SiteKind::kEmbed, Operand::kB});
  for (std::size_t b = 0; b < spec.num_blocks; ++b) {
    for (std::size_t l = 1; l <= kLayersPerBlock; ++l) {
      out.push_back({static_cast<int>(b), block_layer(l), Operand::kA});
      out.push_back({static_cast<int>(b), block_layer(l), Operand::kB});
    }
  }
  out.push_back({kModelLevel, SiteKind::kHead, Operand::kA});
  out.push_back({kModelLevel, SiteKind::kHead, Operand::kB});
  return out;
}

std::vector<MatmulSite> quantizable_sites(const ModelSpec& spec) {
  std::vector<MatmulSite> out;
  for (const MatmulSite& s : enumerate_sites(spec)) {
    if (is_quantizable(s)) out.push_back(s);
  }
  return out;
}

QuantState::QuantState(const ModelSpec& spec)
    : num_blocks_(spec.num_blocks), params_(4 + spec.num_blocks * kLayersPerBlock * 2) {}

std::size_t QuantState::slot(const MatmulSite& site) const {
  const std::size_t op = site.operand == Operand::kA ? 0 : 1;
  if (site.kind == SiteKind::kEmbed) {
    if (site.block != kModelLevel) throw Error(ErrorKind::kContract, "embed site carries a block index");
    return op;
  }
  if (site.kind == SiteKind::kHead) {
    if (site.block != kModelLevel) throw Error(ErrorKind::kContract, "head site carries a block index");
    return 2 + num_blocks_ * kLayersPerBlock * 2 + op;
  }
  if (site.block < 0 || static_cast<std::size_t>(site.block) >= num_blocks_) {
    throw Error(ErrorKind::kContract, "unknown matmul site " + site_id(site) + " for a " +
                                          std::to_string(num_blocks_) + "-block model");
  }
  return 2 + (static_cast<std::size_t>(site.block) * kLayersPerBlock + layer_index(site.kind) - 1) * 2 + op;
}

const QuantParams* QuantState::get(const MatmulSite& site) const {
  const auto& p = params_[slot(site)];
  return p ? &*p : nullptr;
}

void QuantState::set(const MatmulSite& site, const QuantParams& params) {
  const std::size_t i = slot(site);
  if (!is_quantizable(site)) {
    throw Error(ErrorKind::kContract, "site " + site_id(site) + " is excluded from quantization");
  }
  params_[i] = params;
}

void QuantState::clear(const MatmulSite& site) { params_[slot(site)].reset(); }

std::size_t QuantState::assigned_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.has_value();
  return n;
}

// ---------------------------------------------------------------------------
// Forward

Var quantize_operand(Tape& tape, const Var& v, const QuantParams* params, bool dynamic_softmax) {
  if (params == nullptr) return v;
  if (dynamic_softmax && params->scheme != Scheme::kAffineUniform) {
    const QuantParams live = rescale_softmax(*params, ops::max_value(v.value));
    return ad::straight_through(tape, v, fake_quant(v.value, live));
  }
  return ad::straight_through(tape, v, fake_quant(v.value, *params));
}

Tensor layer_product(SiteKind kind, const Tensor& a, std::span<const Tensor> b_parts) {
  if (b_parts.empty()) throw Error(ErrorKind::kContract, "layer_product: no B operand");
  if (kind == SiteKind::kQkv) {
    std::vector<Tensor> outs;
    outs.reserve(b_parts.size());
    for (const Tensor& b : b_parts) outs.push_back(ops::matmul(a, b));
    return ops::concat(outs, a.rank() - 1);
  }
  return ops::matmul(a, b_parts[0]);
}

namespace {

struct Dims {
  std::size_t batch, tokens, dim, heads, head_dim;
};

Dims dims_of(const Model& model, const Tensor& x) {
  if (x.rank() != 3 || x.dim(1) != model.spec.patch_count || x.dim(2) != model.spec.embed_dim) {
    throw Error(ErrorKind::kDimension, "activation " + shape_to_string(x.shape()) + " does not match model [B x " +
                                           std::to_string(model.spec.patch_count) + " x " +
                                           std::to_string(model.spec.embed_dim) + "]");
  }
  return {x.dim(0), x.dim(1), x.dim(2), model.spec.num_heads, model.spec.head_dim()};
}

Var split_heads(Tape& t, Var x2d, const Dims& d) {
  static constexpr std::array<std::size_t, 4> kPerm = {0, 2, 1, 3};
  const Var r = ad::reshape(t, std::move(x2d), {d.batch, d.tokens, d.heads, d.head_dim});
  return ad::reshape(t, ad::permute(t, r, kPerm), {d.batch * d.heads, d.tokens, d.head_dim});
}

Var merge_heads(Tape& t, Var x, const Dims& d) {
  static constexpr std::array<std::size_t, 4> kPerm = {0, 2, 1, 3};
  const Var r = ad::reshape(t, std::move(x), {d.batch, d.heads, d.tokens, d.head_dim});
  return ad::reshape(t, ad::permute(t, r, kPerm), {d.batch * d.tokens, d.dim});
}

Var weight(const Tensor& w, const QuantParams* p) { return Tape::constant(p ? fake_quant(w, *p) : w); }

// a @ w with w optionally fake-quantized; skips copying w into a constant on
// a non-recording tape.
Var matmul_weight(Tape& t, const Var& a, const Tensor& w, const QuantParams* p) {
  if (t.recording()) return ad::matmul(t, a, weight(w, p));
  return Tape::constant(p ? ops::matmul(a.value, fake_quant(w, *p)) : ops::matmul(a.value, w));
}

// The quantized operand in `storage`, or `v` itself when it stays full precision.
const Var& operand(Tape& t, const Var& v, const QuantParams* p, bool dyn, Var& storage) {
  if (p == nullptr) return v;
  storage = quantize_operand(t, v, p, dyn);
  return storage;
}

}  // namespace

void run_block(const Model& model, std::size_t block, BlockState& st, SiteKind first, const QuantState* quant,
               Tape& t, LayerObserver* obs) {
  if (block >= model.blocks.size()) {
    throw Error(ErrorKind::kIndex, "block " + std::to_string(block) + " out of range");
  }
  const BlockParams& p = model.blocks[block];
  const Dims d = dims_of(model, st.x.value);
  const int bi = static_cast<int>(block);
  const bool dyn = quant != nullptr && quant->dynamic_softmax;
  auto qp = [&](SiteKind kind, Operand op) -> const QuantParams* {
    return quant ? quant->get(MatmulSite{bi, kind, op}) : nullptr;
  };
  const std::size_t start = layer_index(first);
  if (start == 0) throw Error(ErrorKind::kContract, "run_block: first stage must be a block layer");

  Var qa, qb;
  if (start <= 1) {
    st.h1 = ad::layernorm(t, st.x, Tape::constant(p.ln1_gamma), Tape::constant(p.ln1_beta));
    const Var a = ad::reshape(t, st.h1, {d.batch * d.tokens, d.dim});
    const Var& a_hat = operand(t, a, qp(SiteKind::kQkv, Operand::kA), dyn, qa);
    const QuantParams* wp = qp(SiteKind::kQkv, Operand::kB);
    std::array<Var, 3> prod = {matmul_weight(t, a_hat, p.w_q, wp), matmul_weight(t, a_hat, p.w_k, wp),
                               matmul_weight(t, a_hat, p.w_v, wp)};
    if (obs) {
      const std::array<Var, 3> w_fp = {Tape::constant(p.w_q), Tape::constant(p.w_k), Tape::constant(p.w_v)};
      obs->on_layer(bi, SiteKind::kQkv, a, w_fp, prod);
    }
    st.q = split_heads(t, std::move(prod[0]), d);
    st.k = split_heads(t, std::move(prod[1]), d);
    st.v = split_heads(t, std::move(prod[2]), d);
  }
  if (start <= 2) {
    const Var kt = ad::transpose(t, st.k);
    const Var& a_hat = operand(t, st.q, qp(SiteKind::kAttnScore, Operand::kA), dyn, qa);
    const Var& b_hat = operand(t, kt, qp(SiteKind::kAttnScore, Operand::kB), dyn, qb);
    const Var scores = ad::matmul(t, a_hat, b_hat);
    if (obs) obs->on_layer(bi, SiteKind::kAttnScore, st.q, std::span<const Var>(&kt, 1), std::span<const Var>(&scores, 1));
    const Var scaled = ad::scale(t, scores, 1.0 / std::sqrt(static_cast<double>(d.head_dim)));
    st.probs = ad::softmax(t, scaled, 2);
  }
  if (start <= 3) {
    const Var& a_hat = operand(t, st.probs, qp(SiteKind::kAttnApply, Operand::kA), dyn, qa);
    const Var& b_hat = operand(t, st.v, qp(SiteKind::kAttnApply, Operand::kB), dyn, qb);
    Var heads = ad::matmul(t, a_hat, b_hat);
    if (obs) {
      obs->on_layer(bi, SiteKind::kAttnApply, st.probs, std::span<const Var>(&st.v, 1),
                    std::span<const Var>(&heads, 1));
    }
    st.ctx = merge_heads(t, std::move(heads), d);
  }
  if (start <= 4) {
    const Var& a_hat = operand(t, st.ctx, qp(SiteKind::kOutProj, Operand::kA), dyn, qa);
    Var proj = matmul_weight(t, a_hat, p.w_o, qp(SiteKind::kOutProj, Operand::kB));
    if (obs) {
      const Var w_fp = Tape::constant(p.w_o);
      obs->on_layer(bi, SiteKind::kOutProj, st.ctx, std::span<const Var>(&w_fp, 1), std::span<const Var>(&proj, 1));
    }
    st.x2 = ad::add(t, st.x, ad::reshape(t, std::move(proj), {d.batch, d.tokens, d.dim}));
    st.h2 = ad::layernorm(t, st.x2, Tape::constant(p.ln2_gamma), Tape::constant(p.ln2_beta));
  }
  if (start <= 5) {
    const Var a = ad::reshape(t, st.h2, {d.batch * d.tokens, d.dim});
    const Var& a_hat = operand(t, a, qp(SiteKind::kMlp1, Operand::kA), dyn, qa);
    Var prod = matmul_weight(t, a_hat, p.w_mlp1, qp(SiteKind::kMlp1, Operand::kB));
    if (obs) {
      const Var w_fp = Tape::constant(p.w_mlp1);
      obs->on_layer(bi, SiteKind::kMlp1, a, std::span<const Var>(&w_fp, 1), std::span<const Var>(&prod, 1));
    }
    st.hidden = ad::gelu(t, ad::add_bias(t, prod, Tape::constant(p.b_mlp1)));
  }
  {
    const Var& a_hat = operand(t, st.hidden, qp(SiteKind::kMlp2, Operand::kA), dyn, qa);
    Var prod = matmul_weight(t, a_hat, p.w_mlp2, qp(SiteKind::kMlp2, Operand::kB));
    if (obs) {
      const Var w_fp = Tape::constant(p.w_mlp2);
      obs->on_layer(bi, SiteKind::kMlp2, st.hidden, std::span<const Var>(&w_fp, 1), std::span<const Var>(&prod, 1));
    }
    Var y = ad::add_bias(t, prod, Tape::constant(p.b_mlp2));
    st.out = ad::add(t, st.x2, ad::reshape(t, std::move(y), {d.batch, d.tokens, d.dim}));
  }
}

Var run_embed(const Model& model, const Var& input, const QuantState* quant, Tape& t, LayerObserver* obs) {
  const Dims d = dims_of(model, input.value);
  const Var a = ad::reshape(t, input, {d.batch * d.tokens, d.dim});
  const QuantParams* wp = quant ? quant->get(MatmulSite{kModelLevel, SiteKind::kEmbed, Operand::kB}) : nullptr;
  const Var prod = ad::matmul(t, a, weight(model.w_embed, wp));
  if (obs) {
    const Var w_fp = Tape::constant(model.w_embed);
    obs->on_layer(kModelLevel, SiteKind::kEmbed, a, std::span<const Var>(&w_fp, 1), std::span<const Var>(&prod, 1));
  }
  return ad::reshape(t, prod, {d.batch, d.tokens, d.dim});
}

Var run_head(const Model& model, const Var& last, const QuantState* quant, Tape& t, LayerObserver* obs) {
  dims_of(model, last.value);
  const Var pooled = ad::mean_axis(t, last, 1);
  const QuantParams* wp = quant ? quant->get(MatmulSite{kModelLevel, SiteKind::kHead, Operand::kB}) : nullptr;
  const Var logits = ad::matmul(t, pooled, weight(model.w_head, wp));
  if (obs) {
    const Var w_fp = Tape::constant(model.w_head);
    obs->on_layer(kModelLevel, SiteKind::kHead, pooled, std::span<const Var>(&w_fp, 1),
                  std::span<const Var>(&logits, 1));
  }
  return logits;
}

ForwardResult forward(const Model& model, const Tensor& input, const QuantState* quant) {
  Tape tape(false);
  ForwardResult result;
  Var act = run_embed(model, Tape::constant(input), quant, tape);
  result.block_outputs.reserve(model.blocks.size());
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    BlockState st;
    st.x = std::move(act);
    run_block(model, b, st, SiteKind::kQkv, quant, tape);
    result.block_outputs.push_back(st.out.value);
    act = std::move(st.out);
  }
  result.logits = run_head(model, act, quant, tape).value;
  return result;
}

Tensor forward_tail(const Model& model, std::size_t first_block, const Tensor& activation, const QuantState* quant) {
  Tape tape(false);
  Var act = Tape::constant(activation);
  for (std::size_t b = first_block; b < model.blocks.size(); ++b) {
    BlockState st;
    st.x = std::move(act);
    run_block(model, b, st, SiteKind::kQkv, quant, tape);
    act = std::move(st.out);
  }
  return run_head(model, act, quant, tape).value;
}

}  // namespace bbcq
