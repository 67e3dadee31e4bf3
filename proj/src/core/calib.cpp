// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/calib.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "bbcq/error.hpp"
#include "bbcq/ops.hpp"
#include "json_util.hpp"

namespace bbcq {

std::string_view profile_name(Profile p) noexcept {
  return p == Profile::kDetection ? "detection" : "classification";
}

std::optional<Profile> parse_profile(std::string_view name) noexcept {
  if (name == "classification") return Profile::kClassification;
  if (name == "detection") return Profile::kDetection;
  return std::nullopt;
}

std::string_view softmax_quantizer_name(SoftmaxQuantizer q) noexcept {
  switch (q) {
    case SoftmaxQuantizer::kUniform: return "uniform";
    case SoftmaxQuantizer::kLog: return "log";
    case SoftmaxQuantizer::kTwin: return "twin";
    case SoftmaxQuantizer::kMpq: return "mpq";
  }
  return "mpq";
}

std::optional<SoftmaxQuantizer> parse_softmax_quantizer(std::string_view name) noexcept {
  for (auto q : {SoftmaxQuantizer::kUniform, SoftmaxQuantizer::kLog, SoftmaxQuantizer::kTwin, SoftmaxQuantizer::kMpq}) {
    if (softmax_quantizer_name(q) == name) return q;
  }
  return std::nullopt;
}

CalibConfig CalibConfig::for_profile(Profile p) {
  CalibConfig c;
  c.profile = p;
  c.alpha = p == Profile::kDetection ? 0.5 : 0.0;
  c.beta = 1.2;
  return c;
}

void validate_config(const CalibConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, "invalid calibration config: " + msg); };
  if (!std::isfinite(c.alpha) || !std::isfinite(c.beta) || c.alpha < 0.0 || c.alpha > c.beta || !(c.beta > 0.0)) {
    fail("need 0 <= alpha <= beta and beta > 0, got alpha=" + std::to_string(c.alpha) +
         " beta=" + std::to_string(c.beta));
  }
  if (c.candidates < 2) fail("candidates must be >= 2");
  if (c.rounds < 1) fail("rounds must be >= 1");
  if (!(c.gamma >= 0.0 && c.gamma <= 100.0)) fail("gamma must lie in [0, 100]");
  if (c.w_bits < 2 || c.w_bits > 8) fail("wbits must lie in [2, 8]");
  if (c.a_bits < 2 || c.a_bits > 8) fail("abits must lie in [2, 8]");
  if (!(c.twin_threshold >= 0.0) || !std::isfinite(c.twin_threshold)) fail("twin threshold must be >= 0");
}

// ---------------------------------------------------------------------------
// Search primitives

std::vector<ScaleCandidate> candidate_scales(double x_min, double x_max, int bits, double alpha, double beta,
                                             std::size_t n) {
  if (!(x_max > x_min)) {
    throw Error(ErrorKind::kDegenerateRange, "operand range [" + std::to_string(x_min) + ", " +
                                                 std::to_string(x_max) + "] is empty");
  }
  if (bits < 2 || bits > 8) throw Error(ErrorKind::kParameter, "bit-width " + std::to_string(bits) + " outside [2, 8]");
  if (n < 2) throw Error(ErrorKind::kParameter, "candidate count must be >= 2");
  if (!(alpha <= beta)) throw Error(ErrorKind::kParameter, "search range needs alpha <= beta");

  const double levels = std::ldexp(1.0, bits);
  const double qmax = levels - 1.0;
  const double range = x_max - x_min;
  auto zero_point = [&](double scale) {
    return static_cast<std::int64_t>(std::clamp(round_half_away(-x_min / scale), 0.0, qmax));
  };
  std::vector<ScaleCandidate> out;
  out.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double mult = alpha + static_cast<double>(i) * (beta - alpha) / static_cast<double>(n - 1);
    const double scale = std::max(mult * range / levels, kScaleEpsilon);
    out.push_back({scale, zero_point(scale)});
  }
  const double minmax = std::max(range / qmax, kScaleEpsilon);
  out.push_back({minmax, zero_point(minmax)});
  return out;
}

QuantParams initial_params(double x_min, double x_max, int bits) {
  if (!(x_max > x_min)) {
    throw Error(ErrorKind::kDegenerateRange, "operand range [" + std::to_string(x_min) + ", " +
                                                 std::to_string(x_max) + "] is empty");
  }
  const double scale = std::max((x_max - x_min) / std::ldexp(1.0, bits), kScaleEpsilon);
  const double qmax = std::ldexp(1.0, bits) - 1.0;
  return make_uniform(bits, scale, static_cast<std::int64_t>(std::clamp(round_half_away(-x_min / scale), 0.0, qmax)));
}

double bottom_threshold(std::span<const double> sigma, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 100.0)) {
    throw Error(ErrorKind::kParameter, "gamma " + std::to_string(gamma) + " outside [0, 100]");
  }
  const std::size_t n = sigma.size();
  const auto r = static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(n) / 100.0));
  if (r == 0) return 0.0;
  if (r >= n) return std::numeric_limits<double>::infinity();
  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(sigma[i]);
  // The (r+1)-th smallest magnitude: the r smallest fall strictly below it
  // unless they tie with it.
  std::nth_element(mag.begin(), mag.begin() + static_cast<std::ptrdiff_t>(r), mag.end());
  return mag[r];
}

Tensor bottom_mask(const Tensor& sigma, double gamma) {
  const double t = bottom_threshold(sigma.data(), gamma);
  Tensor out = sigma;
  for (double& v : out.data()) {
    if (std::abs(v) < t) v = 0.0;
  }
  return out;
}

double bbc_metric(const Tensor& masked, const Tensor& h_diag) {
  if (masked.shape() != h_diag.shape()) {
    throw Error(ErrorKind::kDimension, "bbc_metric: sigma " + shape_to_string(masked.shape()) + " vs Hessian " +
                                           shape_to_string(h_diag.shape()));
  }
  const auto s = masked.data();
  const auto h = h_diag.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += s[i] * s[i] * h[i];
  const double batch = masked.rank() >= 2 ? static_cast<double>(masked.dim(0)) : 1.0;
  return acc / batch;
}

// ---------------------------------------------------------------------------
// Parallel helpers

std::size_t worker_count() {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BBCQ_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return n;
}

namespace {

/// Runs fn(i) for i in [0, count). Results must be written by index so the
/// outcome does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t count, const Fn& fn) {
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  if (error) std::rethrow_exception(error);
}

std::size_t argmin_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[best]) best = i;
  }
  return best;
}

double sigma_metric(const Tensor& out, const Tensor& ref, const Tensor& hess, double gamma) {
  return bbc_metric(bottom_mask(ops::sub(out, ref), gamma), hess);
}

OperandRange range_of(const Tensor& t) { return {ops::min_value(t), ops::max_value(t)}; }

OperandRange range_of(std::span<const Tensor> parts) {
  OperandRange r = range_of(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    r.min = std::min(r.min, ops::min_value(parts[i]));
    r.max = std::max(r.max, ops::max_value(parts[i]));
  }
  return r;
}

/// Copies the block state that stages `from`.. read.
BlockState prefix_for(const BlockState& full, SiteKind from) {
  BlockState st;
  st.x = full.x;
  switch (layer_index(from)) {
    case 2:
      st.q = full.q;
      st.k = full.k;
      st.v = full.v;
      break;
    case 3:
      st.probs = full.probs;
      st.v = full.v;
      break;
    case 4:
      st.ctx = full.ctx;
      break;
    case 5:
      st.x2 = full.x2;
      st.h2 = full.h2;
      break;
    case 6:
      st.x2 = full.x2;
      st.hidden = full.hidden;
      break;
    default:
      break;
  }
  return st;
}

/// Intermediate state of the block under search, computed once per search
/// under the current assignment.
struct BlockWorkspace {
  BlockState state;
  memstats::Tracked<memstats::Kind::kWorkspace> tracker;
};

void run_full_block(const Model& model, std::size_t block, const Tensor& input, const QuantState& state,
                    BlockState& st) {
  Tape tape(false);
  st.x = Tape::constant(input);
  run_block(model, block, st, SiteKind::kQkv, &state, tape);
}

double embed_metric(const Model& model, const QuantState& state, const FpCache& cache, double gamma) {
  Tape tape(false);
  BlockState st;
  st.x = run_embed(model, Tape::constant(cache.inputs), &state, tape);
  run_block(model, 0, st, SiteKind::kQkv, &state, tape);
  return sigma_metric(st.out.value, cache.blocks[0].output, cache.blocks[0].hess, gamma);
}

double head_metric(const Model& model, const QuantState& state, const FpCache& cache, double gamma) {
  Tape tape(false);
  const Var logits = run_head(model, Tape::constant(cache.blocks.back().output), &state, tape);
  return sigma_metric(logits.value, cache.logits, cache.logit_hess, gamma);
}

void check_cache(const Model& model, const FpCache& cache) {
  if (cache.blocks.size() != model.blocks.size()) {
    throw Error(ErrorKind::kContract, "cache holds " + std::to_string(cache.blocks.size()) + " blocks, model has " +
                                          std::to_string(model.blocks.size()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Caches

FpCache cache_fp_pass(const Model& model, const Tensor& inputs, std::span<const std::int64_t> labels, LossKind loss) {
  FpCache cache;
  cache.inputs = inputs;
  cache.blocks.reserve(model.blocks.size());
  std::vector<Var> outputs;
  {
    Tape tape(true);
    // Gradients are only needed from the first block input onwards.
    Var act = tape.input(run_embed(model, Tape::constant(inputs), nullptr, tape).value);
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
      BlockState st;
      st.x = act;
      run_block(model, b, st, SiteKind::kQkv, nullptr, tape);
      BlockCache& bc = cache.blocks.emplace_back();
      bc.block = b;
      bc.input = st.x.value;
      bc.output = st.out.value;
      cache.softmax_max.push_back(ops::max_value(st.probs.value));
      outputs.push_back(st.out);
      act = std::move(st.out);
    }
    const Var logits = run_head(model, act, nullptr, tape);
    const Var l = loss == LossKind::kCrossEntropy ? ad::cross_entropy(tape, logits, labels) : ad::sum(tape, logits);
    tape.backward(l);
    cache.loss = l.value.item();
    cache.logits = logits.value;
    cache.logit_hess = ops::mul(tape.grad(logits), tape.grad(logits));
    for (std::size_t b = 0; b < outputs.size(); ++b) {
      cache.blocks[b].grad = tape.grad(outputs[b]);
      cache.blocks[b].hess = ops::mul(cache.blocks[b].grad, cache.blocks[b].grad);
    }
  }
  return cache;
}

namespace {

class LayerRecorder : public LayerObserver {
 public:
  struct Entry {
    int block;
    SiteKind kind;
    Tensor a;
    std::vector<Tensor> b_parts;
    std::vector<Var> products;
  };

  void on_layer(int block, SiteKind kind, const Var& a, std::span<const Var> b_parts,
                std::span<const Var> products) override {
    Entry e{block, kind, a.value, {}, {products.begin(), products.end()}};
    for (const Var& b : b_parts) e.b_parts.push_back(b.value);
    entries.push_back(std::move(e));
  }

  std::vector<Entry> entries;
};

class RangeRecorder : public LayerObserver {
 public:
  void on_layer(int, SiteKind kind, const Var& a, std::span<const Var> b_parts, std::span<const Var>) override {
    const std::size_t l = layer_index(kind);
    if (l == 0) return;
    std::vector<Tensor> parts;
    for (const Var& b : b_parts) parts.push_back(b.value);
    ranges[l - 1] = {range_of(a.value), range_of(parts)};
  }

  std::vector<std::array<OperandRange, 2>> ranges = std::vector<std::array<OperandRange, 2>>(kLayersPerBlock);
};

}  // namespace

std::vector<LayerCache> cache_layer_pass(const Model& model, const Tensor& inputs,
                                         std::span<const std::int64_t> labels, double* loss) {
  LayerRecorder rec;
  std::vector<LayerCache> out;
  Tape tape(true);
  const Var embedded = run_embed(model, Tape::constant(inputs), nullptr, tape, &rec);
  Var act = tape.input(embedded.value);
  const Var first_input = act;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    BlockState st;
    st.x = act;
    run_block(model, b, st, SiteKind::kQkv, nullptr, tape, &rec);
    act = std::move(st.out);
  }
  const Var logits = run_head(model, act, nullptr, tape, &rec);
  const Var l = ad::cross_entropy(tape, logits, labels);
  tape.backward(l);
  if (loss) *loss = l.value.item();

  out.reserve(rec.entries.size());
  for (LayerRecorder::Entry& e : rec.entries) {
    LayerCache& lc = out.emplace_back();
    lc.block = e.block;
    lc.kind = e.kind;
    lc.a = std::move(e.a);
    lc.b_parts = std::move(e.b_parts);
    Tensor grad;
    if (e.kind == SiteKind::kEmbed) {
      // The embedding product is the first block input up to a reshape.
      grad = tape.grad(first_input).reshaped(e.products[0].value.shape());
      lc.product = e.products[0].value;
    } else if (e.products.size() == 1) {
      grad = tape.grad(e.products[0]);
      lc.product = e.products[0].value;
    } else {
      std::vector<Tensor> g, p;
      for (const Var& v : e.products) {
        g.push_back(tape.grad(v));
        p.push_back(v.value);
      }
      const std::size_t axis = p[0].rank() - 1;
      grad = ops::concat(g, axis);
      lc.product = ops::concat(p, axis);
    }
    lc.hess = ops::mul(grad, grad);
  }
  return out;
}

std::vector<std::array<OperandRange, 2>> block_operand_ranges(const Model& model, const BlockCache& cache) {
  RangeRecorder rec;
  Tape tape(false);
  BlockState st;
  st.x = Tape::constant(cache.input);
  run_block(model, cache.block, st, SiteKind::kQkv, nullptr, tape, &rec);
  return rec.ranges;
}

std::vector<QuantParams> site_candidates(const MatmulSite& site, OperandRange range, const CalibConfig& cfg) {
  const int bits = is_weight_operand(site) ? cfg.w_bits : cfg.a_bits;
  std::vector<QuantParams> out;
  for (const ScaleCandidate& c : candidate_scales(range.min, range.max, bits, cfg.alpha, cfg.beta, cfg.candidates)) {
    out.push_back(make_uniform(bits, c.scale, c.zero_point));
  }
  return out;
}

double site_metric(const Model& model, const MatmulSite& site, const QuantState& state, const FpCache& cache,
                   double gamma) {
  check_cache(model, cache);
  if (site.kind == SiteKind::kEmbed) return embed_metric(model, state, cache, gamma);
  if (site.kind == SiteKind::kHead) return head_metric(model, state, cache, gamma);
  const BlockCache& bc = cache.blocks.at(static_cast<std::size_t>(site.block));
  BlockState st;
  run_full_block(model, bc.block, bc.input, state, st);
  return sigma_metric(st.out.value, bc.output, bc.hess, gamma);
}

SearchOutcome search_site(const Model& model, const MatmulSite& site, std::span<const QuantParams> candidates,
                          const QuantState& state, const FpCache& cache, double gamma) {
  check_cache(model, cache);
  if (candidates.empty()) throw Error(ErrorKind::kContract, "search_site: empty candidate list");
  SearchOutcome out;
  out.trace.resize(candidates.size());

  if (!is_block_layer(site.kind)) {
    parallel_for(candidates.size(), [&](std::size_t i) {
      QuantState s = state;
      s.set(site, candidates[i]);
      out.trace[i] = site_metric(model, site, s, cache, gamma);
    });
  } else {
    const BlockCache& bc = cache.blocks.at(static_cast<std::size_t>(site.block));
    BlockWorkspace ws;
    run_full_block(model, bc.block, bc.input, state, ws.state);
    parallel_for(candidates.size(), [&](std::size_t i) {
      QuantState s = state;
      s.set(site, candidates[i]);
      BlockState st = prefix_for(ws.state, site.kind);
      Tape tape(false);
      run_block(model, bc.block, st, site.kind, &s, tape);
      out.trace[i] = sigma_metric(st.out.value, bc.output, bc.hess, gamma);
    });
  }
  out.chosen = argmin_lowest(out.trace);
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

/// Metric source for the driver: blockwise (default) or per layer.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual void begin_block(std::size_t block) = 0;
  /// Range of an operand of a block layer.
  virtual OperandRange range(const MatmulSite& site) const = 0;
  virtual double softmax_max(std::size_t block) const = 0;
  virtual double metric(const MatmulSite& site, const QuantState& state) const = 0;
  virtual SearchOutcome search(const MatmulSite& site, std::span<const QuantParams> candidates,
                               const QuantState& state) const = 0;
};

class BlockEvaluator final : public Evaluator {
 public:
  BlockEvaluator(const Model& model, const FpCache& cache, double gamma) : model_(model), cache_(cache), gamma_(gamma) {}

  void begin_block(std::size_t block) override { ranges_ = block_operand_ranges(model_, cache_.blocks.at(block)); }
  OperandRange range(const MatmulSite& site) const override {
    return ranges_.at(layer_index(site.kind) - 1)[site.operand == Operand::kA ? 0 : 1];
  }
  double softmax_max(std::size_t block) const override { return cache_.softmax_max.at(block); }
  double metric(const MatmulSite& site, const QuantState& state) const override {
    return site_metric(model_, site, state, cache_, gamma_);
  }
  SearchOutcome search(const MatmulSite& site, std::span<const QuantParams> candidates,
                       const QuantState& state) const override {
    return search_site(model_, site, candidates, state, cache_, gamma_);
  }

 private:
  const Model& model_;
  const FpCache& cache_;
  double gamma_;
  std::vector<std::array<OperandRange, 2>> ranges_;
};

class LayerEvaluator final : public Evaluator {
 public:
  LayerEvaluator(const std::vector<LayerCache>& layers, double gamma) : layers_(layers), gamma_(gamma) {}

  void begin_block(std::size_t) override {}
  OperandRange range(const MatmulSite& site) const override {
    const LayerCache& lc = find(site);
    return site.operand == Operand::kA ? range_of(lc.a) : range_of(lc.b_parts);
  }
  double softmax_max(std::size_t block) const override {
    return ops::max_value(find(MatmulSite{static_cast<int>(block), SiteKind::kAttnApply, Operand::kA}).a);
  }
  double metric(const MatmulSite& site, const QuantState& state) const override {
    const LayerCache& lc = find(site);
    const QuantParams* pa = is_quantizable({lc.block, lc.kind, Operand::kA})
                                ? state.get({lc.block, lc.kind, Operand::kA})
                                : nullptr;
    const QuantParams* pb = state.get({lc.block, lc.kind, Operand::kB});
    Tape tape(false);
    const Tensor a = quantize_operand(tape, Tape::constant(lc.a), pa, state.dynamic_softmax).value;
    std::vector<Tensor> parts;
    for (const Tensor& b : lc.b_parts) {
      parts.push_back(quantize_operand(tape, Tape::constant(b), pb, state.dynamic_softmax).value);
    }
    return sigma_metric(layer_product(lc.kind, a, parts), lc.product, lc.hess, gamma_);
  }
  SearchOutcome search(const MatmulSite& site, std::span<const QuantParams> candidates,
                       const QuantState& state) const override {
    SearchOutcome out;
    out.trace.resize(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t i) {
      QuantState s = state;
      s.set(site, candidates[i]);
      out.trace[i] = metric(site, s);
    });
    out.chosen = argmin_lowest(out.trace);
    return out;
  }

 private:
  const LayerCache& find(const MatmulSite& site) const {
    for (const LayerCache& lc : layers_) {
      if (lc.block == site.block && lc.kind == site.kind) return lc;
    }
    throw Error(ErrorKind::kContract, "no layer cache for " + site_id(site));
  }

  const std::vector<LayerCache>& layers_;
  double gamma_;
};

QuantParams softmax_params(const CalibConfig& cfg, double calibrated_max) {
  switch (cfg.softmax_quant) {
    case SoftmaxQuantizer::kMpq: return make_mpq(cfg.a_bits, calibrated_max);
    case SoftmaxQuantizer::kLog: return make_log2(cfg.a_bits, calibrated_max);
    case SoftmaxQuantizer::kTwin: return make_twin_uniform(cfg.a_bits, calibrated_max, cfg.twin_threshold);
    case SoftmaxQuantizer::kUniform: break;
  }
  throw Error(ErrorKind::kContract, "uniform post-Softmax quantization is searched, not fixed");
}

void record_search(SiteResult& sr, const SearchOutcome& out, std::span<const QuantParams> candidates,
                   QuantState& state) {
  sr.trace.push_back(out.trace);
  sr.chosen_index = out.chosen;
  sr.params = candidates[out.chosen];
  state.set(sr.site, sr.params);
}

SiteResult search_weight_only(const MatmulSite& site, const Tensor& weight, const CalibConfig& cfg,
                              const Evaluator& ev, QuantState& state) {
  // The activation side is excluded, so one search already sees its final
  // context; further rounds would repeat it exactly.
  SiteResult sr;
  sr.site = site;
  const auto candidates = site_candidates(site, range_of(weight), cfg);
  record_search(sr, ev.search(site, candidates, state), candidates, state);
  return sr;
}

CalibResult drive(const Model& model, const CalibConfig& cfg, Evaluator& ev, double fp_loss) {
  CalibResult res;
  res.spec = model.spec;
  res.config = cfg;
  res.fp_loss = fp_loss;
  QuantState state(model.spec);
  state.dynamic_softmax = cfg.dynamic_softmax;

  res.sites.push_back(search_weight_only({kModelLevel, SiteKind::kEmbed, Operand::kB}, model.w_embed, cfg, ev, state));

  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    ev.begin_block(b);
    std::vector<SiteResult> block_sites(kLayersPerBlock * 2);
    for (std::size_t l = kLayersPerBlock; l >= 1; --l) {
      const SiteKind kind = block_layer(l);
      SiteResult& sa = block_sites[(l - 1) * 2];
      SiteResult& sb = block_sites[(l - 1) * 2 + 1];
      sa.site = {static_cast<int>(b), kind, Operand::kA};
      sb.site = {static_cast<int>(b), kind, Operand::kB};

      const OperandRange rb = ev.range(sb.site);
      state.set(sb.site, initial_params(rb.min, rb.max, is_weight_operand(sb.site) ? cfg.w_bits : cfg.a_bits));
      const auto cand_b = site_candidates(sb.site, rb, cfg);

      const bool fixed_a = is_softmax_site(sa.site) && cfg.softmax_quant != SoftmaxQuantizer::kUniform;
      std::vector<QuantParams> cand_a;
      if (fixed_a) {
        sa.params = softmax_params(cfg, ev.softmax_max(b));
        sa.searched = false;
        state.set(sa.site, sa.params);
      } else {
        cand_a = site_candidates(sa.site, ev.range(sa.site), cfg);
      }

      for (std::size_t r = 0; r < cfg.rounds; ++r) {
        if (fixed_a) {
          sa.trace.push_back({ev.metric(sa.site, state)});
        } else {
          record_search(sa, ev.search(sa.site, cand_a, state), cand_a, state);
        }
        record_search(sb, ev.search(sb.site, cand_b, state), cand_b, state);
      }
    }
    for (SiteResult& sr : block_sites) res.sites.push_back(std::move(sr));
  }

  res.sites.push_back(search_weight_only({kModelLevel, SiteKind::kHead, Operand::kB}, model.w_head, cfg, ev, state));
  return res;
}

}  // namespace

Dataset calibration_batch(const Dataset& data, const CalibConfig& cfg) {
  if (cfg.batch_size == 0 || cfg.batch_size >= data.size()) return data;
  Dataset out;
  out.spec = data.spec;
  out.inputs = ops::slice(data.inputs, 0, 0, cfg.batch_size);
  out.labels.assign(data.labels.begin(), data.labels.begin() + static_cast<std::ptrdiff_t>(cfg.batch_size));
  return out;
}

CalibResult calibrate(const Model& model, const Dataset& data, const CalibConfig& cfg) {
  validate_config(cfg);
  check_dataset(data, model.spec);
  const Dataset batch = calibration_batch(data, cfg);
  if (cfg.blocks_as_layers) {
    double loss = 0.0;
    const std::vector<LayerCache> layers = cache_layer_pass(model, batch.inputs, batch.labels, &loss);
    LayerEvaluator ev(layers, cfg.gamma);
    return drive(model, cfg, ev, loss);
  }
  const FpCache cache = cache_fp_pass(model, batch.inputs, batch.labels);
  BlockEvaluator ev(model, cache, cfg.gamma);
  return drive(model, cfg, ev, cache.loss);
}

double total_block_metric(const Model& model, const FpCache& cache, const QuantState& state, double gamma) {
  check_cache(model, cache);
  double total = 0.0;
  for (const BlockCache& bc : cache.blocks) {
    BlockState st;
    run_full_block(model, bc.block, bc.input, state, st);
    total += sigma_metric(st.out.value, bc.output, bc.hess, gamma);
  }
  return total;
}

const SiteResult* CalibResult::find(const MatmulSite& site) const {
  for (const SiteResult& sr : sites) {
    if (sr.site == site) return &sr;
  }
  return nullptr;
}

QuantState make_quant_state(const CalibResult& result, const ModelSpec& spec) {
  QuantState state(spec);
  state.dynamic_softmax = result.config.dynamic_softmax;
  for (const SiteResult& sr : result.sites) state.set(sr.site, sr.params);
  return state;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

[[noreturn]] void result_error(const std::string& msg) {
  throw Error(ErrorKind::kManifest, "calibration result: " + msg);
}

json config_to_json(const CalibConfig& c) {
  return json{{"profile", profile_name(c.profile)},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"candidates", c.candidates},
              {"rounds", c.rounds},
              {"gamma", c.gamma},
              {"wbits", c.w_bits},
              {"abits", c.a_bits},
              {"softmax_quant", softmax_quantizer_name(c.softmax_quant)},
              {"dynamic_softmax", c.dynamic_softmax},
              {"twin_threshold", c.twin_threshold},
              {"batch_size", c.batch_size},
              {"blocks_as_layers", c.blocks_as_layers}};
}

CalibConfig config_from_json(const json& j) {
  CalibConfig c;
  const auto profile = parse_profile(j.at("profile").get<std::string>());
  const auto sq = parse_softmax_quantizer(j.at("softmax_quant").get<std::string>());
  if (!profile || !sq) result_error("unknown profile or softmax quantizer");
  c.profile = *profile;
  c.softmax_quant = *sq;
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.candidates = j.at("candidates").get<std::size_t>();
  c.rounds = j.at("rounds").get<std::size_t>();
  c.gamma = j.at("gamma").get<double>();
  c.w_bits = j.at("wbits").get<int>();
  c.a_bits = j.at("abits").get<int>();
  c.dynamic_softmax = j.at("dynamic_softmax").get<bool>();
  c.twin_threshold = j.at("twin_threshold").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.blocks_as_layers = j.at("blocks_as_layers").get<bool>();
  return c;
}

QuantParams params_from_json(const json& j) {
  const auto scheme = parse_scheme(j.at("scheme").get<std::string>());
  if (!scheme) result_error("unknown scheme '" + j.at("scheme").get<std::string>() + "'");
  const int bits = j.at("bits").get<int>();
  switch (*scheme) {
    case Scheme::kAffineUniform:
      return make_uniform(bits, j.at("scale").get<double>(), j.at("zero_point").get<std::int64_t>());
    case Scheme::kMpq: return make_mpq(bits, j.at("range_max").get<double>());
    case Scheme::kLog2: return make_log2(bits, j.at("range_max").get<double>());
    case Scheme::kTwinUniform:
      return make_twin_uniform(bits, j.at("range_max").get<double>(), j.at("threshold").get<double>());
  }
  result_error("unreachable scheme");
}

/// Execution-order key: embed, blocks by (block, layer, operand), head.
std::int64_t site_order(const MatmulSite& s) {
  const std::int64_t op = s.operand == Operand::kA ? 0 : 1;
  if (s.kind == SiteKind::kEmbed) return op;
  if (s.kind == SiteKind::kHead) return std::numeric_limits<std::int64_t>::max() - 1 + op;
  return 2 + (static_cast<std::int64_t>(s.block) * 6 + static_cast<std::int64_t>(layer_index(s.kind)) - 1) * 2 + op;
}

}  // namespace

std::string calib_result_to_json(const CalibResult& result) {
  json sites = json::object();
  for (const SiteResult& sr : result.sites) {
    const QuantParams& p = sr.params;
    sites[site_id(sr.site)] = json{{"bits", p.bits},
                                   {"scale", p.scale},
                                   {"zero_point", p.zero_point},
                                   {"scheme", scheme_name(p.scheme)},
                                   {"range_max", p.range_max},
                                   {"threshold", p.threshold},
                                   {"chosen_index", sr.chosen_index},
                                   {"searched", sr.searched},
                                   {"trace", sr.trace}};
  }
  const json doc{{"format", "bbcq-calib-result"},
                 {"version", 1},
                 {"spec", detail::spec_to_json(result.spec)},
                 {"config", config_to_json(result.config)},
                 {"fp_loss", result.fp_loss},
                 {"sites", std::move(sites)}};
  return doc.dump(1) + "\n";
}

CalibResult calib_result_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    result_error(std::string("invalid JSON: ") + e.what());
  }
  CalibResult res;
  try {
    if (doc.at("format").get<std::string>() != "bbcq-calib-result") result_error("not a calibration result");
    if (doc.at("version").get<int>() != 1) {
      throw Error(ErrorKind::kVersion, "calibration result version " + doc.at("version").dump() + " is unsupported");
    }
    res.spec = detail::spec_from_json(doc.at("spec"));
    res.config = config_from_json(doc.at("config"));
    res.fp_loss = doc.at("fp_loss").get<double>();
    for (const auto& [id, j] : doc.at("sites").items()) {
      const auto site = parse_site_id(id);
      if (!site) result_error("bad site id '" + id + "'");
      SiteResult sr;
      sr.site = *site;
      sr.params = params_from_json(j);
      sr.chosen_index = j.at("chosen_index").get<std::size_t>();
      sr.searched = j.at("searched").get<bool>();
      sr.trace = j.at("trace").get<std::vector<std::vector<double>>>();
      if (sr.trace.empty() || sr.chosen_index >= sr.trace.back().size()) {
        result_error("site '" + id + "' has an inconsistent trace");
      }
      res.sites.push_back(std::move(sr));
    }
  } catch (const json::exception& e) {
    result_error(std::string("malformed document: ") + e.what());
  }
  std::stable_sort(res.sites.begin(), res.sites.end(),
                   [](const SiteResult& a, const SiteResult& b) { return site_order(a.site) < site_order(b.site); });
  return res;
}

}  // namespace bbcq
