// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bbcq/error.hpp"
#include "bbcq/ops.hpp"
#include "bbcq/random.hpp"

namespace bbcq {

double code_entropy(const CodeTensor& codes) {
  if (codes.codes.empty()) throw Error(ErrorKind::kContract, "code_entropy: empty code tensor");
  const std::uint32_t qmax = codes.params.max_code();
  std::vector<std::size_t> hist(static_cast<std::size_t>(qmax) + 1, 0);
  for (std::uint32_t c : codes.codes) {
    if (c > qmax) {
      throw Error(ErrorKind::kContract, "code " + std::to_string(c) + " exceeds " + std::to_string(qmax));
    }
    ++hist[c];
  }
  const double n = static_cast<double>(codes.codes.size());
  double h = 0.0;
  for (std::size_t count : hist) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / n;
    h -= p * std::log2(p);
  }
  return h;
}

namespace {

QuantReportRow quantizer_row(const Tensor& probs, const QuantParams& params, std::string_view site,
                             std::string_view name) {
  QuantReportRow row;
  row.site = std::string(site);
  row.quantizer = std::string(name);
  row.bits = params.bits;
  row.calibrated_max = params.scheme == Scheme::kAffineUniform ? 1.0 : params.range_max;
  const CodeTensor codes = quantize(probs, params);
  const Tensor deq = dequantize(codes);
  row.entropy = code_entropy(codes);

  const auto x = probs.data();
  const auto y = deq.data();
  double sum = 0.0;
  std::size_t top = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = std::abs(y[i] - x[i]);
    sum += e;
    row.max_abs_error = std::max(row.max_abs_error, e);
    if (x[i] > x[top]) top = i;
  }
  row.mean_abs_error = sum / static_cast<double>(x.size());
  row.max_value_error = std::abs(y[top] - x[top]);
  row.top_value_exact = row.max_value_error == 0.0;

  const std::size_t len = probs.shape().back();
  const std::size_t rows = x.size() / len;
  std::size_t kept = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * len;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < len; ++j) {
      if (x[base + j] > x[base + arg]) arg = j;
    }
    bool unique = true;
    for (std::size_t j = 0; j < len && unique; ++j) {
      if (j != arg && y[base + j] >= y[base + arg]) unique = false;
    }
    kept += unique;
  }
  row.argmax_preservation = static_cast<double>(kept) / static_cast<double>(rows);
  return row;
}

}  // namespace

std::vector<QuantReportRow> compare_softmax_quantizers(const Tensor& scores, int bits, std::string_view site) {
  const Tensor probs = ops::softmax(scores, scores.rank() - 1);
  const double qmax = std::ldexp(1.0, bits) - 1.0;
  std::vector<QuantReportRow> rows;
  rows.push_back(quantizer_row(probs, make_uniform(bits, 1.0 / qmax, 0), site, "uniform"));
  rows.push_back(quantizer_row(probs, make_log2(bits, 1.0), site, "log"));
  rows.push_back(quantizer_row(probs, make_twin_uniform(bits, 1.0), site, "twin-uniform"));
  rows.push_back(quantizer_row(probs, make_mpq(bits, ops::max_value(probs)), site, "mpq"));
  return rows;
}

std::string_view synthetic_kind_name(SyntheticKind k) noexcept {
  switch (k) {
    case SyntheticKind::kPowerLaw: return "powerlaw";
    case SyntheticKind::kGaussian: return "gaussian";
    case SyntheticKind::kOneHot: return "onehot";
  }
  return "powerlaw";
}

std::optional<SyntheticKind> parse_synthetic_kind(std::string_view name) noexcept {
  for (auto k : {SyntheticKind::kPowerLaw, SyntheticKind::kGaussian, SyntheticKind::kOneHot}) {
    if (synthetic_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

Tensor synthetic_scores(SyntheticKind kind, std::size_t rows, std::size_t len, std::uint64_t seed) {
  if (rows == 0 || len < 2) throw Error(ErrorKind::kConfig, "synthetic scores need rows >= 1 and len >= 2");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind)));
  Tensor out(Shape{rows, len});
  auto v = out.data();
  switch (kind) {
    case SyntheticKind::kPowerLaw:
      // Softmax of log-Pareto scores gives Pareto-distributed probabilities.
      for (double& s : v) s = -std::log(1.0 - rng.uniform()) / 1.1;
      break;
    case SyntheticKind::kGaussian:
      for (double& s : v) s = rng.normal();
      break;
    case SyntheticKind::kOneHot:
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < len; ++j) v[r * len + j] = rng.normal();
        v[r * len + rng.below(len)] = 16.0;
      }
      break;
  }
  return out;
}

namespace {

class ScoreRecorder : public LayerObserver {
 public:
  explicit ScoreRecorder(double factor) : factor_(factor) {}
  void on_layer(int, SiteKind kind, const Var&, std::span<const Var>, std::span<const Var> products) override {
    if (kind == SiteKind::kAttnScore) scores.push_back(ops::scale(products[0].value, factor_));
  }
  std::vector<Tensor> scores;

 private:
  double factor_;
};

}  // namespace

std::vector<Tensor> attention_scores(const Model& model, const Tensor& inputs) {
  ScoreRecorder rec(1.0 / std::sqrt(static_cast<double>(model.spec.head_dim())));
  Tape tape(false);
  Var act = run_embed(model, Tape::constant(inputs), nullptr, tape);
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    BlockState st;
    st.x = std::move(act);
    run_block(model, b, st, SiteKind::kQkv, nullptr, tape, &rec);
    act = std::move(st.out);
  }
  return std::move(rec.scores);
}

EvalMetrics evaluate(const Model& model, const QuantState* quant, const Dataset& data) {
  check_dataset(data, model.spec);
  const Tensor fp = forward(model, data.inputs).logits;
  const Tensor q = quant ? forward(model, data.inputs, quant).logits : fp;
  const auto fp_arg = ops::argmax_rows(fp);
  const auto q_arg = ops::argmax_rows(q);
  EvalMetrics m;
  m.samples = data.size();
  std::size_t correct = 0, agree = 0;
  for (std::size_t i = 0; i < m.samples; ++i) {
    correct += static_cast<std::int64_t>(q_arg[i]) == data.labels[i];
    agree += q_arg[i] == fp_arg[i];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.samples);
  m.agreement = static_cast<double>(agree) / static_cast<double>(m.samples);
  m.mean_loss = ops::cross_entropy(q, data.labels);
  return m;
}

double nearest_rank_percentile(std::span<const double> values, double p) {
  if (values.empty()) throw Error(ErrorKind::kContract, "percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw Error(ErrorKind::kParameter, "percentile " + std::to_string(p) + " outside [0, 100]");
  std::vector<double> mag(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) mag[i] = std::abs(values[i]);
  std::sort(mag.begin(), mag.end());
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(mag.size()) / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, mag.size());
  return mag[rank - 1];
}

ErrorStats error_stats(const Tensor& sigma, const Tensor& h_diag, double gamma, std::size_t bins) {
  if (sigma.shape() != h_diag.shape()) {
    throw Error(ErrorKind::kDimension, "error_stats: sigma " + shape_to_string(sigma.shape()) + " vs Hessian " +
                                           shape_to_string(h_diag.shape()));
  }
  if (bins == 0) throw Error(ErrorKind::kParameter, "error_stats: bins must be >= 1");
  ErrorStats st;
  st.gamma = gamma;
  const auto s = sigma.data();
  const auto h = h_diag.data();
  double top = 0.0;
  for (double v : s) top = std::max(top, std::abs(v));
  st.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i < bins; ++i) st.bin_edges[i] = top * static_cast<double>(i) / static_cast<double>(bins);
  st.bin_edges[bins] = top;
  st.weights.assign(bins, 0.0);
  st.counts.assign(bins, 0);
  const double batch = sigma.rank() >= 2 ? static_cast<double>(sigma.dim(0)) : 1.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double m = std::abs(s[i]);
    std::size_t bin = 0;
    if (top > 0.0) bin = std::min(bins - 1, static_cast<std::size_t>(m / top * static_cast<double>(bins)));
    st.weights[bin] += s[i] * s[i] * h[i] / batch;
    ++st.counts[bin];
  }
  for (double p : kErrorPercentiles) st.percentiles.push_back(nearest_rank_percentile(s, p));
  st.threshold = bottom_threshold(s, gamma);
  st.metric = bbc_metric(bottom_mask(sigma, gamma), h_diag);
  return st;
}

std::vector<ErrorStats> model_error_stats(const Model& model, const FpCache& cache, const QuantState& state,
                                          double gamma, std::size_t bins) {
  std::vector<ErrorStats> out;
  for (const BlockCache& bc : cache.blocks) {
    Tape tape(false);
    BlockState st;
    st.x = Tape::constant(bc.input);
    run_block(model, bc.block, st, SiteKind::kQkv, &state, tape);
    ErrorStats es = error_stats(ops::sub(st.out.value, bc.output), bc.hess, gamma, bins);
    es.block = bc.block;
    out.push_back(std::move(es));
  }
  return out;
}

}  // namespace bbcq
