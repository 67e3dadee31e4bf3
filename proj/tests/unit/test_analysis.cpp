// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bbcq/analysis.hpp"
#include "bbcq/error.hpp"
#include "bbcq/ops.hpp"
#include "helpers.hpp"

using bbcq::Shape;
using bbcq::Tensor;

namespace {

constexpr int kCases = 1000;

bbcq::CodeTensor codes_of(std::vector<std::uint32_t> codes, int bits = 4) {
  bbcq::CodeTensor c;
  c.shape = {codes.size()};
  c.codes = std::move(codes);
  c.params = bbcq::make_uniform(bits, 1.0, 0);
  return c;
}

const bbcq::QuantReportRow& row(const std::vector<bbcq::QuantReportRow>& rows, std::string_view name) {
  for (const auto& r : rows) {
    if (r.quantizer == name) return r;
  }
  FAIL("missing quantizer row");
  return rows.front();
}

}  // namespace

TEST_CASE("code entropy examples") {
  const double third = 1.0 / 3.0, sixth = 1.0 / 6.0;
  const double want = -(2.0 * third * std::log2(third) + 2.0 * sixth * std::log2(sixth));
  CHECK(bbcq::code_entropy(codes_of({0, 0, 1, 1, 2, 3})) == doctest::Approx(want).epsilon(1e-14));
  CHECK(want == doctest::Approx(1.918).epsilon(1e-3));
  std::vector<std::uint32_t> all(16);
  for (std::uint32_t i = 0; i < 16; ++i) all[i] = i;
  CHECK(bbcq::code_entropy(codes_of(all)) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(bbcq::code_entropy(codes_of({7, 7, 7, 7})) == 0.0);
  try {
    bbcq::code_entropy(codes_of({}));
    FAIL("expected an error");
  } catch (const bbcq::Error& e) {
    CHECK(e.kind() == bbcq::ErrorKind::kContract);
  }
}

TEST_CASE("code entropy is permutation invariant and bounded by the bit-width") {
  bbcq::Rng rng(41);
  for (int trial = 0; trial < kCases; ++trial) {
    const int bits = 1 + static_cast<int>(rng.below(8));
    std::vector<std::uint32_t> codes(1 + rng.below(300));
    for (auto& c : codes) c = static_cast<std::uint32_t>(rng.below(std::uint64_t{1} << bits));
    const double h = bbcq::code_entropy(codes_of(codes, std::max(bits, 2)));
    REQUIRE(h >= 0.0);
    REQUIRE(h <= bits + 1e-12);
    std::vector<std::uint32_t> shuffled = codes;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    REQUIRE(bbcq::code_entropy(codes_of(shuffled, std::max(bits, 2))) == h);
  }
}

TEST_CASE("softmax quantizer comparison on synthetic rows") {
  const Tensor onehot = bbcq::synthetic_scores(bbcq::SyntheticKind::kOneHot, 64, 16, 3);
  const auto a = bbcq::compare_softmax_quantizers(onehot, 4);
  REQUIRE(a.size() == 4);
  CHECK(row(a, "mpq").argmax_preservation == 1.0);
  CHECK(row(a, "mpq").top_value_exact);

  const Tensor gauss = bbcq::synthetic_scores(bbcq::SyntheticKind::kGaussian, 64, 16, 4);
  for (const auto& r : bbcq::compare_softmax_quantizers(bbcq::ops::scale(gauss, 0.01), 4)) {
    CHECK(r.entropy <= 4.0);
    CHECK(r.argmax_preservation >= 0.0);
    CHECK(r.argmax_preservation <= 1.0);
  }

  const Tensor power = bbcq::synthetic_scores(bbcq::SyntheticKind::kPowerLaw, 256, 64, 5);
  const auto p = bbcq::compare_softmax_quantizers(power, 4);
  CHECK(row(p, "log").entropy > row(p, "mpq").entropy);
  CHECK(row(p, "mpq").max_value_error == 0.0);
  CHECK(row(p, "log").max_value_error > 0.0);
  CHECK(row(p, "twin-uniform").max_value_error > 0.0);

  const auto again = bbcq::compare_softmax_quantizers(power, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(again[i].entropy == p[i].entropy);
    CHECK(again[i].mean_abs_error == p[i].mean_abs_error);
  }
  CHECK(bbcq::synthetic_scores(bbcq::SyntheticKind::kPowerLaw, 8, 8, 5) ==
        bbcq::synthetic_scores(bbcq::SyntheticKind::kPowerLaw, 8, 8, 5));
}

TEST_CASE("evaluation of the full-precision model") {
  const bbcq::ModelSpec spec = testutil::tiny_spec(42, 2);
  const bbcq::Model model = bbcq::init_model(spec);
  bbcq::Dataset data = bbcq::generate_dataset(spec, 3000, 42, 1);
  const bbcq::EvalMetrics fp = bbcq::evaluate(model, nullptr, data);
  CHECK(fp.agreement == 1.0);
  CHECK(fp.samples == 3000);
  const bbcq::QuantState empty(spec);
  CHECK(bbcq::evaluate(model, &empty, data).agreement == 1.0);

  bbcq::Rng rng(43);
  for (auto& y : data.labels) y = static_cast<std::int64_t>(rng.below(spec.num_classes));
  const bbcq::EvalMetrics chance = bbcq::evaluate(model, nullptr, data);
  CHECK(std::fabs(chance.accuracy - 1.0 / static_cast<double>(spec.num_classes)) < 0.04);
  CHECK(chance.mean_loss > 0.0);
}

TEST_CASE("nearest-rank percentiles") {
  const std::vector<double> v = {15, 20, 35, 40, 50};
  CHECK(bbcq::nearest_rank_percentile(v, 5) == 15);
  CHECK(bbcq::nearest_rank_percentile(v, 30) == 20);
  CHECK(bbcq::nearest_rank_percentile(v, 40) == 20);
  CHECK(bbcq::nearest_rank_percentile(v, 50) == 35);
  CHECK(bbcq::nearest_rank_percentile(v, 100) == 50);
  CHECK(bbcq::nearest_rank_percentile(std::vector<double>{-3, 1, -2}, 100) == 3);
}

TEST_CASE("error statistics") {
  const Tensor zero(Shape{2, 50});
  const bbcq::ErrorStats z = bbcq::error_stats(zero, Tensor(Shape{2, 50}, 1.0), 10.0);
  for (double w : z.weights) CHECK(w == 0.0);
  CHECK(z.metric == 0.0);

  std::vector<double> vals(100);
  for (std::size_t i = 0; i < 100; ++i) vals[i] = (i % 2 ? -1.0 : 1.0) * static_cast<double>(100 - i);
  const Tensor sigma(Shape{4, 25}, vals);
  const Tensor h(Shape{4, 25}, 0.5);
  const bbcq::ErrorStats s = bbcq::error_stats(sigma, h, 10.0, 10);
  REQUIRE(s.percentiles.size() == bbcq::kErrorPercentiles.size());
  for (std::size_t i = 0; i < s.percentiles.size(); ++i) CHECK(s.percentiles[i] == bbcq::kErrorPercentiles[i]);
  CHECK(s.threshold == bbcq::bottom_threshold(sigma.data(), 10.0));
  CHECK(s.metric == bbcq::bbc_metric(bbcq::bottom_mask(sigma, 10.0), h));
  CHECK(s.bin_edges.size() == 11);
  CHECK(s.bin_edges.back() == 100.0);
  std::size_t total = 0;
  for (std::size_t c : s.counts) total += c;
  CHECK(total == 100);
}

TEST_CASE("model error statistics cover every block") {
  const bbcq::ModelSpec spec = testutil::tiny_spec(44, 3);
  const bbcq::Model model = bbcq::init_model(spec);
  const bbcq::Dataset data = bbcq::generate_dataset(spec, 4, 44, 0);
  const bbcq::FpCache cache = bbcq::cache_fp_pass(model, data.inputs, data.labels);
  const auto stats = bbcq::model_error_stats(model, cache, bbcq::QuantState(spec), 10.0);
  REQUIRE(stats.size() == 3);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(stats[b].block == b);
    CHECK(stats[b].metric == 0.0);
  }
}
