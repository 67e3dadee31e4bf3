// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. argv[1] is the path of the CLI binary.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbcq/analysis.hpp"
#include "bbcq/calib.hpp"
#include "bbcq/io.hpp"
#include "bbcq/memstats.hpp"
#include "bbcq/ops.hpp"
#include "bbcq/quant.hpp"
#include "bbcq/random.hpp"
#include "bbcq/vit.hpp"
#include "oracle_bridge.hpp"
#include "reference.hpp"

namespace fs = std::filesystem;
using bbcq::Shape;
using bbcq::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& run) {
  Outcome o;
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Tensor random_tensor(bbcq::Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Straight double loop over (row, column).
double double_loop_metric(const Tensor& s, const Tensor& h) {
  const std::size_t rows = s.dim(0), cols = s.size() / rows;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) total += s[r * cols + c] * s[r * cols + c] * h[r * cols + c];
  }
  return total / static_cast<double>(rows);
}

bbcq::ModelSpec toy_spec(std::uint64_t seed) {
  bbcq::ModelSpec spec;  // 4 blocks, D=64, 4 heads
  spec.init_seed = seed;
  return spec;
}

// ---------------------------------------------------------------------------

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  bbcq::Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t rows = 1 + rng.below(8), cols = 1 + rng.below(256);
    const Tensor s = random_tensor(rng, {rows, cols}, -1.0, 1.0);
    const Tensor h = random_tensor(rng, {rows, cols}, 0.0, 4.0);
    const double gamma = rng.uniform(0.0, 100.0);
    const double lib = bbcq::bbc_metric(bbcq::bottom_mask(s, gamma), h);
    const double want = ref::naive_metric(s.values(), h.values(), rows, gamma);
    const double plain = bbcq::bbc_metric(s, h), loop = double_loop_metric(s, h);
    worst = std::max(worst, std::fabs(lib - want) / std::max(std::fabs(want), 1e-300));
    worst = std::max(worst, std::fabs(plain - loop) / std::max(std::fabs(loop), 1e-300));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-12 && t < 5.0, fmt("max rel err %.3g (<= 1e-12), %.2fs (< 5s)", worst, t)};
}

Outcome search_oracle() {
  const auto t0 = Clock::now();
  std::string mismatch;
  std::size_t sites = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    bbcq::ModelSpec spec;
    spec.num_blocks = 1;
    spec.embed_dim = 32;
    spec.init_seed = seed;
    const bbcq::Model model = bbcq::init_model(spec);
    const bbcq::Dataset data = bbcq::generate_dataset(spec, 32, seed, 0);
    bbcq::CalibConfig cfg;
    cfg.candidates = 20;
    const bbcq::CalibResult lib = bbcq::calibrate(model, data, cfg);
    const ref::Assignment want =
        ref::calibrate(oracle::to_reference(model), data.inputs.values(), data.labels, oracle::to_reference(cfg));
    const std::string diff = oracle::compare(lib, want);
    if (!diff.empty() && mismatch.empty()) mismatch = "seed " + std::to_string(seed) + ": " + diff;
    sites += lib.sites.size();
  }
  const double t = seconds_since(t0);
  std::string detail = std::to_string(sites) + " sites over 5 seeds, " + fmt("%.1fs (< 60s)", t);
  if (!mismatch.empty()) detail += "; " + mismatch;
  return {mismatch.empty() && t < 60.0, detail};
}

Outcome gradient_check() {
  constexpr double kStep = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const bbcq::ModelSpec spec = toy_spec(seed);
    const bbcq::Model model = bbcq::init_model(spec);
    const bbcq::Dataset data = bbcq::generate_dataset(spec, 4, seed, 0);
    const bbcq::FpCache cache = bbcq::cache_fp_pass(model, data.inputs, data.labels);
    for (std::size_t b = 0; b < spec.num_blocks; ++b) {
      Tensor o = cache.blocks[b].output;
      for (std::size_t i = 0; i < o.size(); ++i) {
        const double saved = o[i];
        o[i] = saved + kStep;
        const double up = bbcq::ops::cross_entropy(bbcq::forward_tail(model, b + 1, o), data.labels);
        o[i] = saved - kStep;
        const double down = bbcq::ops::cross_entropy(bbcq::forward_tail(model, b + 1, o), data.labels);
        o[i] = saved;
        const double fd = (up - down) / (2.0 * kStep);
        const double g = cache.blocks[b].grad[i];
        // Entries below 1e-6 in magnitude are compared absolutely against that floor.
        worst = std::max(worst, std::fabs(g - fd) / std::max({std::fabs(g), std::fabs(fd), 1e-6}));
        ++checked;
      }
    }
  }
  return {worst <= 1e-4, fmt("max rel err %.3g (<= 1e-4) over %.0f block-output entries, 3 seeds", worst,
                             static_cast<double>(checked))};
}

// --- criterion 4 -----------------------------------------------------------

using bbcq::QuantParams;
using bbcq::Scheme;

double fq(double x, const QuantParams& p) { return bbcq::dequantize_code(bbcq::quantize_value(x, p), p); }

std::vector<QuantParams> random_zoo(bbcq::Rng& rng) {
  const int bits = 2 + static_cast<int>(rng.below(7));
  const double mx = rng.uniform(0.05, 1.0);
  const auto z = static_cast<std::int64_t>(rng.below(1u << bits));
  return {bbcq::make_uniform(bits, std::exp(rng.uniform(-8.0, 3.0)), z), bbcq::make_mpq(bits, mx),
          bbcq::make_log2(bits, mx), bbcq::make_twin_uniform(bits, mx, mx * rng.uniform(0.01, 0.9))};
}

double span_of(const QuantParams& p) {
  return p.scheme == Scheme::kAffineUniform ? p.scale * (p.max_code() + 4.0) : p.range_max * 1.2;
}

Tensor softmax_row(bbcq::Rng& rng, std::size_t len) {
  const double temp = std::exp(rng.uniform(-1.0, 3.0));
  Tensor x(Shape{len});
  for (double& v : x.data()) v = rng.normal() * temp;
  return bbcq::ops::softmax(x, 0);
}

Outcome quantizer_suite() {
  constexpr int kCases = 1000;
  std::vector<std::string> failed;
  auto suite = [&](const char* name, std::uint64_t seed, const std::function<bool(bbcq::Rng&)>& one) {
    bbcq::Rng rng(seed);
    for (int i = 0; i < kCases; ++i) {
      if (!one(rng)) {
        failed.push_back(std::string(name) + " case " + std::to_string(i));
        return;
      }
    }
  };
  suite("monotone", 201, [](bbcq::Rng& rng) {
    for (const QuantParams& p : random_zoo(rng)) {
      const double hi = span_of(p), lo = p.scheme == Scheme::kAffineUniform ? -hi : -0.1 * p.range_max;
      double x = rng.uniform(lo, hi), y = rng.uniform(lo, hi);
      if (x > y) std::swap(x, y);
      if (fq(x, p) > fq(y, p)) return false;
    }
    return true;
  });
  suite("idempotent", 202, [](bbcq::Rng& rng) {
    for (const QuantParams& p : random_zoo(rng)) {
      Tensor x(Shape{16});
      for (double& v : x.data()) v = rng.uniform(p.scheme == Scheme::kAffineUniform ? -span_of(p) : 0.0, span_of(p));
      const Tensor once = bbcq::fake_quant(x, p);
      if (bbcq::fake_quant(once, p) != once) return false;
    }
    return true;
  });
  suite("half-step error", 203, [](bbcq::Rng& rng) {
    const QuantParams p = random_zoo(rng)[0];
    const double lo = static_cast<double>(-p.zero_point) * p.scale;
    const double hi = static_cast<double>(static_cast<std::int64_t>(p.max_code()) - p.zero_point) * p.scale;
    for (int j = 0; j < 8; ++j) {
      const double x = rng.uniform(lo, hi);
      if (std::fabs(fq(x, p) - x) > p.scale / 2.0) return false;
    }
    return true;
  });
  suite("mpq top exact", 204, [](bbcq::Rng& rng) {
    const Tensor s = softmax_row(rng, 2 + rng.below(60));
    const double mx = bbcq::ops::max_value(s);
    const auto codes = bbcq::mpq_quant(s, 2 + static_cast<int>(rng.below(7)), mx);
    const Tensor dq = bbcq::mpq_dequant(codes);
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] == mx && (dq[j] != mx || codes.codes[j] != codes.params.max_code())) return false;
    }
    return true;
  });
  suite("mpq argmax", 205, [](bbcq::Rng& rng) {
    const std::size_t len = 2 + rng.below(60);
    const Tensor s = softmax_row(rng, len);
    const double mx = std::min(1.0, bbcq::ops::max_value(s) * rng.uniform(1.0, 1.5));
    const Tensor dq = bbcq::mpq_dequant(bbcq::mpq_quant(s, 2 + static_cast<int>(rng.below(7)), mx));
    const std::size_t in_top = bbcq::ops::argmax_rows(s.reshaped({1, len}))[0];
    return dq[in_top] == bbcq::ops::max_value(dq);
  });
  suite("log2 grid", 206, [](bbcq::Rng& rng) {
    const Tensor s = softmax_row(rng, 2 + rng.below(60));
    const double mx = bbcq::ops::max_value(s);
    const Tensor dq = bbcq::log_dequant(bbcq::log_quant(s, 2 + static_cast<int>(rng.below(7)), mx));
    for (double v : dq.data()) {
      int e = 0;
      if (std::frexp(v / mx, &e) != 0.5) return false;
    }
    return true;
  });
  std::string detail = "6 suites x 1000 cases";
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

Outcome gamma_reductions() {
  const double gammas[] = {0, 10, 25, 50, 75, 100};
  bbcq::Rng rng(301);
  // Random pairs plus the real block error of a 4-bit toy model.
  std::vector<std::pair<Tensor, Tensor>> cases;
  for (int i = 0; i < 200; ++i) {
    const std::size_t rows = 1 + rng.below(8), cols = 1 + rng.below(200);
    cases.emplace_back(random_tensor(rng, {rows, cols}, -1.0, 1.0), random_tensor(rng, {rows, cols}, 0.0, 3.0));
  }
  bbcq::ModelSpec spec = toy_spec(7);
  spec.num_blocks = 1;
  const bbcq::Model model = bbcq::init_model(spec);
  const bbcq::Dataset data = bbcq::generate_dataset(spec, 8, 7, 0);
  const bbcq::FpCache cache = bbcq::cache_fp_pass(model, data.inputs, data.labels);
  bbcq::QuantState state(spec);
  state.set({0, bbcq::SiteKind::kMlp1, bbcq::Operand::kB}, bbcq::make_uniform(4, 0.05, 8));
  const Tensor out = bbcq::forward(model, data.inputs, &state).block_outputs[0];
  cases.emplace_back(bbcq::ops::sub(out, cache.blocks[0].output), cache.blocks[0].hess);

  std::size_t bad_zero = 0, bad_full = 0, bad_order = 0;
  for (const auto& [s, h] : cases) {
    if (bbcq::bbc_metric(bbcq::bottom_mask(s, 0.0), h) != bbcq::bbc_metric(s, h)) ++bad_zero;
    if (bbcq::bbc_metric(bbcq::bottom_mask(s, 100.0), h) != 0.0) ++bad_full;
    double prev = INFINITY;
    for (double g : gammas) {
      const double m = bbcq::bbc_metric(bbcq::bottom_mask(s, g), h);
      if (m > prev) ++bad_order;
      prev = m;
    }
  }
  const bool ok = bad_zero == 0 && bad_full == 0 && bad_order == 0;
  return {ok, std::to_string(cases.size()) + " (sigma, H) pairs; violations: gamma=0 " + std::to_string(bad_zero) +
                  ", gamma=100 " + std::to_string(bad_full) + ", ordering " + std::to_string(bad_order)};
}

// --- criteria 6 and 7 share the toy-model runs -----------------------------

struct ToyRuns {
  bbcq::ModelSpec spec = toy_spec(7);
  bbcq::Model model = bbcq::init_model(spec);
  bbcq::Dataset calib = bbcq::generate_dataset(spec, 32, 7, 0);
  bbcq::Dataset eval = bbcq::generate_dataset(spec, 256, 7, 1);
  bbcq::CalibResult w4a4;
  double w4a4_seconds = 0.0;
};

Outcome baseline_domination(const ToyRuns& runs) {
  std::size_t searched = 0, violations = 0;
  for (const bbcq::SiteResult& s : runs.w4a4.sites) {
    if (!s.searched) continue;
    ++searched;
    for (const auto& round : s.trace) {
      if (*std::min_element(round.begin(), round.end()) > round.back()) ++violations;
    }
    if (s.chosen_metric() > s.trace.back().back()) ++violations;
  }
  return {violations == 0 && searched > 0, std::to_string(searched) + " searched sites (4-block D=64 W4A4), " +
                                                 std::to_string(violations) + " violations"};
}

Outcome trend_check(const ToyRuns& runs) {
  const auto t0 = Clock::now();
  // (a) W8A8 agreement on held-out data.
  const bbcq::CalibResult w8a8 = bbcq::calibrate(runs.model, runs.calib, bbcq::CalibConfig{});
  const bbcq::QuantState s8 = bbcq::make_quant_state(w8a8, runs.spec);
  const double agreement = bbcq::evaluate(runs.model, &s8, runs.eval).agreement;

  // (b) Both W4A4 assignments measured with the same blockwise metric at gamma = 10.
  bbcq::CalibConfig base;
  base.w_bits = base.a_bits = 4;
  base.gamma = 0.0;
  base.blocks_as_layers = true;
  base.softmax_quant = bbcq::SoftmaxQuantizer::kTwin;
  const bbcq::CalibResult layerwise = bbcq::calibrate(runs.model, runs.calib, base);
  const bbcq::Dataset batch = bbcq::calibration_batch(runs.calib, base);
  const bbcq::FpCache cache = bbcq::cache_fp_pass(runs.model, batch.inputs, batch.labels);
  const double bbc_total =
      bbcq::total_block_metric(runs.model, cache, bbcq::make_quant_state(runs.w4a4, runs.spec), 10.0);
  const double base_total =
      bbcq::total_block_metric(runs.model, cache, bbcq::make_quant_state(layerwise, runs.spec), 10.0);

  // (c) Max-value error on power-law rows.
  const auto rows = bbcq::compare_softmax_quantizers(
      bbcq::synthetic_scores(bbcq::SyntheticKind::kPowerLaw, 256, 64, 7), 4);
  double mpq = -1.0, log = -1.0, twin = -1.0;
  for (const auto& r : rows) {
    if (r.quantizer == "mpq") mpq = r.max_value_error;
    if (r.quantizer == "log") log = r.max_value_error;
    if (r.quantizer == "twin-uniform") twin = r.max_value_error;
  }
  const double t = seconds_since(t0) + runs.w4a4_seconds;

  const bool a = agreement >= 0.95, b = bbc_total <= base_total, c = mpq == 0.0 && log > 0.0 && twin > 0.0;
  std::string detail = fmt("(a) W8A8 agreement %.4f (>= 0.95); ", agreement);
  detail += fmt("(b) W4A4 total metric BBC+MPQ %.6g vs layerwise %.6g; ", bbc_total, base_total);
  detail += fmt("(c) max-value error mpq %.3g, log %.3g, twin %.3g; ", mpq, log, twin);
  detail += fmt("%.1fs (< 120s)", t);
  return {a && b && c && t < 120.0, detail};
}

Outcome entropy_check() {
  std::string detail;
  bool ok = true;
  for (int k : {2, 4, 6, 8}) {
    bbcq::CodeTensor c;
    const std::uint32_t n = 1u << k;
    for (std::uint32_t rep = 0; rep < 3; ++rep) {
      for (std::uint32_t i = 0; i < n; ++i) c.codes.push_back(i);
    }
    c.shape = {c.codes.size()};
    c.params = bbcq::make_uniform(k, 1.0, 0);
    const double h = bbcq::code_entropy(c);
    ok = ok && h == static_cast<double>(k);
    detail += fmt("k=%.0f: %.17g; ", k, h);
  }
  bbcq::CodeTensor flat;
  flat.codes.assign(100, 3);
  flat.shape = {100};
  flat.params = bbcq::make_uniform(4, 1.0, 0);
  const double h0 = bbcq::code_entropy(flat);
  ok = ok && h0 == 0.0;
  detail += fmt("constant: %.17g", h0);
  return {ok, detail};
}

// Runs gen -> calibrate -> eval through the CLI in `dir`.
bool run_pipeline(const std::string& cli, const fs::path& dir) {
  fs::create_directories(dir);
  const std::string d = dir.string();
  const std::string q = "\"" + cli + "\"";
  const std::string cmds[] = {
      q + " gen --blocks 2 --embed-dim 32 --seed 9 --model " + d + "/m.bin --calib " + d + "/c.bin --eval " + d +
          "/e.bin --eval-size 64",
      q + " calibrate --model " + d + "/m.bin --calib " + d + "/c.bin --out " + d + "/r.json --report " + d +
          "/cal.json --candidates 20",
      q + " eval --model " + d + "/m.bin --eval " + d + "/e.bin --result " + d + "/r.json --report " + d +
          "/ev.json",
  };
  for (const std::string& c : cmds) {
    if (std::system((c + " > /dev/null").c_str()) != 0) return false;
  }
  return true;
}

std::string without_wall_clock(const fs::path& p) {
  nlohmann::json j = nlohmann::json::parse(bbcq::read_file(p.string()));
  j.erase("wall_clock_seconds");
  return j.dump();
}

Outcome determinism(const std::string& cli) {
  const fs::path dir = fs::temp_directory_path() / "bbcq_acceptance_determinism";
  const char* binary[] = {"m.bin", "c.bin", "e.bin", "r.json"};
  const char* reports[] = {"cal.json", "ev.json"};
  fs::remove_all(dir);
  if (!run_pipeline(cli, dir)) return {false, "first pipeline run failed"};
  std::vector<std::string> first;
  for (const char* f : binary) first.push_back(bbcq::read_file((dir / f).string()));
  for (const char* f : reports) first.push_back(without_wall_clock(dir / f));
  if (!run_pipeline(cli, dir)) return {false, "second pipeline run failed"};
  std::vector<std::string> differ;
  std::size_t i = 0;
  for (const char* f : binary) {
    if (bbcq::read_file((dir / f).string()) != first[i++]) differ.push_back(f);
  }
  for (const char* f : reports) {
    if (without_wall_clock(dir / f) != first[i++]) differ.push_back(f);
  }
  fs::remove_all(dir);
  std::string detail = "two consecutive gen/calibrate/eval runs: ";
  if (differ.empty()) return {true, detail + "model, data, result and reports identical"};
  for (const auto& f : differ) detail += f + " ";
  return {false, detail + "differ"};
}

Outcome memory_contract() {
  bbcq::ModelSpec spec;
  spec.num_blocks = 8;
  spec.embed_dim = 16;
  spec.num_heads = 2;
  spec.mlp_ratio = 2.0;
  spec.patch_count = 4;
  spec.init_seed = 11;
  const bbcq::Model model = bbcq::init_model(spec);
  const bbcq::Dataset data = bbcq::generate_dataset(spec, 8, 11, 0);
  bbcq::CalibConfig cfg;
  cfg.candidates = 20;
  namespace ms = bbcq::memstats;
  ms::reset();
  (void)bbcq::calibrate(model, data, cfg);
  const auto block = ms::snapshot(ms::Kind::kBlockCache);
  const auto work = ms::snapshot(ms::Kind::kWorkspace);
  const auto layer = ms::snapshot(ms::Kind::kLayerCache);
  const auto tape = ms::snapshot(ms::Kind::kRecordingTape);
  const bool ok = block.peak <= 8 && work.peak <= 1 && layer.total == 0 && tape.peak <= 1;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "8 blocks: block caches peak %zu (<= 8), working blocks peak %zu (<= 1), layer caches %zu (0), "
                "recording tapes peak %zu (<= 1)",
                block.peak, work.peak, layer.total, tape.peak);
  return {ok, buf};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s PATH_TO_CLI\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];

  report(1, "metric oracle", metric_oracle);
  report(2, "search oracle", search_oracle);
  report(3, "gradients", gradient_check);
  report(4, "quantizer invariants", quantizer_suite);
  report(5, "bottom elimination", gamma_reductions);

  ToyRuns runs;
  bool have_w4a4 = false;
  auto ensure_w4a4 = [&] {
    if (have_w4a4) return;
    bbcq::CalibConfig cfg;
    cfg.w_bits = cfg.a_bits = 4;
    const auto t0 = Clock::now();
    runs.w4a4 = bbcq::calibrate(runs.model, runs.calib, cfg);
    runs.w4a4_seconds = seconds_since(t0);
    have_w4a4 = true;
  };
  report(6, "baseline domination", [&] {
    ensure_w4a4();
    return baseline_domination(runs);
  });
  report(7, "trend check", [&] {
    ensure_w4a4();
    return trend_check(runs);
  });
  report(8, "entropy", entropy_check);
  report(9, "determinism", [&] { return determinism(cli); });
  report(10, "memory contract", memory_contract);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
