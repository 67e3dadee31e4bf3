// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/report.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include <json.hpp>

#include "bbcq/error.hpp"
#include "bbcq/ops.hpp"
#include "json_util.hpp"

#ifndef BBCQ_VERSION
#define BBCQ_VERSION "0.0.0"
#endif

namespace bbcq {
namespace {

using nlohmann::json;

json header(std::string_view command, std::optional<double> wall) {
  json j{{"schema", kReportSchema}, {"command", command}, {"tool_version", BBCQ_VERSION}};
  if (wall) j["wall_clock_seconds"] = *wall;
  return j;
}

/// Non-finite values have no JSON form; they are written as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json config_json(const CalibConfig& c) {
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

json notes_json(const CalibConfig& c) {
  return json{{"bias_quantized", false},
              {"softmax_scale_mode", c.dynamic_softmax ? "dynamic" : "static"},
              {"search_metric", c.blocks_as_layers ? "layer-output" : "block-output"},
              {"search_block_input", "full-precision cache"},
              {"first_order_term", "dropped"}};
}

}  // namespace

std::string trace_digest(const std::vector<std::vector<double>>& trace) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& round : trace) {
    for (double v : round) {
      unsigned char bytes[8];
      std::memcpy(bytes, &v, 8);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
      }
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string calibrate_report(const Model& model, const Dataset& calib, const CalibResult& result,
                             std::optional<double> wall_clock_seconds) {
  const Dataset batch = calibration_batch(calib, result.config);
  const FpCache cache = cache_fp_pass(model, batch.inputs, batch.labels);
  const QuantState state = make_quant_state(result, model.spec);

  json sites = json::array();
  for (const SiteResult& sr : result.sites) {
    const QuantParams& p = sr.params;
    json s{{"site", site_id(sr.site)},
           {"bits", p.bits},
           {"scale", p.scale},
           {"zero_point", p.zero_point},
           {"scheme", scheme_name(p.scheme)},
           {"chosen_index", sr.chosen_index},
           {"searched", sr.searched},
           {"rounds", sr.trace.size()},
           {"chosen_metric", number(sr.chosen_metric())},
           {"trace_digest", trace_digest(sr.trace)}};
    s["minmax_metric"] = sr.searched ? number(sr.trace.back().back()) : json(nullptr);
    if (p.scheme != Scheme::kAffineUniform) {
      s["calibrated_max"] = p.range_max;
      if (p.scheme == Scheme::kTwinUniform) s["threshold"] = p.threshold;
    }
    sites.push_back(std::move(s));
  }

  json stats = json::array();
  for (const ErrorStats& es : model_error_stats(model, cache, state, result.config.gamma)) {
    json pct = json::object();
    for (std::size_t i = 0; i < kErrorPercentiles.size(); ++i) {
      pct["p" + std::to_string(static_cast<int>(kErrorPercentiles[i]))] = es.percentiles[i];
    }
    stats.push_back(json{{"block", es.block},
                         {"bin_edges", es.bin_edges},
                         {"weights", es.weights},
                         {"counts", es.counts},
                         {"percentiles", pct},
                         {"gamma", es.gamma},
                         {"threshold", number(es.threshold)},
                         {"metric", es.metric}});
  }

  json doc = header("calibrate", wall_clock_seconds);
  doc["model_spec"] = detail::spec_to_json(model.spec);
  doc["config"] = config_json(result.config);
  doc["notes"] = notes_json(result.config);
  doc["calibration_samples"] = batch.size();
  doc["fp_loss"] = result.fp_loss;
  doc["sites"] = std::move(sites);
  doc["total_block_metric"] = total_block_metric(model, cache, state, result.config.gamma);
  doc["error_stats"] = std::move(stats);
  return doc.dump(1) + "\n";
}

std::string eval_report(const ModelSpec& spec, std::span<const EvalEntry> entries,
                        std::optional<double> wall_clock_seconds) {
  json rows = json::array();
  for (const EvalEntry& e : entries) {
    json r{{"label", e.label},
           {"accuracy", e.metrics.accuracy},
           {"fp_agreement", e.metrics.agreement},
           {"mean_loss", e.metrics.mean_loss},
           {"samples", e.metrics.samples}};
    if (e.result) {
      r["wbits"] = e.result->config.w_bits;
      r["abits"] = e.result->config.a_bits;
      r["softmax_quant"] = softmax_quantizer_name(e.result->config.softmax_quant);
      r["softmax_scale_mode"] = e.result->config.dynamic_softmax ? "dynamic" : "static";
      r["quantized"] = true;
    } else {
      r["quantized"] = false;
    }
    rows.push_back(std::move(r));
  }
  json doc = header("eval", wall_clock_seconds);
  doc["model_spec"] = detail::spec_to_json(spec);
  doc["results"] = std::move(rows);
  return doc.dump(1) + "\n";
}

std::string compare_softmax_report(std::string_view source, int bits, std::uint64_t seed,
                                   std::span<const QuantReportRow> rows, std::optional<double> wall_clock_seconds) {
  json out = json::array();
  for (const QuantReportRow& r : rows) {
    out.push_back(json{{"site", r.site},
                       {"quantizer", r.quantizer},
                       {"bits", r.bits},
                       {"calibrated_max", r.calibrated_max},
                       {"entropy_bits", r.entropy},
                       {"mean_abs_error", r.mean_abs_error},
                       {"max_abs_error", r.max_abs_error},
                       {"max_value_error", r.max_value_error},
                       {"argmax_preservation", r.argmax_preservation},
                       {"top_value_exact", r.top_value_exact}});
  }
  json doc = header("compare-softmax", wall_clock_seconds);
  doc["source"] = source;
  doc["bits"] = bits;
  doc["seed"] = seed;
  doc["rows"] = std::move(out);
  return doc.dump(1) + "\n";
}

std::string inspect_report(std::string_view bytes) {
  json doc = header("inspect", std::nullopt);
  if (!bytes.empty() && bytes.front() == '{') {
    const CalibResult r = calib_result_from_json(bytes);
    doc["kind"] = "calib-result";
    doc["model_spec"] = detail::spec_to_json(r.spec);
    doc["config"] = config_json(r.config);
    doc["sites"] = r.sites.size();
    return doc.dump(1) + "\n";
  }
  const Container c = read_container(bytes);
  doc["kind"] = c.kind;
  doc["model_spec"] = detail::spec_to_json(c.spec);
  json tensors = json::array();
  for (const ContainerTensor& t : c.tensors) {
    json e{{"name", t.name}, {"shape", t.shape}, {"dtype", t.dtype == DType::kF64 ? "f64" : "i64"}};
    if (t.dtype == DType::kF64) {
      const Tensor v(t.shape, t.f64);
      e["min"] = ops::min_value(v);
      e["max"] = ops::max_value(v);
    }
    tensors.push_back(std::move(e));
  }
  doc["tensors"] = std::move(tensors);
  return doc.dump(1) + "\n";
}

}  // namespace bbcq
