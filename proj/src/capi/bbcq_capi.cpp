// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/bbcq.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "bbcq/analysis.hpp"
#include "bbcq/calib.hpp"
#include "bbcq/error.hpp"
#include "bbcq/io.hpp"
#include "bbcq/report.hpp"
#include "bbcq/vit.hpp"

struct bbcq_model {
  bbcq::Model model;
};

struct bbcq_dataset {
  bbcq::Dataset data;
};

struct bbcq_calib_result {
  bbcq::CalibResult result;
};

namespace {

thread_local std::string g_last_error;

bbcq_status status_of(bbcq::ErrorKind kind) {
  using bbcq::ErrorKind;
  switch (kind) {
    case ErrorKind::kDimension: return BBCQ_ERR_DIMENSION;
    case ErrorKind::kIndex: return BBCQ_ERR_INDEX;
    case ErrorKind::kContract: return BBCQ_ERR_CONTRACT;
    case ErrorKind::kParameter: return BBCQ_ERR_PARAMETER;
    case ErrorKind::kDegenerateScale: return BBCQ_ERR_DEGENERATE_SCALE;
    case ErrorKind::kDegenerateRange: return BBCQ_ERR_DEGENERATE_RANGE;
    case ErrorKind::kConfig: return BBCQ_ERR_CONFIG;
    case ErrorKind::kIo: return BBCQ_ERR_IO;
    case ErrorKind::kMagic: return BBCQ_ERR_FORMAT_MAGIC;
    case ErrorKind::kVersion: return BBCQ_ERR_FORMAT_VERSION;
    case ErrorKind::kLength: return BBCQ_ERR_FORMAT_LENGTH;
    case ErrorKind::kManifest: return BBCQ_ERR_FORMAT_MANIFEST;
  }
  return BBCQ_ERR_INTERNAL;
}

bbcq_status fail(bbcq_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <class Fn>
bbcq_status guarded(Fn&& fn) {
  try {
    fn();
    return BBCQ_OK;
  } catch (const bbcq::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(BBCQ_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(BBCQ_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(BBCQ_ERR_INTERNAL, "unknown error");
  }
}

#define BBCQ_REQUIRE(cond, what) \
  do {                           \
    if (!(cond)) return fail(BBCQ_ERR_INVALID_ARGUMENT, what); \
  } while (0)

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

bbcq::ModelSpec to_spec(const bbcq_model_spec& s) {
  bbcq::ModelSpec out;
  out.num_blocks = s.num_blocks;
  out.embed_dim = s.embed_dim;
  out.num_heads = s.num_heads;
  out.mlp_ratio = s.mlp_ratio;
  out.patch_count = s.patch_count;
  out.num_classes = s.num_classes;
  out.init_seed = s.init_seed;
  return out;
}

bbcq_model_spec from_spec(const bbcq::ModelSpec& s) {
  return bbcq_model_spec{s.num_blocks, s.embed_dim, s.num_heads, s.mlp_ratio, s.patch_count, s.num_classes,
                         s.init_seed};
}

bbcq::CalibConfig to_config(const bbcq_calib_config& c) {
  bbcq::CalibConfig out;
  if (c.profile != BBCQ_PROFILE_CLASSIFICATION && c.profile != BBCQ_PROFILE_DETECTION) {
    throw bbcq::Error(bbcq::ErrorKind::kConfig, "unknown profile " + std::to_string(c.profile));
  }
  if (c.softmax_quant < BBCQ_SOFTMAX_UNIFORM || c.softmax_quant > BBCQ_SOFTMAX_MPQ) {
    throw bbcq::Error(bbcq::ErrorKind::kConfig, "unknown softmax quantizer " + std::to_string(c.softmax_quant));
  }
  out.profile = static_cast<bbcq::Profile>(c.profile);
  out.alpha = c.alpha;
  out.beta = c.beta;
  out.candidates = c.candidates;
  out.rounds = c.rounds;
  out.gamma = c.gamma;
  out.w_bits = c.w_bits;
  out.a_bits = c.a_bits;
  out.softmax_quant = static_cast<bbcq::SoftmaxQuantizer>(c.softmax_quant);
  out.dynamic_softmax = c.dynamic_softmax != 0;
  out.twin_threshold = c.twin_threshold;
  out.batch_size = c.batch_size;
  out.blocks_as_layers = c.blocks_as_layers != 0;
  return out;
}

std::optional<double> wall(double seconds) {
  if (seconds < 0.0) return std::nullopt;
  return seconds;
}

}  // namespace

extern "C" {

const char* bbcq_status_name(bbcq_status status) {
  switch (status) {
    case BBCQ_OK: return "ok";
    case BBCQ_ERR_DIMENSION: return "dimension";
    case BBCQ_ERR_INDEX: return "index";
    case BBCQ_ERR_CONTRACT: return "contract";
    case BBCQ_ERR_PARAMETER: return "parameter";
    case BBCQ_ERR_DEGENERATE_SCALE: return "degenerate-scale";
    case BBCQ_ERR_DEGENERATE_RANGE: return "degenerate-range";
    case BBCQ_ERR_CONFIG: return "config";
    case BBCQ_ERR_IO: return "io";
    case BBCQ_ERR_FORMAT_MAGIC: return "format-magic";
    case BBCQ_ERR_FORMAT_VERSION: return "format-version";
    case BBCQ_ERR_FORMAT_LENGTH: return "format-length";
    case BBCQ_ERR_FORMAT_MANIFEST: return "format-manifest";
    case BBCQ_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case BBCQ_ERR_INTERNAL: return "internal";
  }
  return "internal";
}

const char* bbcq_last_error(void) { return g_last_error.c_str(); }

const char* bbcq_version(void) { return BBCQ_VERSION; }

void bbcq_string_free(char* s) { std::free(s); }

void bbcq_model_spec_default(bbcq_model_spec* out) {
  if (out) *out = from_spec(bbcq::ModelSpec{});
}

bbcq_status bbcq_model_create(const bbcq_model_spec* spec, bbcq_model** out) {
  BBCQ_REQUIRE(spec && out, "bbcq_model_create: null argument");
  *out = nullptr;
  return guarded([&] { *out = new bbcq_model{bbcq::init_model(to_spec(*spec))}; });
}

bbcq_status bbcq_model_load(const char* path, bbcq_model** out) {
  BBCQ_REQUIRE(path && out, "bbcq_model_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new bbcq_model{bbcq::deserialize_model(bbcq::read_file(path))}; });
}

bbcq_status bbcq_model_save(const bbcq_model* model, const char* path) {
  BBCQ_REQUIRE(model && path, "bbcq_model_save: null argument");
  return guarded([&] { bbcq::write_file(path, bbcq::serialize_model(model->model)); });
}

bbcq_status bbcq_model_get_spec(const bbcq_model* model, bbcq_model_spec* out) {
  BBCQ_REQUIRE(model && out, "bbcq_model_get_spec: null argument");
  *out = from_spec(model->model.spec);
  return BBCQ_OK;
}

void bbcq_model_free(bbcq_model* model) { delete model; }

bbcq_status bbcq_dataset_generate(const bbcq_model_spec* spec, uint64_t count, uint64_t seed, uint64_t stream,
                                  bbcq_dataset** out) {
  BBCQ_REQUIRE(spec && out, "bbcq_dataset_generate: null argument");
  *out = nullptr;
  return guarded([&] { *out = new bbcq_dataset{bbcq::generate_dataset(to_spec(*spec), count, seed, stream)}; });
}

bbcq_status bbcq_dataset_load(const char* path, bbcq_dataset** out) {
  BBCQ_REQUIRE(path && out, "bbcq_dataset_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new bbcq_dataset{bbcq::deserialize_dataset(bbcq::read_file(path))}; });
}

bbcq_status bbcq_dataset_save(const bbcq_dataset* data, const char* path) {
  BBCQ_REQUIRE(data && path, "bbcq_dataset_save: null argument");
  return guarded([&] { bbcq::write_file(path, bbcq::serialize_dataset(data->data)); });
}

uint64_t bbcq_dataset_size(const bbcq_dataset* data) { return data ? data->data.size() : 0; }

void bbcq_dataset_free(bbcq_dataset* data) { delete data; }

bbcq_status bbcq_calib_config_default(int profile, bbcq_calib_config* out) {
  BBCQ_REQUIRE(out, "bbcq_calib_config_default: null argument");
  if (profile != BBCQ_PROFILE_CLASSIFICATION && profile != BBCQ_PROFILE_DETECTION) {
    return fail(BBCQ_ERR_CONFIG, "unknown profile " + std::to_string(profile));
  }
  const bbcq::CalibConfig c = bbcq::CalibConfig::for_profile(static_cast<bbcq::Profile>(profile));
  *out = bbcq_calib_config{static_cast<int>(c.profile),
                           c.alpha,
                           c.beta,
                           c.candidates,
                           c.rounds,
                           c.gamma,
                           c.w_bits,
                           c.a_bits,
                           static_cast<int>(c.softmax_quant),
                           c.dynamic_softmax ? 1 : 0,
                           c.twin_threshold,
                           c.batch_size,
                           c.blocks_as_layers ? 1 : 0};
  return BBCQ_OK;
}

bbcq_status bbcq_calibrate(const bbcq_model* model, const bbcq_dataset* calib, const bbcq_calib_config* config,
                           bbcq_calib_result** out) {
  BBCQ_REQUIRE(model && calib && config && out, "bbcq_calibrate: null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new bbcq_calib_result{bbcq::calibrate(model->model, calib->data, to_config(*config))};
  });
}

bbcq_status bbcq_calib_result_load(const char* path, bbcq_calib_result** out) {
  BBCQ_REQUIRE(path && out, "bbcq_calib_result_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new bbcq_calib_result{bbcq::calib_result_from_json(bbcq::read_file(path))}; });
}

bbcq_status bbcq_calib_result_save(const bbcq_calib_result* result, const char* path) {
  BBCQ_REQUIRE(result && path, "bbcq_calib_result_save: null argument");
  return guarded([&] { bbcq::write_file(path, bbcq::calib_result_to_json(result->result)); });
}

bbcq_status bbcq_calib_result_to_json(const bbcq_calib_result* result, char** out_json) {
  BBCQ_REQUIRE(result && out_json, "bbcq_calib_result_to_json: null argument");
  *out_json = nullptr;
  return guarded([&] { *out_json = dup_string(bbcq::calib_result_to_json(result->result)); });
}

void bbcq_calib_result_free(bbcq_calib_result* result) { delete result; }

bbcq_status bbcq_calibrate_report(const bbcq_model* model, const bbcq_dataset* calib,
                                  const bbcq_calib_result* result, double wall_clock_seconds, char** out_json) {
  BBCQ_REQUIRE(model && calib && result && out_json, "bbcq_calibrate_report: null argument");
  *out_json = nullptr;
  return guarded([&] {
    *out_json = dup_string(bbcq::calibrate_report(model->model, calib->data, result->result, wall(wall_clock_seconds)));
  });
}

bbcq_status bbcq_evaluate(const bbcq_model* model, const bbcq_calib_result* result, const bbcq_dataset* data,
                          bbcq_eval_metrics* out) {
  BBCQ_REQUIRE(model && data && out, "bbcq_evaluate: null argument");
  return guarded([&] {
    std::optional<bbcq::QuantState> state;
    if (result) state = bbcq::make_quant_state(result->result, model->model.spec);
    const bbcq::EvalMetrics m = bbcq::evaluate(model->model, state ? &*state : nullptr, data->data);
    *out = bbcq_eval_metrics{m.accuracy, m.agreement, m.mean_loss, m.samples};
  });
}

bbcq_status bbcq_eval_report(const bbcq_model* model, const bbcq_dataset* data,
                             const bbcq_calib_result* const* results, const char* const* labels, size_t count,
                             double wall_clock_seconds, char** out_json) {
  BBCQ_REQUIRE(model && data && out_json, "bbcq_eval_report: null argument");
  BBCQ_REQUIRE(count == 0 || results, "bbcq_eval_report: null result list");
  *out_json = nullptr;
  return guarded([&] {
    std::vector<bbcq::EvalEntry> entries;
    entries.push_back({"fp", nullptr, bbcq::evaluate(model->model, nullptr, data->data)});
    for (size_t i = 0; i < count; ++i) {
      if (!results[i]) throw bbcq::Error(bbcq::ErrorKind::kContract, "null calibration result in list");
      const bbcq::QuantState state = bbcq::make_quant_state(results[i]->result, model->model.spec);
      std::string label = labels && labels[i] ? labels[i] : "result" + std::to_string(i);
      entries.push_back({std::move(label), &results[i]->result, bbcq::evaluate(model->model, &state, data->data)});
    }
    *out_json = dup_string(bbcq::eval_report(model->model.spec, entries, wall(wall_clock_seconds)));
  });
}

bbcq_status bbcq_compare_softmax_synthetic(const char* kind, uint64_t rows, uint64_t len, int bits, uint64_t seed,
                                           double wall_clock_seconds, char** out_json) {
  BBCQ_REQUIRE(kind && out_json, "bbcq_compare_softmax_synthetic: null argument");
  *out_json = nullptr;
  return guarded([&] {
    const auto k = bbcq::parse_synthetic_kind(kind);
    if (!k) throw bbcq::Error(bbcq::ErrorKind::kConfig, std::string("unknown synthetic kind '") + kind + "'");
    const bbcq::Tensor scores = bbcq::synthetic_scores(*k, rows, len, seed);
    const auto report_rows = bbcq::compare_softmax_quantizers(scores, bits);
    *out_json = dup_string(bbcq::compare_softmax_report(std::string("synthetic:") + kind, bits, seed, report_rows,
                                                        wall(wall_clock_seconds)));
  });
}

bbcq_status bbcq_compare_softmax_model(const bbcq_model* model, const bbcq_dataset* data, int bits,
                                       double wall_clock_seconds, char** out_json) {
  BBCQ_REQUIRE(model && data && out_json, "bbcq_compare_softmax_model: null argument");
  *out_json = nullptr;
  return guarded([&] {
    bbcq::check_dataset(data->data, model->model.spec);
    std::vector<bbcq::QuantReportRow> rows;
    const auto scores = bbcq::attention_scores(model->model, data->data.inputs);
    for (std::size_t b = 0; b < scores.size(); ++b) {
      const std::string site = bbcq::site_id({static_cast<int>(b), bbcq::SiteKind::kAttnApply, bbcq::Operand::kA});
      for (auto& r : bbcq::compare_softmax_quantizers(scores[b], bits, site)) rows.push_back(std::move(r));
    }
    *out_json = dup_string(bbcq::compare_softmax_report("model", bits, 0, rows, wall(wall_clock_seconds)));
  });
}

bbcq_status bbcq_inspect_file(const char* path, char** out_json) {
  BBCQ_REQUIRE(path && out_json, "bbcq_inspect_file: null argument");
  *out_json = nullptr;
  return guarded([&] { *out_json = dup_string(bbcq::inspect_report(bbcq::read_file(path))); });
}

}  // extern "C"
