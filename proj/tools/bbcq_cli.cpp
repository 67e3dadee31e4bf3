// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bbcq/bbcq.h"

namespace {

struct CliError {
  std::string category;
  std::string message;
};

void check(bbcq_status st) {
  if (st != BBCQ_OK) throw CliError{bbcq_status_name(st), bbcq_last_error()};
}

struct ModelDeleter {
  void operator()(bbcq_model* p) const { bbcq_model_free(p); }
};
struct DatasetDeleter {
  void operator()(bbcq_dataset* p) const { bbcq_dataset_free(p); }
};
struct ResultDeleter {
  void operator()(bbcq_calib_result* p) const { bbcq_calib_result_free(p); }
};
struct StringDeleter {
  void operator()(char* p) const { bbcq_string_free(p); }
};
using ModelPtr = std::unique_ptr<bbcq_model, ModelDeleter>;
using DatasetPtr = std::unique_ptr<bbcq_dataset, DatasetDeleter>;
using ResultPtr = std::unique_ptr<bbcq_calib_result, ResultDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

ModelPtr load_model(const std::string& path) {
  bbcq_model* m = nullptr;
  check(bbcq_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

DatasetPtr load_dataset(const std::string& path) {
  bbcq_dataset* d = nullptr;
  check(bbcq_dataset_load(path.c_str(), &d));
  return DatasetPtr(d);
}

void emit(const char* json, const std::string& path) {
  if (path.empty() || path == "-") {
    std::fputs(json, stdout);
    return;
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw CliError{"io", "cannot open '" + path + "' for writing"};
  const bool ok = std::fputs(json, f) >= 0;
  if (std::fclose(f) != 0 || !ok) throw CliError{"io", "write failed for '" + path + "'"};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int choice_index(const std::string& value, const std::vector<std::string>& names, const char* flag) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == value) return static_cast<int>(i);
  }
  throw CliError{"config", std::string("invalid value '") + value + "' for " + flag};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-training quantization calibration for small vision transformers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", bbcq_version());

  // gen
  bbcq_model_spec spec;
  bbcq_model_spec_default(&spec);
  std::uint64_t seed = 0;
  std::string model_path, calib_path, eval_path;
  std::uint64_t calib_size = 32, eval_size = 256;
  auto* gen = app.add_subcommand("gen", "Write a seeded model and synthetic calibration/eval data");
  gen->add_option("--blocks", spec.num_blocks, "Transformer blocks")->capture_default_str();
  gen->add_option("--embed-dim", spec.embed_dim, "Embedding width")->capture_default_str();
  gen->add_option("--heads", spec.num_heads, "Attention heads")->capture_default_str();
  gen->add_option("--mlp-ratio", spec.mlp_ratio, "MLP hidden width / embedding width")->capture_default_str();
  gen->add_option("--patches", spec.patch_count, "Patches per sample")->capture_default_str();
  gen->add_option("--classes", spec.num_classes, "Classes")->capture_default_str();
  gen->add_option("--seed", seed, "Seed for weights and data")->capture_default_str();
  gen->add_option("--model", model_path, "Output model file")->required();
  gen->add_option("--calib", calib_path, "Output calibration data file");
  gen->add_option("--eval", eval_path, "Output evaluation data file");
  gen->add_option("--calib-size", calib_size, "Calibration samples")->capture_default_str();
  gen->add_option("--eval-size", eval_size, "Evaluation samples")->capture_default_str();

  // calibrate
  std::string profile = "classification", softmax_quant = "mpq", out_path, report_path;
  double alpha = 0, beta = 0, gamma = 0, twin_threshold = 0;
  std::uint64_t candidates = 0, rounds = 0, batch_size = 0;
  int w_bits = 0, a_bits = 0;
  bool dynamic_softmax = false, blocks_as_layers = false;
  auto* cal = app.add_subcommand("calibrate", "Search quantization scales for every matmul operand");
  cal->add_option("--model", model_path, "Model file")->required();
  cal->add_option("--calib", calib_path, "Calibration data file")->required();
  cal->add_option("--out", out_path, "Calibration result (JSON)")->required();
  cal->add_option("--report", report_path, "Report file (default: stdout)");
  auto* o_profile = cal->add_option("--profile", profile, "classification or detection")->capture_default_str();
  auto* o_wbits = cal->add_option("--wbits", w_bits, "Weight bit-width [2, 8]");
  auto* o_abits = cal->add_option("--abits", a_bits, "Activation bit-width [2, 8]");
  auto* o_gamma = cal->add_option("--gamma", gamma, "Bottom-elimination percentile [0, 100]");
  auto* o_alpha = cal->add_option("--alpha", alpha, "Search range lower multiplier");
  auto* o_beta = cal->add_option("--beta", beta, "Search range upper multiplier");
  auto* o_cand = cal->add_option("--candidates", candidates, "Scale candidates per search");
  auto* o_rounds = cal->add_option("--rounds", rounds, "Alternation rounds");
  auto* o_batch = cal->add_option("--batch-size", batch_size, "Calibration samples used (0 = all)");
  auto* o_twin = cal->add_option("--twin-threshold", twin_threshold, "Twin-uniform split (0 = default)");
  cal->add_option("--softmax-quant", softmax_quant, "uniform, log, twin or mpq")->capture_default_str();
  cal->add_flag("--dynamic-softmax", dynamic_softmax, "Rescale post-Softmax quantizers to the live maximum");
  cal->add_flag("--blocks-as-layers", blocks_as_layers, "Layerwise baseline: measure error at each layer output");

  // eval
  std::vector<std::string> result_paths;
  auto* ev = app.add_subcommand("eval", "Accuracy and full-precision agreement of calibrated models");
  ev->add_option("--model", model_path, "Model file")->required();
  ev->add_option("--eval", eval_path, "Evaluation data file")->required();
  ev->add_option("--result", result_paths, "Calibration result (repeatable)");
  ev->add_option("--report", report_path, "Report file (default: stdout)");

  // compare-softmax
  int bits = 4;
  std::string synthetic = "powerlaw";
  std::uint64_t rows = 256, len = 64;
  auto* cmp = app.add_subcommand("compare-softmax", "Compare post-Softmax quantizers");
  cmp->add_option("--bits", bits, "Bit-width")->capture_default_str();
  auto* o_synth = cmp->add_option("--synthetic", synthetic, "powerlaw, gaussian or onehot")->capture_default_str();
  cmp->add_option("--rows", rows, "Synthetic rows")->capture_default_str();
  cmp->add_option("--len", len, "Synthetic row length")->capture_default_str();
  cmp->add_option("--seed", seed, "Synthetic seed")->capture_default_str();
  auto* o_cmp_model = cmp->add_option("--model", model_path, "Use this model's attention instead of synthetic rows");
  cmp->add_option("--calib,--eval", calib_path, "Data file for --model");
  cmp->add_option("--report,--out", report_path, "Report file (default: stdout)");
  o_cmp_model->excludes(o_synth);

  // inspect
  std::string inspect_path;
  auto* ins = app.add_subcommand("inspect", "Describe a model, data or calibration result file");
  ins->add_option("file", inspect_path, "File to describe")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "bbcq: error[usage]: %s\n", e.what());
    return 2;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    if (gen->parsed()) {
      spec.init_seed = seed;
      bbcq_model* m = nullptr;
      check(bbcq_model_create(&spec, &m));
      ModelPtr model(m);
      check(bbcq_model_save(model.get(), model_path.c_str()));
      const std::pair<const std::string*, std::uint64_t> splits[] = {{&calib_path, calib_size},
                                                                     {&eval_path, eval_size}};
      for (std::uint64_t stream = 0; stream < 2; ++stream) {
        const auto& [path, size] = splits[stream];
        if (path->empty()) continue;
        bbcq_dataset* d = nullptr;
        check(bbcq_dataset_generate(&spec, size, seed, stream, &d));
        DatasetPtr data(d);
        check(bbcq_dataset_save(data.get(), path->c_str()));
      }
    } else if (cal->parsed()) {
      bbcq_calib_config cfg;
      check(bbcq_calib_config_default(choice_index(profile, {"classification", "detection"}, "--profile"), &cfg));
      if (*o_wbits) cfg.w_bits = w_bits;
      if (*o_abits) cfg.a_bits = a_bits;
      if (*o_gamma) cfg.gamma = gamma;
      if (*o_alpha) cfg.alpha = alpha;
      if (*o_beta) cfg.beta = beta;
      if (*o_cand) cfg.candidates = candidates;
      if (*o_rounds) cfg.rounds = rounds;
      if (*o_batch) cfg.batch_size = batch_size;
      if (*o_twin) cfg.twin_threshold = twin_threshold;
      (void)o_profile;
      cfg.softmax_quant = choice_index(softmax_quant, {"uniform", "log", "twin", "mpq"}, "--softmax-quant");
      cfg.dynamic_softmax = dynamic_softmax;
      cfg.blocks_as_layers = blocks_as_layers;

      ModelPtr model = load_model(model_path);
      DatasetPtr data = load_dataset(calib_path);
      bbcq_calib_result* r = nullptr;
      check(bbcq_calibrate(model.get(), data.get(), &cfg, &r));
      ResultPtr result(r);
      check(bbcq_calib_result_save(result.get(), out_path.c_str()));
      char* json = nullptr;
      check(bbcq_calibrate_report(model.get(), data.get(), result.get(), seconds_since(start), &json));
      StringPtr text(json);
      emit(text.get(), report_path);
    } else if (ev->parsed()) {
      ModelPtr model = load_model(model_path);
      DatasetPtr data = load_dataset(eval_path);
      std::vector<ResultPtr> results;
      std::vector<const bbcq_calib_result*> raw;
      std::vector<const char*> labels;
      for (const std::string& p : result_paths) {
        bbcq_calib_result* r = nullptr;
        check(bbcq_calib_result_load(p.c_str(), &r));
        results.emplace_back(r);
        raw.push_back(r);
        labels.push_back(p.c_str());
      }
      char* json = nullptr;
      check(bbcq_eval_report(model.get(), data.get(), raw.data(), labels.data(), raw.size(), seconds_since(start),
                             &json));
      StringPtr text(json);
      emit(text.get(), report_path);
    } else if (cmp->parsed()) {
      char* json = nullptr;
      if (!model_path.empty()) {
        if (calib_path.empty()) throw CliError{"config", "--model needs a data file (--calib)"};
        ModelPtr model = load_model(model_path);
        DatasetPtr data = load_dataset(calib_path);
        check(bbcq_compare_softmax_model(model.get(), data.get(), bits, seconds_since(start), &json));
      } else {
        check(bbcq_compare_softmax_synthetic(synthetic.c_str(), rows, len, bits, seed, seconds_since(start), &json));
      }
      StringPtr text(json);
      emit(text.get(), report_path);
    } else if (ins->parsed()) {
      char* json = nullptr;
      check(bbcq_inspect_file(inspect_path.c_str(), &json));
      StringPtr text(json);
      emit(text.get(), "");
    }
  } catch (const CliError& e) {
    std::string msg = e.message;
    for (char& c : msg) {
      if (c == '\n' || c == '\r') c = ' ';
    }
    std::fprintf(stderr, "bbcq: error[%s]: %s\n", e.category.c_str(), msg.c_str());
    return 1;
  }
  return 0;
}
