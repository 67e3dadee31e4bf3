/* Copyright 2026 The bbcq Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface of the bbcq calibration engine. Objects are opaque handles
 * released with the matching *_free function. Every fallible call returns a
 * bbcq_status; on failure bbcq_last_error() describes the error for the
 * calling thread until its next failing call. Strings returned through char**
 * are owned by the caller and released with bbcq_string_free().
 */
#ifndef BBCQ_BBCQ_H_
#define BBCQ_BBCQ_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(BBCQ_BUILDING)
#define BBCQ_API __declspec(dllexport)
#else
#define BBCQ_API __declspec(dllimport)
#endif
#else
#define BBCQ_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bbcq_status {
  BBCQ_OK = 0,
  BBCQ_ERR_DIMENSION = 1,
  BBCQ_ERR_INDEX = 2,
  BBCQ_ERR_CONTRACT = 3,
  BBCQ_ERR_PARAMETER = 4,
  BBCQ_ERR_DEGENERATE_SCALE = 5,
  BBCQ_ERR_DEGENERATE_RANGE = 6,
  BBCQ_ERR_CONFIG = 7,
  BBCQ_ERR_IO = 8,
  BBCQ_ERR_FORMAT_MAGIC = 9,
  BBCQ_ERR_FORMAT_VERSION = 10,
  BBCQ_ERR_FORMAT_LENGTH = 11,
  BBCQ_ERR_FORMAT_MANIFEST = 12,
  BBCQ_ERR_INVALID_ARGUMENT = 13,
  BBCQ_ERR_INTERNAL = 14
} bbcq_status;

typedef struct bbcq_model bbcq_model;
typedef struct bbcq_dataset bbcq_dataset;
typedef struct bbcq_calib_result bbcq_calib_result;

typedef struct bbcq_model_spec {
  uint64_t num_blocks;
  uint64_t embed_dim;
  uint64_t num_heads;
  double mlp_ratio;
  uint64_t patch_count;
  uint64_t num_classes;
  uint64_t init_seed;
} bbcq_model_spec;

typedef enum bbcq_profile { BBCQ_PROFILE_CLASSIFICATION = 0, BBCQ_PROFILE_DETECTION = 1 } bbcq_profile;

typedef enum bbcq_softmax_quant {
  BBCQ_SOFTMAX_UNIFORM = 0,
  BBCQ_SOFTMAX_LOG = 1,
  BBCQ_SOFTMAX_TWIN = 2,
  BBCQ_SOFTMAX_MPQ = 3
} bbcq_softmax_quant;

typedef struct bbcq_calib_config {
  int profile; /* bbcq_profile */
  double alpha;
  double beta;
  uint64_t candidates;
  uint64_t rounds;
  double gamma;
  int w_bits;
  int a_bits;
  int softmax_quant; /* bbcq_softmax_quant */
  int dynamic_softmax;
  double twin_threshold; /* 0 selects the default split */
  uint64_t batch_size;   /* 0 uses the whole calibration file */
  int blocks_as_layers;
} bbcq_calib_config;

typedef struct bbcq_eval_metrics {
  double accuracy;
  double fp_agreement;
  double mean_loss;
  uint64_t samples;
} bbcq_eval_metrics;

/* Errors */
BBCQ_API const char* bbcq_status_name(bbcq_status status);
BBCQ_API const char* bbcq_last_error(void);
BBCQ_API const char* bbcq_version(void);
BBCQ_API void bbcq_string_free(char* s);

/* Models */
BBCQ_API void bbcq_model_spec_default(bbcq_model_spec* out);
BBCQ_API bbcq_status bbcq_model_create(const bbcq_model_spec* spec, bbcq_model** out);
BBCQ_API bbcq_status bbcq_model_load(const char* path, bbcq_model** out);
BBCQ_API bbcq_status bbcq_model_save(const bbcq_model* model, const char* path);
BBCQ_API bbcq_status bbcq_model_get_spec(const bbcq_model* model, bbcq_model_spec* out);
BBCQ_API void bbcq_model_free(bbcq_model* model);

/* Datasets */
BBCQ_API bbcq_status bbcq_dataset_generate(const bbcq_model_spec* spec, uint64_t count, uint64_t seed,
                                           uint64_t stream, bbcq_dataset** out);
BBCQ_API bbcq_status bbcq_dataset_load(const char* path, bbcq_dataset** out);
BBCQ_API bbcq_status bbcq_dataset_save(const bbcq_dataset* data, const char* path);
BBCQ_API uint64_t bbcq_dataset_size(const bbcq_dataset* data);
BBCQ_API void bbcq_dataset_free(bbcq_dataset* data);

/* Calibration */
BBCQ_API bbcq_status bbcq_calib_config_default(int profile, bbcq_calib_config* out);
BBCQ_API bbcq_status bbcq_calibrate(const bbcq_model* model, const bbcq_dataset* calib,
                                    const bbcq_calib_config* config, bbcq_calib_result** out);
BBCQ_API bbcq_status bbcq_calib_result_load(const char* path, bbcq_calib_result** out);
BBCQ_API bbcq_status bbcq_calib_result_save(const bbcq_calib_result* result, const char* path);
BBCQ_API bbcq_status bbcq_calib_result_to_json(const bbcq_calib_result* result, char** out_json);
BBCQ_API void bbcq_calib_result_free(bbcq_calib_result* result);

/* Reports. A negative wall_clock_seconds omits the wall-clock field. */
BBCQ_API bbcq_status bbcq_calibrate_report(const bbcq_model* model, const bbcq_dataset* calib,
                                           const bbcq_calib_result* result, double wall_clock_seconds,
                                           char** out_json);

/* result may be NULL for the full-precision model. */
BBCQ_API bbcq_status bbcq_evaluate(const bbcq_model* model, const bbcq_calib_result* result,
                                   const bbcq_dataset* data, bbcq_eval_metrics* out);

/* One row per result plus a leading full-precision row. labels may be NULL. */
BBCQ_API bbcq_status bbcq_eval_report(const bbcq_model* model, const bbcq_dataset* data,
                                      const bbcq_calib_result* const* results, const char* const* labels,
                                      size_t count, double wall_clock_seconds, char** out_json);

/* kind is "powerlaw", "gaussian" or "onehot". */
BBCQ_API bbcq_status bbcq_compare_softmax_synthetic(const char* kind, uint64_t rows, uint64_t len, int bits,
                                                    uint64_t seed, double wall_clock_seconds, char** out_json);

/* Attention scores of every block of model on data. */
BBCQ_API bbcq_status bbcq_compare_softmax_model(const bbcq_model* model, const bbcq_dataset* data, int bits,
                                                double wall_clock_seconds, char** out_json);

/* Describes a model, dataset or calibration result file. */
BBCQ_API bbcq_status bbcq_inspect_file(const char* path, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* BBCQ_BBCQ_H_ */
