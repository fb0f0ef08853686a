/* C interface to the GhostNet-style re-parameterization library.
 *
 * All functions return gnv3_status; on non-OK the message is retrievable via
 * gnv3_last_error() (thread-local). Handles are opaque and must be released
 * with the matching _free call. */

#ifndef GNV3_H_
#define GNV3_H_

#include <stdint.h>

#if defined(_WIN32)
#define GNV3_API __declspec(dllexport)
#else
#define GNV3_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gnv3_status {
  GNV3_OK = 0,
  GNV3_INVALID_ARGUMENT = 1,
  GNV3_SHAPE_MISMATCH = 2,
  GNV3_IO_ERROR = 3,
  GNV3_BAD_FORMAT = 4,
  GNV3_NUMERIC_ERROR = 5,
  GNV3_INTERNAL_ERROR = 6,
} gnv3_status;

typedef struct gnv3_model gnv3_model;
typedef struct gnv3_dataset gnv3_dataset;

/* Message for the most recent failure on this thread; never NULL. */
GNV3_API const char* gnv3_last_error(void);

/* <= 0 selects the hardware thread count. */
GNV3_API void gnv3_set_threads(int threads);

/* ------------------------------------------------------------------ model */

/* config_text: INI text with a [model] section (preset/classes/width/...). */
GNV3_API gnv3_status gnv3_model_build(const char* config_text, uint64_t seed,
                                      gnv3_model** out);
GNV3_API gnv3_status gnv3_model_load(const char* path, gnv3_model** out);
GNV3_API gnv3_status gnv3_model_save(gnv3_model* m, const char* path);
/* Produces a new, folded model; folding a folded model is a no-op copy. */
GNV3_API gnv3_status gnv3_model_fold(const gnv3_model* m, gnv3_model** out);
GNV3_API void gnv3_model_free(gnv3_model* m);

GNV3_API gnv3_status gnv3_model_params(gnv3_model* m, int64_t* out);
GNV3_API gnv3_status gnv3_model_flops(gnv3_model* m, int64_t h, int64_t w,
                                      int64_t* out);
GNV3_API gnv3_status gnv3_model_classes(const gnv3_model* m, int32_t* out);
GNV3_API gnv3_status gnv3_model_in_channels(const gnv3_model* m, int32_t* out);
GNV3_API gnv3_status gnv3_model_is_folded(const gnv3_model* m, int32_t* out);

/* Inference. input: n*c*h*w floats (NCHW); logits: n*classes floats. */
GNV3_API gnv3_status gnv3_model_forward(const gnv3_model* m, const float* input,
                                        int64_t n, int64_t c, int64_t h,
                                        int64_t w, float* logits);

/* Max relative logit difference between two models over n random inputs. */
GNV3_API gnv3_status gnv3_verify_fold(const gnv3_model* a, const gnv3_model* b,
                                      int64_t n_inputs, int64_t h, int64_t w,
                                      uint64_t seed, double* max_rel_err);

typedef struct gnv3_bench_result {
  int64_t runs, warmup;
  double median_ms, p10_ms, p90_ms, mean_ms;
  int64_t params, flops;
} gnv3_bench_result;

/* Single-threaded forward latency on a random (1, c, h, w) input. */
GNV3_API gnv3_status gnv3_bench(gnv3_model* m, int64_t h, int64_t w,
                                int64_t runs, int64_t warmup, uint64_t seed,
                                gnv3_bench_result* out);

/* ---------------------------------------------------------------- dataset */

GNV3_API gnv3_status gnv3_dataset_open(const char* path, gnv3_dataset** out);
GNV3_API void gnv3_dataset_free(gnv3_dataset* d);
GNV3_API gnv3_status gnv3_dataset_info(const gnv3_dataset* d, int64_t* count,
                                       int64_t* channels, int64_t* height,
                                       int64_t* width, int64_t* classes);

/* Writes a synthetic oriented-grating dataset file. */
GNV3_API gnv3_status gnv3_dataset_synth(int64_t classes, int64_t per_class,
                                        int64_t height, int64_t width,
                                        uint64_t seed, double noise_sigma,
                                        double label_noise, const char* path);

/* Builds a dataset file from per-class subdirectories of PPM/PGM images. */
GNV3_API gnv3_status gnv3_dataset_ingest(const char* dir, int64_t height,
                                         int64_t width, const char* path);

/* ------------------------------------------------------------------ tasks */

GNV3_API gnv3_status gnv3_eval(const gnv3_model* m, const gnv3_dataset* d,
                               int64_t batch, double* top1, double* top5);

/* Writes the model's logits for every dataset sample to a logit file. */
GNV3_API gnv3_status gnv3_export_logits(const gnv3_model* m,
                                        const gnv3_dataset* d, int64_t batch,
                                        const char* path);

/* Full training pipeline from INI config text: loads datasets (and teacher,
 * if configured), trains, writes the checkpoint + metrics CSV named in the
 * config. seed_override >= 0 replaces [train] seed. verbose != 0 logs one
 * line per epoch to stdout. */
GNV3_API gnv3_status gnv3_train(const char* config_text, int64_t seed_override,
                                int verbose, double* final_top1);

#ifdef __cplusplus
}
#endif

#endif /* GNV3_H_ */
