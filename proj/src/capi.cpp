#include "gnv3.h"

#include <cstring>
#include <iostream>

#include "gnv3/bench.hpp"
#include "gnv3/checkpoint.hpp"
#include "gnv3/common.hpp"
#include "gnv3/dataset.hpp"
#include "gnv3/parallel.hpp"
#include "gnv3/train.hpp"

struct gnv3_model {
  std::unique_ptr<gnv3::Model> impl;
};

struct gnv3_dataset {
  gnv3::Dataset impl;
};

namespace {

thread_local std::string g_last_error = "ok";

gnv3_status map_code(gnv3::ErrorCode code) {
  switch (code) {
    case gnv3::ErrorCode::ok: return GNV3_OK;
    case gnv3::ErrorCode::invalid_argument: return GNV3_INVALID_ARGUMENT;
    case gnv3::ErrorCode::shape_mismatch: return GNV3_SHAPE_MISMATCH;
    case gnv3::ErrorCode::io_error: return GNV3_IO_ERROR;
    case gnv3::ErrorCode::bad_format: return GNV3_BAD_FORMAT;
    case gnv3::ErrorCode::numeric_error: return GNV3_NUMERIC_ERROR;
    case gnv3::ErrorCode::internal: return GNV3_INTERNAL_ERROR;
  }
  return GNV3_INTERNAL_ERROR;
}

// Runs `fn`, converting exceptions into status codes + last-error text.
template <typename Fn>
gnv3_status guarded(Fn&& fn) {
  try {
    fn();
    return GNV3_OK;
  } catch (const gnv3::Error& e) {
    g_last_error = e.what();
    return map_code(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GNV3_INTERNAL_ERROR;
  } catch (...) {
    g_last_error = "unknown error";
    return GNV3_INTERNAL_ERROR;
  }
}

gnv3_status require(bool cond, const char* msg) {
  if (cond) return GNV3_OK;
  g_last_error = msg;
  return GNV3_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* gnv3_last_error(void) { return g_last_error.c_str(); }

void gnv3_set_threads(int threads) { gnv3::set_num_threads(threads); }

gnv3_status gnv3_model_build(const char* config_text, uint64_t seed,
                             gnv3_model** out) {
  if (auto s = require(config_text && out, "null argument")) return s;
  return guarded([&] {
    const gnv3::ModelSpec spec =
        gnv3::spec_from_ini(gnv3::IniFile::parse(config_text));
    *out = new gnv3_model{gnv3::build_model(spec, seed)};
  });
}

gnv3_status gnv3_model_load(const char* path, gnv3_model** out) {
  if (auto s = require(path && out, "null argument")) return s;
  return guarded([&] { *out = new gnv3_model{gnv3::load_checkpoint(path)}; });
}

gnv3_status gnv3_model_save(gnv3_model* m, const char* path) {
  if (auto s = require(m && path, "null argument")) return s;
  return guarded([&] { gnv3::save_checkpoint(*m->impl, path); });
}

gnv3_status gnv3_model_fold(const gnv3_model* m, gnv3_model** out) {
  if (auto s = require(m && out, "null argument")) return s;
  return guarded([&] { *out = new gnv3_model{gnv3::fold_model(*m->impl)}; });
}

void gnv3_model_free(gnv3_model* m) { delete m; }

gnv3_status gnv3_model_params(gnv3_model* m, int64_t* out) {
  if (auto s = require(m && out, "null argument")) return s;
  return guarded([&] { *out = gnv3::count_params(*m->impl); });
}

gnv3_status gnv3_model_flops(gnv3_model* m, int64_t h, int64_t w, int64_t* out) {
  if (auto s = require(m && out, "null argument")) return s;
  return guarded([&] { *out = gnv3::count_flops(*m->impl, h, w); });
}

gnv3_status gnv3_model_classes(const gnv3_model* m, int32_t* out) {
  if (auto s = require(m && out, "null argument")) return s;
  *out = static_cast<int32_t>(m->impl->spec.num_classes);
  return GNV3_OK;
}

gnv3_status gnv3_model_in_channels(const gnv3_model* m, int32_t* out) {
  if (auto s = require(m && out, "null argument")) return s;
  *out = static_cast<int32_t>(m->impl->spec.in_channels);
  return GNV3_OK;
}

gnv3_status gnv3_model_is_folded(const gnv3_model* m, int32_t* out) {
  if (auto s = require(m && out, "null argument")) return s;
  *out = m->impl->folded ? 1 : 0;
  return GNV3_OK;
}

gnv3_status gnv3_model_forward(const gnv3_model* m, const float* input,
                               int64_t n, int64_t c, int64_t h, int64_t w,
                               float* logits) {
  if (auto s = require(m && input && logits, "null argument")) return s;
  return guarded([&] {
    gnv3::Tensor x(gnv3::Shape4{n, c, h, w});
    std::memcpy(x.data(), input, sizeof(float) * x.numel());
    gnv3::Tensor y = m->impl->forward(x);
    std::memcpy(logits, y.data(), sizeof(float) * y.numel());
  });
}

gnv3_status gnv3_verify_fold(const gnv3_model* a, const gnv3_model* b,
                             int64_t n_inputs, int64_t h, int64_t w,
                             uint64_t seed, double* max_rel_err) {
  if (auto s = require(a && b && max_rel_err, "null argument")) return s;
  return guarded([&] {
    *max_rel_err = gnv3::compare_models(*a->impl, *b->impl, n_inputs, h, w, seed);
  });
}

gnv3_status gnv3_bench(gnv3_model* m, int64_t h, int64_t w, int64_t runs,
                       int64_t warmup, uint64_t seed, gnv3_bench_result* out) {
  if (auto s = require(m && out, "null argument")) return s;
  return guarded([&] {
    const gnv3::BenchResult r = gnv3::bench_model(*m->impl, h, w, runs, warmup, seed);
    out->runs = r.runs;
    out->warmup = r.warmup;
    out->median_ms = r.median_ms;
    out->p10_ms = r.p10_ms;
    out->p90_ms = r.p90_ms;
    out->mean_ms = r.mean_ms;
    out->params = r.params;
    out->flops = r.flops;
  });
}

gnv3_status gnv3_dataset_open(const char* path, gnv3_dataset** out) {
  if (auto s = require(path && out, "null argument")) return s;
  return guarded([&] { *out = new gnv3_dataset{gnv3::load_dataset(path)}; });
}

void gnv3_dataset_free(gnv3_dataset* d) { delete d; }

gnv3_status gnv3_dataset_info(const gnv3_dataset* d, int64_t* count,
                              int64_t* channels, int64_t* height,
                              int64_t* width, int64_t* classes) {
  if (auto s = require(d != nullptr, "null argument")) return s;
  if (count) *count = d->impl.count();
  if (channels) *channels = d->impl.channels;
  if (height) *height = d->impl.height;
  if (width) *width = d->impl.width;
  if (classes) *classes = d->impl.classes;
  return GNV3_OK;
}

gnv3_status gnv3_dataset_synth(int64_t classes, int64_t per_class,
                               int64_t height, int64_t width, uint64_t seed,
                               double noise_sigma, double label_noise,
                               const char* path) {
  if (auto s = require(path != nullptr, "null argument")) return s;
  return guarded([&] {
    gnv3::save_dataset(gnv3::synth_dataset(classes, per_class, height, width,
                                           seed, noise_sigma, label_noise),
                       path);
  });
}

gnv3_status gnv3_dataset_ingest(const char* dir, int64_t height, int64_t width,
                                const char* path) {
  if (auto s = require(dir && path, "null argument")) return s;
  return guarded([&] {
    gnv3::save_dataset(gnv3::ingest_images(dir, height, width), path);
  });
}

gnv3_status gnv3_eval(const gnv3_model* m, const gnv3_dataset* d, int64_t batch,
                      double* top1, double* top5) {
  if (auto s = require(m && d, "null argument")) return s;
  return guarded([&] {
    const gnv3::EvalResult r = gnv3::evaluate(*m->impl, d->impl, batch);
    if (top1) *top1 = r.top1;
    if (top5) *top5 = r.top5;
  });
}

gnv3_status gnv3_export_logits(const gnv3_model* m, const gnv3_dataset* d,
                               int64_t batch, const char* path) {
  if (auto s = require(m && d && path, "null argument")) return s;
  return guarded([&] {
    gnv3::save_logits(gnv3::predict_logits(*m->impl, d->impl, batch), path);
  });
}

gnv3_status gnv3_train(const char* config_text, int64_t seed_override,
                       int verbose, double* final_top1) {
  if (auto s = require(config_text != nullptr, "null argument")) return s;
  return guarded([&] {
    gnv3::RecipeConfig cfg =
        gnv3::RecipeConfig::from_ini(gnv3::IniFile::parse(config_text));
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    const gnv3::TrainResult r =
        gnv3::run_recipe(cfg, verbose ? &std::cout : nullptr);
    if (final_top1) *final_top1 = r.top1_raw;
  });
}

}  // extern "C"
