#pragma once

#include <ostream>

#include "gnv3/augment.hpp"
#include "gnv3/checkpoint.hpp"
#include "gnv3/dataset.hpp"
#include "gnv3/losses.hpp"
#include "gnv3/optim.hpp"

namespace gnv3 {

struct TrainPaths {
  std::string train_data, val_data;
  std::string teacher_ckpt, teacher_logits;  // at most one used
  std::string out_checkpoint, out_metrics;
};

struct RecipeConfig {
  ModelSpec model;
  KdConfig kd;
  ScheduleConfig schedule;  // total_steps == 0 means epochs * steps_per_epoch
  AugmentConfig augment;
  OptimizerConfig optimizer;
  double ema_beta = 0.99;  // desk-scale default; full recipes use 0.9999
  int64_t epochs = 10;
  int64_t batch = 64;
  uint64_t seed = 0;
  bool save_ema = false;  // checkpoint carries EMA weights instead of raw
  TrainPaths paths;

  static RecipeConfig from_ini(const IniFile& ini);
  void to_ini(IniFile& ini) const;
  void validate() const;
};

struct EpochMetrics {
  int64_t epoch = 0;
  double lr = 0.0;          // at the first step of the epoch
  double train_loss = 0.0;  // sample-weighted mean over the epoch
  double top1_raw = 0.0;
  double top1_ema = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double top1_raw = 0.0, top1_ema = 0.0;  // final epoch
};

// Deterministic for a fixed (seed, config, thread count): shuffling and
// augmentation draw from per-epoch/per-sample streams derived from the seed,
// never from shared mutable RNG state.
TrainResult train_loop(const RecipeConfig& cfg, Model& model,
                       const Dataset& train_data, const Dataset& val_data,
                       const Model* teacher, const LogitTable* teacher_logits,
                       EmaState* ema_out = nullptr, std::ostream* log = nullptr);

// Full pipeline: loads the datasets (and teacher, when configured) named in
// cfg.paths, builds the model, trains, then writes the checkpoint and the
// metrics CSV. The saved checkpoint holds raw weights unless cfg.save_ema.
TrainResult run_recipe(const RecipeConfig& cfg, std::ostream* log = nullptr);

struct EvalResult {
  double top1 = 0.0, top5 = 0.0;
  int64_t count = 0;
};

EvalResult evaluate(const Model& m, const Dataset& d, int64_t batch = 64);

// Inference logits for every sample, row-aligned with the dataset.
LogitTable predict_logits(const Model& m, const Dataset& d, int64_t batch = 64);

// Formats one metrics CSV (schema: epoch,lr,train_loss,val_top1_raw,
// val_top1_ema) byte-reproducibly.
std::string metrics_csv(const std::vector<EpochMetrics>& history);

}  // namespace gnv3
