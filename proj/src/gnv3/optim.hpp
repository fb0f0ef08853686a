#pragma once

#include "gnv3/ghostnet.hpp"

namespace gnv3 {

enum class ScheduleKind { cosine, step };

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::cosine;
  double lr_max = 0.005;
  double lr_min = 0.0;
  int64_t total_steps = 0;  // 0 = derived from epochs by the trainer
  std::vector<int64_t> milestones;  // step schedule only, ascending
  double step_factor = 0.1;
  int64_t warmup_steps = 0;  // linear ramp to lr_max; disabled by default

  void validate() const;
};

// Learning rate at step t in [0, total_steps].
double lr_at(const ScheduleConfig& s, int64_t t);

enum class OptimizerKind { sgd, lamb };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::lamb;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-6;  // lamb moments
  double weight_decay = 0.05;
  double trust_lo = 0.0, trust_hi = 10.0;  // lamb trust-ratio clamp

  void validate() const;
};

// Owns per-parameter moment buffers; `slots` must be the learnable subset and
// keep its order across steps. Weight decay applies only to slots flagged
// `decay` (SGD couples it into the gradient; LAMB adds it to the adaptive
// update before the trust ratio).
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const std::vector<TensorSlot>& slots);

  void step(const std::vector<TensorSlot>& slots,
            const std::vector<Vec>& grads, double lr);
  int64_t steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Vec> m_, v_;  // v_ unused for sgd
  int64_t t_ = 0;
};

// Shadow copy of every slot (learnable and running statistics alike):
// shadow = beta * shadow + (1 - beta) * current.
struct EmaState {
  double beta = 0.9999;
  int64_t t = 0;
  std::vector<Vec> shadow;

  static EmaState init(const std::vector<TensorSlot>& slots, double beta);
  void copy_to(const std::vector<TensorSlot>& slots) const;
};

void ema_update(EmaState& state, const std::vector<TensorSlot>& slots);

}  // namespace gnv3
