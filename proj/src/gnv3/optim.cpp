#include "gnv3/optim.hpp"

#include <cmath>

#include "gnv3/common.hpp"

namespace gnv3 {

void ScheduleConfig::validate() const {
  GNV3_CHECK_ARG(total_steps >= 1, "schedule needs at least one step");
  GNV3_CHECK_ARG(lr_max > 0.0, "lr_max must be positive");
  GNV3_CHECK_ARG(lr_min >= 0.0 && lr_min <= lr_max, "need 0 <= lr_min <= lr_max");
  GNV3_CHECK_ARG(warmup_steps >= 0 && warmup_steps < total_steps,
                 "warmup must be shorter than the schedule");
  GNV3_CHECK_ARG(step_factor > 0.0 && step_factor <= 1.0,
                 "step factor must lie in (0, 1]");
  for (size_t i = 1; i < milestones.size(); ++i)
    GNV3_CHECK_ARG(milestones[i] > milestones[i - 1],
                   "milestones must be strictly ascending");
}

double lr_at(const ScheduleConfig& s, int64_t t) {
  s.validate();
  GNV3_CHECK_ARG(t >= 0, "schedule step must be non-negative");
  t = std::min(t, s.total_steps);
  if (s.warmup_steps > 0 && t < s.warmup_steps)
    return s.lr_max * double(t + 1) / double(s.warmup_steps);
  if (s.kind == ScheduleKind::cosine) {
    const int64_t t0 = s.warmup_steps;
    const double frac = double(t - t0) / double(s.total_steps - t0);
    return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(M_PI * frac));
  }
  int passed = 0;
  for (int64_t m : s.milestones)
    if (t >= m) ++passed;
  return s.lr_max * std::pow(s.step_factor, passed);
}

void OptimizerConfig::validate() const {
  GNV3_CHECK_ARG(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  GNV3_CHECK_ARG(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  GNV3_CHECK_ARG(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  GNV3_CHECK_ARG(eps > 0.0, "eps must be positive");
  GNV3_CHECK_ARG(weight_decay >= 0.0, "weight decay must be non-negative");
  GNV3_CHECK_ARG(trust_lo >= 0.0 && trust_hi >= trust_lo,
                 "trust clamp bounds out of order");
}

Optimizer::Optimizer(const OptimizerConfig& cfg,
                     const std::vector<TensorSlot>& slots)
    : cfg_(cfg) {
  cfg_.validate();
  m_.reserve(slots.size());
  v_.reserve(slots.size());
  for (const auto& s : slots) {
    GNV3_CHECK_ARG(s.learnable, "optimizer slots must be learnable");
    m_.emplace_back(s.size, 0.0f);
    v_.emplace_back(s.size, 0.0f);
  }
}

void Optimizer::step(const std::vector<TensorSlot>& slots,
                     const std::vector<Vec>& grads, double lr) {
  GNV3_CHECK_ARG(slots.size() == m_.size() && grads.size() == m_.size(),
                 "optimizer slot/grad count changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));

  for (size_t si = 0; si < slots.size(); ++si) {
    const TensorSlot& s = slots[si];
    const Vec& g = grads[si];
    GNV3_CHECK_ARG(static_cast<int64_t>(g.size()) == s.size,
                   "gradient size mismatch in optimizer step");
    float* w = s.data;
    Vec& m = m_[si];

    if (cfg_.kind == OptimizerKind::sgd) {
      const float wd = s.decay ? static_cast<float>(cfg_.weight_decay) : 0.0f;
      for (int64_t i = 0; i < s.size; ++i) {
        const float gi = g[i] + wd * w[i];
        m[i] = static_cast<float>(cfg_.momentum) * m[i] + gi;
        w[i] -= static_cast<float>(lr) * m[i];
      }
      continue;
    }

    Vec& v = v_[si];
    const double wd = s.decay ? cfg_.weight_decay : 0.0;
    double w_norm = 0.0, u_norm = 0.0;
    std::vector<double> u(s.size);
    for (int64_t i = 0; i < s.size; ++i) {
      m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
      v[i] = static_cast<float>(cfg_.beta2 * v[i] +
                                (1.0 - cfg_.beta2) * double(g[i]) * g[i]);
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      u[i] = mh / (std::sqrt(vh) + cfg_.eps) + wd * w[i];
      w_norm += double(w[i]) * w[i];
      u_norm += u[i] * u[i];
    }
    w_norm = std::sqrt(w_norm);
    u_norm = std::sqrt(u_norm);
    double ratio = 1.0;
    if (w_norm > 0.0 && u_norm > 0.0)
      ratio = std::min(std::max(w_norm / u_norm, cfg_.trust_lo), cfg_.trust_hi);
    for (int64_t i = 0; i < s.size; ++i)
      w[i] -= static_cast<float>(lr * ratio * u[i]);
  }
}

EmaState EmaState::init(const std::vector<TensorSlot>& slots, double beta) {
  GNV3_CHECK_ARG(beta >= 0.0 && beta <= 1.0, "ema decay must lie in [0, 1]");
  EmaState st;
  st.beta = beta;
  st.shadow.reserve(slots.size());
  for (const auto& s : slots) st.shadow.emplace_back(s.data, s.data + s.size);
  return st;
}

void EmaState::copy_to(const std::vector<TensorSlot>& slots) const {
  GNV3_CHECK_ARG(slots.size() == shadow.size(), "ema slot count changed");
  for (size_t i = 0; i < slots.size(); ++i) {
    GNV3_CHECK_ARG(static_cast<int64_t>(shadow[i].size()) == slots[i].size,
                   "ema slot size changed");
    std::copy(shadow[i].begin(), shadow[i].end(), slots[i].data);
  }
}

void ema_update(EmaState& state, const std::vector<TensorSlot>& slots) {
  GNV3_CHECK_ARG(slots.size() == state.shadow.size(), "ema slot count changed");
  const float b = static_cast<float>(state.beta);
  for (size_t i = 0; i < slots.size(); ++i) {
    Vec& sh = state.shadow[i];
    const float* w = slots[i].data;
    GNV3_CHECK_ARG(static_cast<int64_t>(sh.size()) == slots[i].size,
                   "ema slot size changed");
    for (size_t j = 0; j < sh.size(); ++j)
      sh[j] = b * sh[j] + (1.0f - b) * w[j];
  }
  ++state.t;
}

}  // namespace gnv3
