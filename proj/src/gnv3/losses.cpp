#include "gnv3/losses.hpp"

#include <algorithm>
#include <cmath>

#include "gnv3/common.hpp"
#include "gnv3/ops.hpp"

namespace gnv3 {

namespace {

void check_logits(const Tensor& t, const char* what) {
  GNV3_CHECK_SHAPE(t.h() == 1 && t.w() == 1,
                   std::string(what) + " must be (n, classes, 1, 1)");
  GNV3_CHECK_SHAPE(t.c() >= 2, std::string(what) + " needs at least two classes");
}

// Row softmax in double precision; optionally with temperature.
void row_softmax(const float* logits, int64_t c, double tau, double* out) {
  double mx = -1e300;
  for (int64_t i = 0; i < c; ++i) mx = std::max(mx, double(logits[i]) / tau);
  double sum = 0.0;
  for (int64_t i = 0; i < c; ++i) {
    out[i] = std::exp(double(logits[i]) / tau - mx);
    sum += out[i];
  }
  for (int64_t i = 0; i < c; ++i) out[i] /= sum;
}

}  // namespace

void KdConfig::validate() const {
  GNV3_CHECK_ARG(alpha >= 0.0f && alpha <= 1.0f, "kd alpha must lie in [0, 1]");
  GNV3_CHECK_ARG(tau > 0.0f, "kd temperature must be positive");
}

Tensor one_hot(const std::vector<int>& labels, int64_t classes) {
  GNV3_CHECK_ARG(classes >= 2, "need at least two classes");
  Tensor t(static_cast<int64_t>(labels.size()), classes, 1, 1);
  for (size_t i = 0; i < labels.size(); ++i) {
    GNV3_CHECK_ARG(labels[i] >= 0 && labels[i] < classes, "label out of range");
    t.data()[i * classes + labels[i]] = 1.0f;
  }
  return t;
}

float cross_entropy(const Tensor& logits, const Tensor& target) {
  check_logits(logits, "logits");
  GNV3_CHECK_SHAPE(logits.shape() == target.shape(),
                   "logits/target shape mismatch");
  const int64_t n = logits.n(), c = logits.c();
  std::vector<double> p(c);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    const float* tgt = target.data() + i * c;
    double mx = -1e300;
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, double(row[j]));
    double lse = 0.0;
    for (int64_t j = 0; j < c; ++j) lse += std::exp(double(row[j]) - mx);
    lse = std::log(lse) + mx;
    for (int64_t j = 0; j < c; ++j)
      if (tgt[j] != 0.0f) total -= double(tgt[j]) * (double(row[j]) - lse);
  }
  const float out = static_cast<float>(total / n);
  GNV3_CHECK(std::isfinite(out), ErrorCode::numeric_error,
             "cross entropy is not finite");
  return out;
}

Tensor cross_entropy_grad(const Tensor& logits, const Tensor& target) {
  check_logits(logits, "logits");
  GNV3_CHECK_SHAPE(logits.shape() == target.shape(),
                   "logits/target shape mismatch");
  const int64_t n = logits.n(), c = logits.c();
  Tensor g(logits.shape());
  std::vector<double> p(c);
  for (int64_t i = 0; i < n; ++i) {
    row_softmax(logits.data() + i * c, c, 1.0, p.data());
    const float* tgt = target.data() + i * c;
    for (int64_t j = 0; j < c; ++j)
      g.data()[i * c + j] = static_cast<float>((p[j] - double(tgt[j])) / n);
  }
  return g;
}

float kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
              float tau, bool literal_temp) {
  check_logits(student_logits, "student logits");
  GNV3_CHECK_SHAPE(student_logits.shape() == teacher_logits.shape(),
                   "student/teacher shape mismatch");
  GNV3_CHECK_ARG(tau > 0.0f, "kd temperature must be positive");
  const int64_t n = student_logits.n(), c = student_logits.c();
  const double t = literal_temp ? 1.0 : double(tau);
  const double post = literal_temp ? 1.0 / double(tau) : 1.0;
  std::vector<double> ps(c), pt(c);
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    row_softmax(student_logits.data() + i * c, c, t, ps.data());
    row_softmax(teacher_logits.data() + i * c, c, t, pt.data());
    for (int64_t j = 0; j < c; ++j) {
      const double q_t = pt[j] * post, q_s = ps[j] * post;
      if (q_t > 0.0) total += q_t * std::log(q_t / q_s);
    }
  }
  const float out = static_cast<float>(double(tau) * double(tau) * total / n);
  GNV3_CHECK(std::isfinite(out), ErrorCode::numeric_error,
             "kd loss is not finite");
  return out;
}

Tensor kd_loss_grad(const Tensor& student_logits, const Tensor& teacher_logits,
                    float tau, bool literal_temp) {
  check_logits(student_logits, "student logits");
  GNV3_CHECK_SHAPE(student_logits.shape() == teacher_logits.shape(),
                   "student/teacher shape mismatch");
  GNV3_CHECK_ARG(tau > 0.0f, "kd temperature must be positive");
  const int64_t n = student_logits.n(), c = student_logits.c();
  const double t = literal_temp ? 1.0 : double(tau);
  // Standard form: tau^2 * KL with softened softmaxes gives d/ds = tau*(ps-pt).
  // Literal form: tau^2 * (1/tau) * KL with plain softmaxes gives tau*(ps-pt).
  const double scale = double(tau);
  std::vector<double> ps(c), pt(c);
  Tensor g(student_logits.shape());
  for (int64_t i = 0; i < n; ++i) {
    row_softmax(student_logits.data() + i * c, c, t, ps.data());
    row_softmax(teacher_logits.data() + i * c, c, t, pt.data());
    for (int64_t j = 0; j < c; ++j)
      g.data()[i * c + j] = static_cast<float>(scale * (ps[j] - pt[j]) / n);
  }
  return g;
}

float total_loss(float ce, float kd, float alpha) {
  GNV3_CHECK_ARG(alpha >= 0.0f && alpha <= 1.0f, "kd alpha must lie in [0, 1]");
  return (1.0f - alpha) * ce + alpha * kd;
}

Tensor total_loss_grad(const Tensor& student_logits, const Tensor& target,
                       const Tensor* teacher_logits, const KdConfig& kd) {
  kd.validate();
  Tensor g = cross_entropy_grad(student_logits, target);
  if (kd.alpha == 0.0f || teacher_logits == nullptr) {
    GNV3_CHECK_ARG(kd.alpha == 0.0f, "kd enabled but no teacher logits given");
    return g;
  }
  scale_inplace(g, 1.0f - kd.alpha);
  Tensor kg = kd_loss_grad(student_logits, *teacher_logits, kd.tau,
                           kd.literal_temp);
  scale_inplace(kg, kd.alpha);
  add_inplace(g, kg);
  return g;
}

float topk_accuracy(const Tensor& logits, const std::vector<int>& labels, int k) {
  check_logits(logits, "logits");
  GNV3_CHECK_ARG(k >= 1 && k <= logits.c(), "invalid k for top-k accuracy");
  GNV3_CHECK_SHAPE(logits.n() == static_cast<int64_t>(labels.size()),
                   "logits/label count mismatch");
  const int64_t n = logits.n(), c = logits.c();
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    const float own = row[labels[i]];
    // Rank of the true class: strictly-greater entries ahead of it.
    int above = 0;
    for (int64_t j = 0; j < c; ++j)
      if (row[j] > own) ++above;
    if (above < k) ++hits;
  }
  return 100.0f * static_cast<float>(hits) / static_cast<float>(n);
}

}  // namespace gnv3
