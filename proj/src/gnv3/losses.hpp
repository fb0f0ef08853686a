#pragma once

#include "gnv3/tensor.hpp"

namespace gnv3 {

struct KdConfig {
  float alpha = 0.0f;  // 0 disables distillation
  float tau = 1.0f;
  // Debug variant: probabilities divided by tau after the softmax, exactly as
  // sometimes (mis)written; not a distribution, off by default.
  bool literal_temp = false;

  void validate() const;
};

// Builds one-hot target distributions (n, classes, 1, 1).
Tensor one_hot(const std::vector<int>& labels, int64_t classes);

// Mean over the batch of -sum(target * log softmax(logits)). Targets are
// arbitrary distributions so mixed labels need no special casing.
float cross_entropy(const Tensor& logits, const Tensor& target);
// d(cross_entropy)/d(logits), mean-reduced: (softmax - target) / n.
Tensor cross_entropy_grad(const Tensor& logits, const Tensor& target);

// tau^2 * KL(teacher || student) with p = softmax(logits / tau), mean over
// the batch. The teacher distribution is the reference.
float kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
              float tau, bool literal_temp = false);
Tensor kd_loss_grad(const Tensor& student_logits, const Tensor& teacher_logits,
                    float tau, bool literal_temp = false);

// (1 - alpha) * ce + alpha * kd.
float total_loss(float ce, float kd, float alpha);
// Combined logit gradient; teacher may be null when alpha == 0.
Tensor total_loss_grad(const Tensor& student_logits, const Tensor& target,
                       const Tensor* teacher_logits, const KdConfig& kd);

// Top-k accuracy in percent over one batch of logits against integer labels.
float topk_accuracy(const Tensor& logits, const std::vector<int>& labels, int k);

}  // namespace gnv3
