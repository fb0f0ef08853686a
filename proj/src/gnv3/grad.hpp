#pragma once

#include "gnv3/ops.hpp"

namespace gnv3 {

// Per-layer gradient bundles. d_input mirrors the forward input shape and
// every parameter gradient mirrors its parameter exactly.
struct ConvGrad {
  Tensor d_input;
  Tensor d_weight;
  std::optional<Vec> d_bias;
};

struct BnGrad {
  Tensor d_input;
  Vec d_gamma, d_beta;
};

struct LinearGrad {
  Tensor d_input;
  Tensor d_weight;
  Vec d_bias;
};

ConvGrad backward_conv2d(const Tensor& x, const ConvKernel& k, const Tensor& d_out);

// Training-mode batchnorm backward. `stats` are the batch statistics saved
// by batchnorm_train for the same input.
BnGrad backward_batchnorm_train(const Tensor& x, const BatchNormParams& p,
                                const BnBatchStats& stats, const Tensor& d_out);

// `y` is the forward output (the mask/derivative is recoverable from it).
Tensor backward_relu(const Tensor& y, const Tensor& d_out);
Tensor backward_sigmoid(const Tensor& y, const Tensor& d_out);

LinearGrad backward_linear(const Tensor& x_flat, const Tensor& weight,
                           const Tensor& d_out);

// Combined softmax + cross-entropy gradient for one batch of logits
// (n, classes, 1, 1) against target distributions of the same shape:
// d_logits = softmax(logits) - target, per sample (no 1/n scaling).
Tensor backward_softmax_ce(const Tensor& logits, const Tensor& target);

Tensor backward_avg_pool2d(const Shape4& in_shape, int64_t window, int64_t stride,
                           const Tensor& d_out);
Tensor backward_global_avg_pool(const Shape4& in_shape, const Tensor& d_out);
Tensor backward_nearest_resize(const Shape4& in_shape, const Tensor& d_out);

// Concat backward: splits the gradient back into the two channel ranges.
void split_channels(const Tensor& d, int64_t c_first, Tensor& d_a, Tensor& d_b);

}  // namespace gnv3
