#pragma once

#include <optional>

#include "gnv3/tensor.hpp"

namespace gnv3 {

struct ConvKernel {
  // (c_out, c_in/groups, k_h, k_w)
  Tensor weight;
  std::optional<Vec> bias;  // length c_out
  int64_t stride_h = 1, stride_w = 1;
  int64_t pad_h = 0, pad_w = 0;
  int64_t groups = 1;

  int64_t c_out() const { return weight.n(); }
  int64_t c_in() const { return weight.c() * groups; }
  int64_t k_h() const { return weight.h(); }
  int64_t k_w() const { return weight.w(); }
  bool depthwise() const {
    return groups == c_in() && groups == c_out() && weight.c() == 1;
  }
  void validate() const;
};

struct BatchNormParams {
  Vec gamma, beta, running_mean, running_var;  // all length c
  float eps = 1e-5f;
  float momentum = 0.1f;  // running = (1-momentum)*running + momentum*batch

  int64_t channels() const { return static_cast<int64_t>(gamma.size()); }
  void validate() const;
  static BatchNormParams identity(int64_t c, float eps = 1e-5f);
};

// Saved batch statistics, consumed by the batchnorm backward pass.
struct BnBatchStats {
  Vec mean;     // per channel, over (n,h,w)
  Vec inv_std;  // 1/sqrt(var_biased + eps)
};

// Cross-correlation (no kernel flip), zero padding. Output shape
// (n, c_out, (h+2p_h-k_h)/s_h + 1, (w+2p_w-k_w)/s_w + 1).
Tensor conv2d(const Tensor& x, const ConvKernel& k);

Tensor batchnorm_infer(const Tensor& x, const BatchNormParams& p);
// Normalizes with batch statistics over (n,h,w) and updates the running
// stats in p by momentum mixing (unbiased variance for the running stat
// when the reduction has more than one element).
Tensor batchnorm_train(const Tensor& x, BatchNormParams& p,
                       BnBatchStats* stats = nullptr);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Softmax over the channel axis, independently per (n, h, w) position.
Tensor softmax(const Tensor& x);

Tensor avg_pool2d(const Tensor& x, int64_t window, int64_t stride);
Tensor global_avg_pool(const Tensor& x);
// Repeats every pixel factor times along h and w.
Tensor nearest_upsample(const Tensor& x, int64_t factor);
// Nearest-neighbour resize to an exact spatial size (source index i*h/oh).
Tensor nearest_resize(const Tensor& x, int64_t out_h, int64_t out_w);

// Fully connected layer over per-sample flattened input: weight is
// (c_out, features), output (n, c_out, 1, 1).
Tensor linear(const Tensor& x_flat, const Tensor& weight, const Vec& bias);

Tensor concat_channels(const Tensor& a, const Tensor& b);

// Elementwise helpers shared across the model code.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& acc, const Tensor& t);
void scale_inplace(Tensor& t, float s);

namespace detail {

// C(MxN) += A(MxK) * B(KxN). Each C element accumulates k in ascending
// order, so results do not depend on threading.
void matmul_acc(const float* a, const float* b, float* c, int64_t m,
                int64_t k, int64_t n);

struct ConvGeom {
  int64_t out_h = 0, out_w = 0;
  int64_t cols = 0;      // out_h*out_w
  int64_t rows = 0;      // (c_in/groups)*k_h*k_w
  int64_t cg_in = 0;     // c_in/groups
  int64_t cg_out = 0;    // c_out/groups
};
ConvGeom conv_geometry(const Tensor& x, const ConvKernel& k);

// Gathers one (image, group) patch matrix, rows = (ci,ky,kx), cols = (oy,ox).
void im2col(const Tensor& x, const ConvKernel& k, const ConvGeom& g,
            int64_t in, int64_t group, float* col);
// Scatter-adds a patch matrix back into dx for one (image, group).
void col2im_acc(Tensor& dx, const ConvKernel& k, const ConvGeom& g,
                int64_t in, int64_t group, const float* col);

}  // namespace detail

}  // namespace gnv3
