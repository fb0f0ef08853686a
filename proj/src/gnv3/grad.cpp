#include "gnv3/grad.hpp"

#include <cmath>
#include <cstring>

#include "gnv3/parallel.hpp"

namespace gnv3 {

using detail::ConvGeom;

static void backward_conv_depthwise(const Tensor& x, const ConvKernel& k,
                                    const ConvGeom& g, const Tensor& d_out,
                                    ConvGrad& grad) {
  int64_t kh = k.k_h(), kw = k.k_w();
  // Each channel's weight gradient is owned by exactly one task.
  parallel_for(x.c(), [&](int64_t ci) {
    float* dw = grad.d_weight.plane(ci, 0);
    for (int64_t in = 0; in < x.n(); ++in) {
      const float* src = x.plane(in, ci);
      const float* dy = d_out.plane(in, ci);
      for (int64_t oy = 0; oy < g.out_h; ++oy) {
        const float* drow = dy + oy * g.out_w;
        for (int64_t ky = 0; ky < kh; ++ky) {
          int64_t iy = oy * k.stride_h - k.pad_h + ky;
          if (iy < 0 || iy >= x.h()) continue;
          const float* srow = src + iy * x.w();
          for (int64_t kx = 0; kx < kw; ++kx) {
            float acc = 0.0f;
            for (int64_t ox = 0; ox < g.out_w; ++ox) {
              int64_t ix = ox * k.stride_w - k.pad_w + kx;
              if (ix >= 0 && ix < x.w()) acc += drow[ox] * srow[ix];
            }
            dw[ky * kw + kx] += acc;
          }
        }
      }
    }
  });
  parallel_for(x.n() * x.c(), [&](int64_t idx) {
    int64_t in = idx / x.c();
    int64_t ci = idx % x.c();
    const float* wgt = k.weight.plane(ci, 0);
    const float* dy = d_out.plane(in, ci);
    float* dx = grad.d_input.plane(in, ci);
    for (int64_t oy = 0; oy < g.out_h; ++oy) {
      const float* drow = dy + oy * g.out_w;
      for (int64_t ky = 0; ky < kh; ++ky) {
        int64_t iy = oy * k.stride_h - k.pad_h + ky;
        if (iy < 0 || iy >= x.h()) continue;
        float* xrow = dx + iy * x.w();
        for (int64_t kx = 0; kx < kw; ++kx) {
          float wv = wgt[ky * kw + kx];
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            int64_t ix = ox * k.stride_w - k.pad_w + kx;
            if (ix >= 0 && ix < x.w()) xrow[ix] += wv * drow[ox];
          }
        }
      }
    }
  });
}

ConvGrad backward_conv2d(const Tensor& x, const ConvKernel& k, const Tensor& d_out) {
  using namespace detail;
  ConvGeom g = conv_geometry(x, k);
  GNV3_CHECK_SHAPE(d_out.n() == x.n() && d_out.c() == k.c_out() &&
                       d_out.h() == g.out_h && d_out.w() == g.out_w,
                   "conv backward d_out shape " << d_out.shape().str()
                       << " does not match forward output");
  ConvGrad grad;
  grad.d_input = Tensor(x.shape());
  grad.d_weight = Tensor(k.weight.shape());
  if (k.bias) {
    Vec db(k.c_out(), 0.0f);
    for (int64_t in = 0; in < x.n(); ++in) {
      for (int64_t co = 0; co < k.c_out(); ++co) {
        const float* dy = d_out.plane(in, co);
        float acc = 0.0f;
        for (int64_t i = 0; i < g.cols; ++i) acc += dy[i];
        db[co] += acc;
      }
    }
    grad.d_bias = std::move(db);
  }

  if (k.depthwise()) {
    backward_conv_depthwise(x, k, g, d_out, grad);
    return grad;
  }

  // d_weight: per-chunk partial sums over the batch, reduced in chunk order
  // afterwards (bitwise deterministic for a fixed thread count).
  int chunks = chunk_count(x.n());
  int64_t wsize = k.weight.numel();
  std::vector<std::vector<float>> partial(chunks);
  parallel_for_chunks(x.n(), [&](int chunk, int64_t begin, int64_t end) {
    std::vector<float>& dw = partial[chunk];
    dw.assign(static_cast<size_t>(wsize), 0.0f);
    std::vector<float> col(static_cast<size_t>(g.rows * g.cols));
    std::vector<float> colt(static_cast<size_t>(g.rows * g.cols));
    for (int64_t in = begin; in < end; ++in) {
      for (int64_t gr = 0; gr < k.groups; ++gr) {
        im2col(x, k, g, in, gr, col.data());
        for (int64_t r = 0; r < g.rows; ++r)
          for (int64_t j = 0; j < g.cols; ++j)
            colt[j * g.rows + r] = col[r * g.cols + j];
        matmul_acc(d_out.plane(in, gr * g.cg_out), colt.data(),
                   dw.data() + gr * g.cg_out * g.rows, g.cg_out, g.cols, g.rows);
      }
    }
  });
  for (int cnk = 0; cnk < chunks; ++cnk) {
    if (partial[cnk].empty()) continue;
    float* acc = grad.d_weight.data();
    const float* src = partial[cnk].data();
    for (int64_t i = 0; i < wsize; ++i) acc[i] += src[i];
  }

  // d_input = col2im(W^T * d_out); weight transpose is shared read-only.
  std::vector<float> wt(static_cast<size_t>(k.groups * g.rows * g.cg_out));
  for (int64_t gr = 0; gr < k.groups; ++gr) {
    const float* w = k.weight.plane(gr * g.cg_out, 0);
    float* dst = wt.data() + gr * g.rows * g.cg_out;
    for (int64_t co = 0; co < g.cg_out; ++co)
      for (int64_t r = 0; r < g.rows; ++r) dst[r * g.cg_out + co] = w[co * g.rows + r];
  }
  parallel_for_chunks(x.n(), [&](int, int64_t begin, int64_t end) {
    std::vector<float> dcol(static_cast<size_t>(g.rows * g.cols));
    for (int64_t in = begin; in < end; ++in) {
      for (int64_t gr = 0; gr < k.groups; ++gr) {
        std::fill(dcol.begin(), dcol.end(), 0.0f);
        matmul_acc(wt.data() + gr * g.rows * g.cg_out, d_out.plane(in, gr * g.cg_out),
                   dcol.data(), g.rows, g.cg_out, g.cols);
        col2im_acc(grad.d_input, k, g, in, gr, dcol.data());
      }
    }
  });
  return grad;
}

BnGrad backward_batchnorm_train(const Tensor& x, const BatchNormParams& p,
                                const BnBatchStats& stats, const Tensor& d_out) {
  GNV3_CHECK_SHAPE(x.shape() == d_out.shape(), "batchnorm backward shape mismatch");
  GNV3_CHECK_SHAPE(x.c() == p.channels(), "batchnorm backward channel mismatch");
  int64_t hw = x.h() * x.w();
  int64_t m = x.n() * hw;
  float inv_m = 1.0f / static_cast<float>(m);

  BnGrad grad;
  grad.d_input = Tensor(x.shape());
  grad.d_gamma.assign(x.c(), 0.0f);
  grad.d_beta.assign(x.c(), 0.0f);

  parallel_for(x.c(), [&](int64_t ci) {
    float mu = stats.mean[ci];
    float is = stats.inv_std[ci];
    float sum_dy = 0.0f, sum_dy_xhat = 0.0f;
    for (int64_t in = 0; in < x.n(); ++in) {
      const float* xv = x.plane(in, ci);
      const float* dy = d_out.plane(in, ci);
      for (int64_t i = 0; i < hw; ++i) {
        float xhat = (xv[i] - mu) * is;
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xhat;
      }
    }
    grad.d_beta[ci] = sum_dy;
    grad.d_gamma[ci] = sum_dy_xhat;

    float mean_dy = sum_dy * inv_m;
    float mean_dy_xhat = sum_dy_xhat * inv_m;
    float s = p.gamma[ci] * is;
    for (int64_t in = 0; in < x.n(); ++in) {
      const float* xv = x.plane(in, ci);
      const float* dy = d_out.plane(in, ci);
      float* dx = grad.d_input.plane(in, ci);
      for (int64_t i = 0; i < hw; ++i) {
        float xhat = (xv[i] - mu) * is;
        dx[i] = s * (dy[i] - mean_dy - xhat * mean_dy_xhat);
      }
    }
  });
  return grad;
}

Tensor backward_relu(const Tensor& y, const Tensor& d_out) {
  GNV3_CHECK_SHAPE(y.shape() == d_out.shape(), "relu backward shape mismatch");
  Tensor dx(y.shape());
  for (int64_t i = 0; i < y.numel(); ++i)
    dx.data()[i] = y.data()[i] > 0.0f ? d_out.data()[i] : 0.0f;
  return dx;
}

Tensor backward_sigmoid(const Tensor& y, const Tensor& d_out) {
  GNV3_CHECK_SHAPE(y.shape() == d_out.shape(), "sigmoid backward shape mismatch");
  Tensor dx(y.shape());
  for (int64_t i = 0; i < y.numel(); ++i) {
    float s = y.data()[i];
    dx.data()[i] = d_out.data()[i] * s * (1.0f - s);
  }
  return dx;
}

LinearGrad backward_linear(const Tensor& x_flat, const Tensor& weight,
                           const Tensor& d_out) {
  int64_t features = x_flat.c() * x_flat.h() * x_flat.w();
  int64_t out = weight.n();
  GNV3_CHECK_SHAPE(d_out.n() == x_flat.n() && d_out.c() == out &&
                       d_out.h() == 1 && d_out.w() == 1,
                   "linear backward d_out shape mismatch");
  LinearGrad grad;
  grad.d_input = Tensor(x_flat.shape());
  grad.d_weight = Tensor(weight.shape());
  grad.d_bias.assign(out, 0.0f);
  for (int64_t in = 0; in < x_flat.n(); ++in) {
    const float* xv = x_flat.data() + in * features;
    const float* dy = d_out.data() + in * out;
    float* dx = grad.d_input.data() + in * features;
    for (int64_t o = 0; o < out; ++o) {
      float d = dy[o];
      grad.d_bias[o] += d;
      const float* wv = weight.data() + o * features;
      float* dw = grad.d_weight.data() + o * features;
      for (int64_t f = 0; f < features; ++f) {
        dw[f] += d * xv[f];
        dx[f] += d * wv[f];
      }
    }
  }
  return grad;
}

Tensor backward_softmax_ce(const Tensor& logits, const Tensor& target) {
  GNV3_CHECK_SHAPE(logits.shape() == target.shape(),
                   "softmax_ce logits/target shape mismatch");
  Tensor p = softmax(logits);
  Tensor d(logits.shape());
  for (int64_t i = 0; i < p.numel(); ++i) d.data()[i] = p.data()[i] - target.data()[i];
  return d;
}

Tensor backward_avg_pool2d(const Shape4& in_shape, int64_t window, int64_t stride,
                           const Tensor& d_out) {
  Tensor dx(in_shape);
  float inv = 1.0f / static_cast<float>(window * window);
  for (int64_t in = 0; in < d_out.n(); ++in) {
    for (int64_t ci = 0; ci < d_out.c(); ++ci) {
      const float* dy = d_out.plane(in, ci);
      float* dst = dx.plane(in, ci);
      for (int64_t oy = 0; oy < d_out.h(); ++oy) {
        for (int64_t ox = 0; ox < d_out.w(); ++ox) {
          float v = dy[oy * d_out.w() + ox] * inv;
          for (int64_t ky = 0; ky < window; ++ky) {
            float* row = dst + (oy * stride + ky) * in_shape.w + ox * stride;
            for (int64_t kx = 0; kx < window; ++kx) row[kx] += v;
          }
        }
      }
    }
  }
  return dx;
}

Tensor backward_global_avg_pool(const Shape4& in_shape, const Tensor& d_out) {
  Tensor dx(in_shape);
  int64_t hw = in_shape.h * in_shape.w;
  float inv = 1.0f / static_cast<float>(hw);
  for (int64_t idx = 0; idx < in_shape.n * in_shape.c; ++idx) {
    float v = d_out.data()[idx] * inv;
    float* dst = dx.data() + idx * hw;
    for (int64_t i = 0; i < hw; ++i) dst[i] = v;
  }
  return dx;
}

Tensor backward_nearest_resize(const Shape4& in_shape, const Tensor& d_out) {
  Tensor dx(in_shape);
  for (int64_t idx = 0; idx < in_shape.n * in_shape.c; ++idx) {
    const float* dy = d_out.data() + idx * d_out.h() * d_out.w();
    float* dst = dx.data() + idx * in_shape.h * in_shape.w;
    for (int64_t oy = 0; oy < d_out.h(); ++oy) {
      float* drow = dst + (oy * in_shape.h / d_out.h()) * in_shape.w;
      const float* srow = dy + oy * d_out.w();
      for (int64_t ox = 0; ox < d_out.w(); ++ox)
        drow[ox * in_shape.w / d_out.w()] += srow[ox];
    }
  }
  return dx;
}

void split_channels(const Tensor& d, int64_t c_first, Tensor& d_a, Tensor& d_b) {
  GNV3_CHECK_ARG(c_first >= 1 && c_first < d.c(), "split point out of range");
  d_a = Tensor(d.n(), c_first, d.h(), d.w());
  d_b = Tensor(d.n(), d.c() - c_first, d.h(), d.w());
  int64_t hw = d.h() * d.w();
  for (int64_t in = 0; in < d.n(); ++in) {
    std::memcpy(d_a.plane(in, 0), d.plane(in, 0), sizeof(float) * c_first * hw);
    std::memcpy(d_b.plane(in, 0), d.plane(in, c_first),
                sizeof(float) * (d.c() - c_first) * hw);
  }
}

}  // namespace gnv3
