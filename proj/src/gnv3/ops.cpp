#include "gnv3/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gnv3/parallel.hpp"

namespace gnv3 {

void ConvKernel::validate() const {
  GNV3_CHECK_ARG(groups >= 1, "conv groups must be >= 1");
  GNV3_CHECK_ARG(c_out() % groups == 0,
                 "c_out " << c_out() << " not divisible by groups " << groups);
  GNV3_CHECK_ARG(stride_h >= 1 && stride_w >= 1, "conv stride must be >= 1");
  GNV3_CHECK_ARG(pad_h >= 0 && pad_w >= 0, "conv padding must be >= 0");
  if (bias) {
    GNV3_CHECK_SHAPE(static_cast<int64_t>(bias->size()) == c_out(),
                     "conv bias length " << bias->size() << " != c_out " << c_out());
  }
}

void BatchNormParams::validate() const {
  size_t c = gamma.size();
  GNV3_CHECK_SHAPE(beta.size() == c && running_mean.size() == c &&
                       running_var.size() == c,
                   "batchnorm vectors must share one length");
  GNV3_CHECK_ARG(eps > 0.0f, "batchnorm eps must be > 0");
  for (float v : running_var) {
    GNV3_CHECK_ARG(v >= 0.0f, "batchnorm running_var must be >= 0");
  }
}

BatchNormParams BatchNormParams::identity(int64_t c, float eps) {
  BatchNormParams p;
  p.gamma.assign(c, 1.0f);
  p.beta.assign(c, 0.0f);
  p.running_mean.assign(c, 0.0f);
  p.running_var.assign(c, 1.0f);
  p.eps = eps;
  return p;
}

namespace detail {

void matmul_acc(const float* a, const float* b, float* c, int64_t m,
                int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      float av = arow[kk];
      const float* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

ConvGeom conv_geometry(const Tensor& x, const ConvKernel& k) {
  k.validate();
  GNV3_CHECK_SHAPE(x.c() == k.c_in(),
                   "conv input channels " << x.c() << " != kernel c_in " << k.c_in());
  GNV3_CHECK_ARG(x.c() % k.groups == 0,
                 "input channels " << x.c() << " not divisible by groups " << k.groups);
  int64_t ph = x.h() + 2 * k.pad_h;
  int64_t pw = x.w() + 2 * k.pad_w;
  GNV3_CHECK_SHAPE(ph >= k.k_h() && pw >= k.k_w(),
                   "padded input " << ph << "x" << pw << " smaller than kernel "
                                   << k.k_h() << "x" << k.k_w());
  ConvGeom g;
  g.out_h = (ph - k.k_h()) / k.stride_h + 1;
  g.out_w = (pw - k.k_w()) / k.stride_w + 1;
  g.cols = g.out_h * g.out_w;
  g.cg_in = k.c_in() / k.groups;
  g.cg_out = k.c_out() / k.groups;
  g.rows = g.cg_in * k.k_h() * k.k_w();
  return g;
}

void im2col(const Tensor& x, const ConvKernel& k, const ConvGeom& g,
            int64_t in, int64_t group, float* col) {
  int64_t kh = k.k_h(), kw = k.k_w();
  for (int64_t ci = 0; ci < g.cg_in; ++ci) {
    const float* src = x.plane(in, group * g.cg_in + ci);
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        float* dst = col + ((ci * kh + ky) * kw + kx) * g.cols;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          int64_t iy = oy * k.stride_h - k.pad_h + ky;
          float* drow = dst + oy * g.out_w;
          if (iy < 0 || iy >= x.h()) {
            std::memset(drow, 0, sizeof(float) * g.out_w);
            continue;
          }
          const float* srow = src + iy * x.w();
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            int64_t ix = ox * k.stride_w - k.pad_w + kx;
            drow[ox] = (ix >= 0 && ix < x.w()) ? srow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_acc(Tensor& dx, const ConvKernel& k, const ConvGeom& g,
                int64_t in, int64_t group, const float* col) {
  int64_t kh = k.k_h(), kw = k.k_w();
  for (int64_t ci = 0; ci < g.cg_in; ++ci) {
    float* dst = dx.plane(in, group * g.cg_in + ci);
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        const float* src = col + ((ci * kh + ky) * kw + kx) * g.cols;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          int64_t iy = oy * k.stride_h - k.pad_h + ky;
          if (iy < 0 || iy >= dx.h()) continue;
          float* drow = dst + iy * dx.w();
          const float* srow = src + oy * g.out_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            int64_t ix = ox * k.stride_w - k.pad_w + kx;
            if (ix >= 0 && ix < dx.w()) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

// Depthwise fast path: one channel per group, no patch matrix needed.
static void conv_depthwise(const Tensor& x, const ConvKernel& k,
                           const ConvGeom& g, Tensor& y) {
  int64_t kh = k.k_h(), kw = k.k_w();
  parallel_for(x.n() * x.c(), [&](int64_t idx) {
    int64_t in = idx / x.c();
    int64_t ci = idx % x.c();
    const float* src = x.plane(in, ci);
    const float* wgt = k.weight.plane(ci, 0);
    float b = k.bias ? (*k.bias)[ci] : 0.0f;
    float* dst = y.plane(in, ci);
    for (int64_t oy = 0; oy < g.out_h; ++oy) {
      float* drow = dst + oy * g.out_w;
      for (int64_t ox = 0; ox < g.out_w; ++ox) drow[ox] = b;
      for (int64_t ky = 0; ky < kh; ++ky) {
        int64_t iy = oy * k.stride_h - k.pad_h + ky;
        if (iy < 0 || iy >= x.h()) continue;
        const float* srow = src + iy * x.w();
        for (int64_t kx = 0; kx < kw; ++kx) {
          float wv = wgt[ky * kw + kx];
          int64_t base = -k.pad_w + kx;
          if (k.stride_w == 1) {
            int64_t lo = std::max<int64_t>(0, -base);
            int64_t hi = std::min<int64_t>(g.out_w, x.w() - base);
            const float* s = srow + base;
            for (int64_t ox = lo; ox < hi; ++ox) drow[ox] += wv * s[ox];
          } else {
            for (int64_t ox = 0; ox < g.out_w; ++ox) {
              int64_t ix = ox * k.stride_w + base;
              if (ix >= 0 && ix < x.w()) drow[ox] += wv * srow[ix];
            }
          }
        }
      }
    }
  });
}

}  // namespace detail

Tensor conv2d(const Tensor& x, const ConvKernel& k) {
  using namespace detail;
  ConvGeom g = conv_geometry(x, k);
  Tensor y(x.n(), k.c_out(), g.out_h, g.out_w);

  if (k.depthwise()) {
    conv_depthwise(x, k, g, y);
  } else {
    parallel_for_chunks(x.n(), [&](int, int64_t begin, int64_t end) {
      std::vector<float> col(static_cast<size_t>(g.rows * g.cols));
      for (int64_t in = begin; in < end; ++in) {
        for (int64_t gr = 0; gr < k.groups; ++gr) {
          im2col(x, k, g, in, gr, col.data());
          float* out = y.plane(in, gr * g.cg_out);
          if (k.bias) {
            for (int64_t co = 0; co < g.cg_out; ++co) {
              float b = (*k.bias)[gr * g.cg_out + co];
              float* row = out + co * g.cols;
              for (int64_t j = 0; j < g.cols; ++j) row[j] = b;
            }
          }
          matmul_acc(k.weight.plane(gr * g.cg_out, 0), col.data(), out,
                     g.cg_out, g.rows, g.cols);
        }
      }
    });
  }
  y.check_finite("conv2d");
  return y;
}

Tensor batchnorm_infer(const Tensor& x, const BatchNormParams& p) {
  p.validate();
  GNV3_CHECK_SHAPE(x.c() == p.channels(),
                   "batchnorm channels " << p.channels() << " != input " << x.c());
  Tensor y(x.shape());
  int64_t hw = x.h() * x.w();
  parallel_for(x.n() * x.c(), [&](int64_t idx) {
    int64_t ci = idx % x.c();
    float s = p.gamma[ci] / std::sqrt(p.running_var[ci] + p.eps);
    float t = p.beta[ci] - p.running_mean[ci] * s;
    const float* src = x.data() + idx * hw;
    float* dst = y.data() + idx * hw;
    for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * s + t;
  });
  y.check_finite("batchnorm_infer");
  return y;
}

Tensor batchnorm_train(const Tensor& x, BatchNormParams& p, BnBatchStats* stats) {
  p.validate();
  GNV3_CHECK_SHAPE(x.c() == p.channels(),
                   "batchnorm channels " << p.channels() << " != input " << x.c());
  int64_t c = x.c();
  int64_t hw = x.h() * x.w();
  int64_t m = x.n() * hw;
  Tensor y(x.shape());
  Vec mean(c), inv_std(c);

  parallel_for(c, [&](int64_t ci) {
    float sum = 0.0f;
    for (int64_t in = 0; in < x.n(); ++in) {
      const float* src = x.plane(in, ci);
      for (int64_t i = 0; i < hw; ++i) sum += src[i];
    }
    float mu = sum / static_cast<float>(m);
    float sq = 0.0f;
    for (int64_t in = 0; in < x.n(); ++in) {
      const float* src = x.plane(in, ci);
      for (int64_t i = 0; i < hw; ++i) {
        float d = src[i] - mu;
        sq += d * d;
      }
    }
    float var = sq / static_cast<float>(m);
    float is = 1.0f / std::sqrt(var + p.eps);
    mean[ci] = mu;
    inv_std[ci] = is;

    float s = p.gamma[ci] * is;
    float t = p.beta[ci] - mu * s;
    for (int64_t in = 0; in < x.n(); ++in) {
      const float* src = x.plane(in, ci);
      float* dst = y.plane(in, ci);
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * s + t;
    }

    // Unbiased variance for the running statistic, as is conventional.
    float var_run = m > 1 ? sq / static_cast<float>(m - 1) : var;
    p.running_mean[ci] = (1.0f - p.momentum) * p.running_mean[ci] + p.momentum * mu;
    p.running_var[ci] = (1.0f - p.momentum) * p.running_var[ci] + p.momentum * var_run;
  });

  if (stats) {
    stats->mean = std::move(mean);
    stats->inv_std = std::move(inv_std);
  }
  y.check_finite("batchnorm_train");
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  const float* src = x.data();
  float* dst = y.data();
  int64_t total = x.numel();
  for (int64_t i = 0; i < total; ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  const float* src = x.data();
  float* dst = y.data();
  int64_t total = x.numel();
  for (int64_t i = 0; i < total; ++i) dst[i] = 1.0f / (1.0f + std::exp(-src[i]));
  return y;
}

Tensor softmax(const Tensor& x) {
  Tensor y(x.shape());
  int64_t hw = x.h() * x.w();
  int64_t cstride = hw;
  for (int64_t in = 0; in < x.n(); ++in) {
    const float* base = x.data() + in * x.c() * hw;
    float* out = y.data() + in * x.c() * hw;
    for (int64_t i = 0; i < hw; ++i) {
      float mx = base[i];
      for (int64_t ci = 1; ci < x.c(); ++ci)
        mx = std::max(mx, base[ci * cstride + i]);
      float sum = 0.0f;
      for (int64_t ci = 0; ci < x.c(); ++ci) {
        float e = std::exp(base[ci * cstride + i] - mx);
        out[ci * cstride + i] = e;
        sum += e;
      }
      float inv = 1.0f / sum;
      for (int64_t ci = 0; ci < x.c(); ++ci) out[ci * cstride + i] *= inv;
    }
  }
  y.check_finite("softmax");
  return y;
}

Tensor avg_pool2d(const Tensor& x, int64_t window, int64_t stride) {
  GNV3_CHECK_ARG(window >= 1 && stride >= 1, "pool window/stride must be >= 1");
  GNV3_CHECK_SHAPE(x.h() >= window && x.w() >= window,
                   "pool window " << window << " larger than input "
                                  << x.h() << "x" << x.w());
  int64_t oh = (x.h() - window) / stride + 1;
  int64_t ow = (x.w() - window) / stride + 1;
  Tensor y(x.n(), x.c(), oh, ow);
  float inv = 1.0f / static_cast<float>(window * window);
  for (int64_t in = 0; in < x.n(); ++in) {
    for (int64_t ci = 0; ci < x.c(); ++ci) {
      const float* src = x.plane(in, ci);
      float* dst = y.plane(in, ci);
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          float sum = 0.0f;
          for (int64_t ky = 0; ky < window; ++ky) {
            const float* row = src + (oy * stride + ky) * x.w() + ox * stride;
            for (int64_t kx = 0; kx < window; ++kx) sum += row[kx];
          }
          dst[oy * ow + ox] = sum * inv;
        }
      }
    }
  }
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  Tensor y(x.n(), x.c(), 1, 1);
  int64_t hw = x.h() * x.w();
  float inv = 1.0f / static_cast<float>(hw);
  for (int64_t idx = 0; idx < x.n() * x.c(); ++idx) {
    const float* src = x.data() + idx * hw;
    float sum = 0.0f;
    for (int64_t i = 0; i < hw; ++i) sum += src[i];
    y.data()[idx] = sum * inv;
  }
  return y;
}

Tensor nearest_upsample(const Tensor& x, int64_t factor) {
  GNV3_CHECK_ARG(factor >= 1, "upsample factor must be >= 1");
  return nearest_resize(x, x.h() * factor, x.w() * factor);
}

Tensor nearest_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
  GNV3_CHECK_ARG(out_h >= 1 && out_w >= 1, "resize target must be >= 1");
  Tensor y(x.n(), x.c(), out_h, out_w);
  for (int64_t idx = 0; idx < x.n() * x.c(); ++idx) {
    const float* src = x.data() + idx * x.h() * x.w();
    float* dst = y.data() + idx * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const float* srow = src + (oy * x.h() / out_h) * x.w();
      float* drow = dst + oy * out_w;
      for (int64_t ox = 0; ox < out_w; ++ox) drow[ox] = srow[ox * x.w() / out_w];
    }
  }
  return y;
}

Tensor linear(const Tensor& x_flat, const Tensor& weight, const Vec& bias) {
  int64_t features = x_flat.c() * x_flat.h() * x_flat.w();
  int64_t out = weight.n();
  GNV3_CHECK_SHAPE(weight.c() * weight.h() * weight.w() == features,
                   "linear weight expects " << weight.c() * weight.h() * weight.w()
                                            << " features, input has " << features);
  GNV3_CHECK_SHAPE(static_cast<int64_t>(bias.size()) == out,
                   "linear bias length mismatch");
  Tensor y(x_flat.n(), out, 1, 1);
  for (int64_t in = 0; in < x_flat.n(); ++in) {
    const float* xv = x_flat.data() + in * features;
    float* dst = y.data() + in * out;
    for (int64_t o = 0; o < out; ++o) {
      const float* wv = weight.data() + o * features;
      float acc = bias[o];
      for (int64_t f = 0; f < features; ++f) acc += wv[f] * xv[f];
      dst[o] = acc;
    }
  }
  y.check_finite("linear");
  return y;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  GNV3_CHECK_SHAPE(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
                   "concat_channels inputs must match on n/h/w: "
                       << a.shape().str() << " vs " << b.shape().str());
  Tensor y(a.n(), a.c() + b.c(), a.h(), a.w());
  int64_t hw = a.h() * a.w();
  for (int64_t in = 0; in < a.n(); ++in) {
    std::memcpy(y.plane(in, 0), a.plane(in, 0), sizeof(float) * a.c() * hw);
    std::memcpy(y.plane(in, a.c()), b.plane(in, 0), sizeof(float) * b.c() * hw);
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  GNV3_CHECK_SHAPE(a.shape() == b.shape(), "add shape mismatch");
  Tensor y(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) y.data()[i] = a.data()[i] + b.data()[i];
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  GNV3_CHECK_SHAPE(a.shape() == b.shape(), "mul shape mismatch");
  Tensor y(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) y.data()[i] = a.data()[i] * b.data()[i];
  return y;
}

void add_inplace(Tensor& acc, const Tensor& t) {
  GNV3_CHECK_SHAPE(acc.shape() == t.shape(), "add_inplace shape mismatch");
  for (int64_t i = 0; i < acc.numel(); ++i) acc.data()[i] += t.data()[i];
}

void scale_inplace(Tensor& t, float s) {
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] *= s;
}

}  // namespace gnv3
