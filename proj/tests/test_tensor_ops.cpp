#include <cmath>
#include <random>

#include "doctest.h"
#include "gnv3/grad.hpp"
#include "gnv3/ops.hpp"
#include "gnv3/parallel.hpp"
#include "oracles.hpp"

using namespace gnv3;

namespace {

ConvKernel random_kernel(std::mt19937_64& rng, int64_t c_in, int64_t c_out,
                         int64_t k, int64_t stride, int64_t groups,
                         bool with_bias) {
  ConvKernel kk;
  kk.weight = Tensor::randn(Shape4{c_out, c_in / groups, k, k}, rng, 0.5f);
  kk.stride_h = kk.stride_w = stride;
  kk.pad_h = kk.pad_w = (k - 1) / 2;
  kk.groups = groups;
  if (with_bias) {
    Tensor b = Tensor::randn(Shape4{1, 1, 1, c_out}, rng, 0.5f);
    kk.bias = Vec(b.data(), b.data() + c_out);
  }
  return kk;
}

}  // namespace

TEST_CASE("conv2d matches the direct-loop oracle across random configs") {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> ch(1, 4), sp(5, 9);
    std::uniform_int_distribution<int> kpick(0, 2), spick(1, 2), gpick(0, 2);
    const int64_t k = 2 * kpick(rng) + 1;  // 1, 3, 5
    const int64_t stride = spick(rng);
    int64_t groups = 1, c_in = ch(rng) * 2, c_out = ch(rng) * 2;
    const int g = gpick(rng);
    if (g == 1) groups = 2;
    if (g == 2) {  // depthwise
      c_out = c_in;
      groups = c_in;
    }
    ConvKernel kk = random_kernel(rng, c_in, c_out, k, stride, groups,
                                  seed % 2 == 0);
    Tensor x = Tensor::randn(Shape4{2, c_in, sp(rng), sp(rng)}, rng);

    const Tensor got = conv2d(x, kk);
    const Tensor want32 = oracle::conv2d<float>(x, kk);
    const Tensor want64 = oracle::conv2d<double>(x, kk);
    REQUIRE(got.shape() == want32.shape());
    CHECK(oracle::max_rel_err(want32, got) <= 1e-5);
    CHECK(oracle::max_rel_err(want64, got) <= 1e-5);
  }
}

TEST_CASE("conv2d output shape follows the padding/stride arithmetic") {
  std::mt19937_64 rng(7);
  ConvKernel k = random_kernel(rng, 3, 8, 3, 2, 1, false);
  Tensor x = Tensor::randn(Shape4{1, 3, 11, 16}, rng);
  Tensor y = conv2d(x, k);
  CHECK(y.shape() == Shape4{1, 8, 6, 8});
}

TEST_CASE("conv2d rejects inconsistent geometry") {
  std::mt19937_64 rng(3);
  ConvKernel k = random_kernel(rng, 4, 4, 3, 1, 1, false);
  Tensor x = Tensor::randn(Shape4{1, 3, 8, 8}, rng);  // channel mismatch
  CHECK_THROWS_AS(conv2d(x, k), Error);
  ConvKernel bad_groups = random_kernel(rng, 4, 4, 3, 1, 2, false);
  bad_groups.groups = 3;  // does not divide channels
  CHECK_THROWS_AS(bad_groups.validate(), Error);
}

TEST_CASE("batchnorm_infer matches the scalar oracle") {
  std::mt19937_64 rng(11);
  const int64_t c = 5;
  Tensor x = Tensor::randn(Shape4{3, c, 6, 4}, rng);
  BatchNormParams p = BatchNormParams::identity(c);
  for (int64_t i = 0; i < c; ++i) {
    p.gamma[i] = 0.5f + 0.1f * i;
    p.beta[i] = -0.3f + 0.2f * i;
    p.running_mean[i] = 0.1f * i;
    p.running_var[i] = 0.5f + 0.25f * i;
  }
  const Tensor got = batchnorm_infer(x, p);
  const Tensor want = oracle::batchnorm(x, p.gamma, p.beta, p.running_mean,
                                        p.running_var, p.eps);
  CHECK(oracle::max_rel_err(want, got) <= 1e-6);
}

TEST_CASE("batchnorm_train normalizes with batch statistics") {
  std::mt19937_64 rng(13);
  const int64_t c = 3;
  Tensor x = Tensor::randn(Shape4{4, c, 5, 5}, rng, 2.0f);
  BatchNormParams p = BatchNormParams::identity(c);
  BnBatchStats stats;
  Tensor y = batchnorm_train(x, p, &stats);

  // Unit gamma / zero beta: per-channel output mean 0, variance 1.
  const int64_t per = x.n() * x.h() * x.w();
  for (int64_t ci = 0; ci < c; ++ci) {
    double s = 0.0, s2 = 0.0;
    for (int64_t in = 0; in < x.n(); ++in)
      for (int64_t iy = 0; iy < x.h(); ++iy)
        for (int64_t ix = 0; ix < x.w(); ++ix) {
          const double v = y.at(in, ci, iy, ix);
          s += v;
          s2 += v * v;
        }
    CHECK(std::abs(s / per) <= 1e-5);
    CHECK(std::abs(s2 / per - 1.0) <= 1e-4);
  }

  // Running stats moved from identity toward the batch statistics.
  for (int64_t ci = 0; ci < c; ++ci) {
    const double mu = stats.mean[ci];
    CHECK(p.running_mean[ci] == doctest::Approx(0.1 * mu).epsilon(1e-4));
    const double var_b = 1.0 / (stats.inv_std[ci] * stats.inv_std[ci]) - p.eps;
    const double var_u = var_b * per / (per - 1.0);
    CHECK(p.running_var[ci] ==
          doctest::Approx(0.9 + 0.1 * var_u).epsilon(1e-4));
  }
}

TEST_CASE("activations: relu / sigmoid / softmax basics") {
  std::mt19937_64 rng(17);
  Tensor x = Tensor::randn(Shape4{2, 4, 3, 3}, rng, 3.0f);
  Tensor r = relu(x);
  Tensor s = sigmoid(x);
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(r.data()[i] == (x.data()[i] > 0.0f ? x.data()[i] : 0.0f));
    CHECK(s.data()[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x.data()[i])))
                             .epsilon(1e-6));
  }

  Tensor sm = softmax(x);
  for (int64_t in = 0; in < x.n(); ++in)
    for (int64_t iy = 0; iy < x.h(); ++iy)
      for (int64_t ix = 0; ix < x.w(); ++ix) {
        double sum = 0.0;
        for (int64_t c = 0; c < x.c(); ++c) sum += sm.at(in, c, iy, ix);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
      }

  // Shift invariance.
  Tensor shifted = x;
  for (int64_t i = 0; i < x.numel(); ++i) shifted.data()[i] += 100.0f;
  Tensor sm2 = softmax(shifted);
  CHECK(oracle::max_rel_err(sm, sm2) <= 1e-4);
}

TEST_CASE("pooling and resize match oracles") {
  std::mt19937_64 rng(19);
  Tensor x = Tensor::randn(Shape4{2, 3, 8, 6}, rng);

  CHECK(oracle::max_rel_err(oracle::avg_pool2d(x, 2, 2), avg_pool2d(x, 2, 2)) <=
        1e-6);

  Tensor g = global_avg_pool(x);
  CHECK(g.shape() == Shape4{2, 3, 1, 1});
  double s = 0.0;
  for (int64_t iy = 0; iy < x.h(); ++iy)
    for (int64_t ix = 0; ix < x.w(); ++ix) s += x.at(1, 2, iy, ix);
  CHECK(g.at(1, 2, 0, 0) == doctest::Approx(s / (x.h() * x.w())).epsilon(1e-5));

  Tensor up = nearest_upsample(x, 2);
  CHECK(up.shape() == Shape4{2, 3, 16, 12});
  CHECK(oracle::max_rel_err(oracle::nearest_resize(x, 16, 12), up) == 0.0);

  Tensor rs = nearest_resize(x, 5, 9);
  CHECK(oracle::max_rel_err(oracle::nearest_resize(x, 5, 9), rs) == 0.0);

  // Downsample-by-2 then resize back: even indices survive exactly.
  Tensor down = nearest_resize(x, 4, 3);
  for (int64_t iy = 0; iy < 4; ++iy)
    for (int64_t ix = 0; ix < 3; ++ix)
      CHECK(down.at(0, 0, iy, ix) == x.at(0, 0, iy * 2, ix * 2));
}

TEST_CASE("linear computes a plain affine map") {
  std::mt19937_64 rng(23);
  Tensor x = Tensor::randn(Shape4{3, 6, 1, 1}, rng);
  Tensor w = Tensor::randn(Shape4{4, 6, 1, 1}, rng);
  Vec b = {0.1f, -0.2f, 0.3f, -0.4f};
  Tensor y = linear(x, w, b);
  CHECK(y.shape() == Shape4{3, 4, 1, 1});
  for (int64_t in = 0; in < 3; ++in)
    for (int64_t o = 0; o < 4; ++o) {
      double acc = b[o];
      for (int64_t f = 0; f < 6; ++f)
        acc += static_cast<double>(x.at(in, f, 0, 0)) * w.at(o, f, 0, 0);
      CHECK(y.at(in, o, 0, 0) == doctest::Approx(acc).epsilon(1e-5));
    }
}

TEST_CASE("concat_channels / split_channels round-trip") {
  std::mt19937_64 rng(29);
  Tensor a = Tensor::randn(Shape4{2, 3, 4, 4}, rng);
  Tensor b = Tensor::randn(Shape4{2, 5, 4, 4}, rng);
  Tensor cat = concat_channels(a, b);
  CHECK(cat.shape() == Shape4{2, 8, 4, 4});
  Tensor ra, rb;
  split_channels(cat, 3, ra, rb);
  CHECK(oracle::max_rel_err(a, ra) == 0.0);
  CHECK(oracle::max_rel_err(b, rb) == 0.0);

  Tensor c = Tensor::randn(Shape4{2, 3, 5, 4}, rng);
  CHECK_THROWS_AS(concat_channels(a, c), Error);
}

TEST_CASE("check_finite rejects NaN and Inf") {
  Tensor x(Shape4{1, 1, 2, 2});
  x.fill(1.0f);
  CHECK_NOTHROW(x.check_finite("test"));
  x.data()[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(x.check_finite("test"), Error);
  x.data()[3] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(x.check_finite("test"), Error);
}

TEST_CASE("conv2d results are bitwise identical across thread counts") {
  std::mt19937_64 rng(31);
  ConvKernel k = random_kernel(rng, 8, 16, 3, 1, 1, true);
  Tensor x = Tensor::randn(Shape4{4, 8, 16, 16}, rng);

  set_num_threads(1);
  Tensor y1 = conv2d(x, k);
  set_num_threads(4);
  Tensor y4 = conv2d(x, k);
  set_num_threads(0);

  REQUIRE(y1.numel() == y4.numel());
  for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y4.data()[i]);
}
