#include "gnv3/reparam.hpp"

#include <cmath>

namespace gnv3 {

void RepSpec::validate() const {
  GNV3_CHECK_ARG(c_in >= 1 && c_out >= 1, "rep set needs positive channel counts");
  GNV3_CHECK_ARG(k >= 1 && k % 2 == 1, "rep set kernel size must be odd, got " << k);
  GNV3_CHECK_ARG(stride == 1 || stride == 2, "rep set stride must be 1 or 2");
  GNV3_CHECK_ARG(n_main >= 1, "rep set needs at least one main branch");
  GNV3_CHECK_ARG(c_in % groups == 0 && c_out % groups == 0,
                 "rep set channels must divide groups");
  if (with_1x1) {
    GNV3_CHECK_ARG(depthwise() && k > 1,
                   "the extra 1x1 branch is defined for depthwise k>1 layers only");
  }
  if (with_identity) {
    GNV3_CHECK_ARG(c_in == c_out && stride == 1,
                   "identity branch requires c_in == c_out and stride 1");
  }
}

static ConvKernel make_branch_conv(const RepSpec& s, int64_t k,
                                   std::mt19937_64& rng) {
  ConvKernel conv;
  int64_t fan_in = (s.c_in / s.groups) * k * k;
  float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
  conv.weight = Tensor::randn(Shape4{s.c_out, s.c_in / s.groups, k, k}, rng, stddev);
  conv.stride_h = conv.stride_w = s.stride;
  conv.pad_h = conv.pad_w = (k - 1) / 2;
  conv.groups = s.groups;
  return conv;
}

RepBranchSet RepBranchSet::init(const RepSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  RepBranchSet set;
  set.spec = spec;
  for (int i = 0; i < spec.n_main; ++i) {
    RepBranch b;
    b.kind = BranchKind::main;
    b.conv = make_branch_conv(spec, spec.k, rng);
    b.bn = BatchNormParams::identity(spec.c_out, spec.bn_eps);
    b.bn.momentum = spec.bn_momentum;
    set.branches.push_back(std::move(b));
  }
  if (spec.with_1x1) {
    RepBranch b;
    b.kind = BranchKind::one_by_one;
    b.conv = make_branch_conv(spec, 1, rng);
    b.bn = BatchNormParams::identity(spec.c_out, spec.bn_eps);
    b.bn.momentum = spec.bn_momentum;
    set.branches.push_back(std::move(b));
  }
  if (spec.with_identity) {
    RepBranch b;
    b.kind = BranchKind::identity;
    b.bn = BatchNormParams::identity(spec.c_out, spec.bn_eps);
    b.bn.momentum = spec.bn_momentum;
    set.branches.push_back(std::move(b));
  }
  return set;
}

ConvKernel FoldedConv::as_kernel() const {
  ConvKernel k;
  k.weight = weight;
  k.bias = bias;
  k.stride_h = k.stride_w = stride;
  k.pad_h = pad_h;
  k.pad_w = pad_w;
  k.groups = groups;
  return k;
}

Tensor forward_multibranch(RepBranchSet& set, const Tensor& x, Mode mode,
                           RepSetCache* cache) {
  set.spec.validate();
  GNV3_CHECK_SHAPE(x.c() == set.spec.c_in,
                   "rep set expects " << set.spec.c_in << " channels, got " << x.c());
  if (cache) {
    cache->x = x;
    cache->conv_out.clear();
    cache->stats.clear();
  }
  Tensor sum;
  for (auto& branch : set.branches) {
    Tensor z = branch.kind == BranchKind::identity ? x : conv2d(x, branch.conv);
    Tensor y;
    if (mode == Mode::train) {
      BnBatchStats stats;
      y = batchnorm_train(z, branch.bn, &stats);
      if (cache) {
        cache->conv_out.push_back(branch.kind == BranchKind::identity ? Tensor() : z);
        cache->stats.push_back(std::move(stats));
      }
    } else {
      y = batchnorm_infer(z, branch.bn);
    }
    if (sum.empty()) {
      sum = std::move(y);
    } else {
      GNV3_CHECK_SHAPE(sum.shape() == y.shape(),
                       "rep branches disagree on output shape: "
                           << sum.shape().str() << " vs " << y.shape().str());
      add_inplace(sum, y);
    }
  }
  return sum;
}

Tensor forward_multibranch(const RepBranchSet& set, const Tensor& x) {
  set.spec.validate();
  GNV3_CHECK_SHAPE(x.c() == set.spec.c_in,
                   "rep set expects " << set.spec.c_in << " channels, got " << x.c());
  Tensor sum;
  for (const auto& branch : set.branches) {
    Tensor z = branch.kind == BranchKind::identity ? x : conv2d(x, branch.conv);
    Tensor y = batchnorm_infer(z, branch.bn);
    if (sum.empty()) {
      sum = std::move(y);
    } else {
      GNV3_CHECK_SHAPE(sum.shape() == y.shape(),
                       "rep branches disagree on output shape");
      add_inplace(sum, y);
    }
  }
  return sum;
}

RepSetGrads backward_multibranch(const RepBranchSet& set, const RepSetCache& cache,
                                 const Tensor& d_out) {
  GNV3_CHECK_ARG(cache.stats.size() == set.branches.size(),
                 "rep backward cache does not match branch count");
  RepSetGrads grads;
  grads.d_input = Tensor(cache.x.shape());
  for (size_t i = 0; i < set.branches.size(); ++i) {
    const RepBranch& branch = set.branches[i];
    const Tensor& z =
        branch.kind == BranchKind::identity ? cache.x : cache.conv_out[i];
    BnGrad bn_grad = backward_batchnorm_train(z, branch.bn, cache.stats[i], d_out);
    RepBranchGrad bg;
    bg.d_gamma = std::move(bn_grad.d_gamma);
    bg.d_beta = std::move(bn_grad.d_beta);
    if (branch.kind == BranchKind::identity) {
      add_inplace(grads.d_input, bn_grad.d_input);
    } else {
      ConvGrad conv_grad = backward_conv2d(cache.x, branch.conv, bn_grad.d_input);
      bg.d_weight = std::move(conv_grad.d_weight);
      add_inplace(grads.d_input, conv_grad.d_input);
    }
    grads.branches.push_back(std::move(bg));
  }
  return grads;
}

FoldedConv fold_conv_bn(const ConvKernel& conv, const BatchNormParams& bn) {
  conv.validate();
  bn.validate();
  GNV3_CHECK_SHAPE(bn.channels() == conv.c_out(),
                   "fold: BN channels " << bn.channels() << " != conv c_out "
                                        << conv.c_out());
  FoldedConv f;
  f.weight = Tensor(conv.weight.shape());
  f.bias.assign(conv.c_out(), 0.0f);
  f.stride = conv.stride_h;
  f.pad_h = conv.pad_h;
  f.pad_w = conv.pad_w;
  f.groups = conv.groups;
  int64_t per_out = conv.weight.c() * conv.weight.h() * conv.weight.w();
  for (int64_t o = 0; o < conv.c_out(); ++o) {
    float scale = bn.gamma[o] / std::sqrt(bn.running_var[o] + bn.eps);
    const float* src = conv.weight.data() + o * per_out;
    float* dst = f.weight.data() + o * per_out;
    for (int64_t i = 0; i < per_out; ++i) dst[i] = src[i] * scale;
    float b = conv.bias ? (*conv.bias)[o] : 0.0f;
    f.bias[o] = (b - bn.running_mean[o]) * scale + bn.beta[o];
  }
  f.weight.check_finite("fold_conv_bn");
  return f;
}

FoldedConv embed_kernel(const FoldedConv& small, int64_t target_k) {
  GNV3_CHECK_ARG(target_k % 2 == 1, "embed target kernel size must be odd");
  int64_t k = small.weight.h();
  GNV3_CHECK_ARG(k == small.weight.w() && k % 2 == 1, "embed expects a square odd kernel");
  GNV3_CHECK_ARG(target_k >= k, "embed target " << target_k << " smaller than kernel " << k);
  if (k == target_k) return small;
  FoldedConv f;
  f.weight = Tensor(small.weight.n(), small.weight.c(), target_k, target_k);
  f.bias = small.bias;
  f.stride = small.stride;
  f.pad_h = f.pad_w = (target_k - 1) / 2;
  f.groups = small.groups;
  int64_t off = (target_k - k) / 2;
  for (int64_t o = 0; o < small.weight.n(); ++o) {
    for (int64_t ci = 0; ci < small.weight.c(); ++ci) {
      for (int64_t y = 0; y < k; ++y) {
        for (int64_t x = 0; x < k; ++x) {
          f.weight.at(o, ci, y + off, x + off) = small.weight.at(o, ci, y, x);
        }
      }
    }
  }
  return f;
}

FoldedConv merge_branches(const std::vector<FoldedConv>& folded) {
  GNV3_CHECK_ARG(!folded.empty(), "merge_branches needs at least one input");
  FoldedConv out = folded.front();
  for (size_t i = 1; i < folded.size(); ++i) {
    const FoldedConv& f = folded[i];
    GNV3_CHECK_SHAPE(f.weight.shape() == out.weight.shape() &&
                         f.stride == out.stride && f.pad_h == out.pad_h &&
                         f.pad_w == out.pad_w && f.groups == out.groups,
                     "merge_branches inputs disagree on geometry");
    for (int64_t j = 0; j < out.weight.numel(); ++j)
      out.weight.data()[j] += f.weight.data()[j];
    for (size_t j = 0; j < out.bias.size(); ++j) out.bias[j] += f.bias[j];
  }
  return out;
}

// BN-only identity branch as an equivalent 1x1 conv with a unit kernel.
static FoldedConv fold_identity(const RepSpec& spec, const BatchNormParams& bn) {
  ConvKernel unit;
  unit.weight = Tensor(spec.c_out, spec.c_in / spec.groups, 1, 1);
  unit.stride_h = unit.stride_w = 1;
  unit.pad_h = unit.pad_w = 0;
  unit.groups = spec.groups;
  int64_t cg = spec.c_in / spec.groups;
  for (int64_t o = 0; o < spec.c_out; ++o) {
    int64_t group = o / (spec.c_out / spec.groups);
    int64_t j = o - group * cg;
    if (j >= 0 && j < cg) unit.weight.at(o, j, 0, 0) = 1.0f;
  }
  return fold_conv_bn(unit, bn);
}

FoldedConv reparameterize(const RepBranchSet& set) {
  set.spec.validate();
  std::vector<FoldedConv> folded;
  folded.reserve(set.branches.size());
  for (const auto& branch : set.branches) {
    FoldedConv f = branch.kind == BranchKind::identity
                       ? fold_identity(set.spec, branch.bn)
                       : fold_conv_bn(branch.conv, branch.bn);
    folded.push_back(embed_kernel(f, set.spec.k));
  }
  return merge_branches(folded);
}

int64_t count_params(const RepBranchSet& set) {
  int64_t total = 0;
  for (const auto& branch : set.branches) {
    if (branch.kind != BranchKind::identity) total += branch.conv.weight.numel();
    total += 2 * branch.bn.channels();  // gamma + beta
  }
  return total;
}

int64_t count_params(const FoldedConv& folded) {
  return folded.weight.numel() + static_cast<int64_t>(folded.bias.size());
}

}  // namespace gnv3
