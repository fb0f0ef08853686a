#pragma once

#include <vector>

#include "gnv3/grad.hpp"
#include "gnv3/ops.hpp"

namespace gnv3 {

enum class Mode { train, infer };

enum class BranchKind {
  main,        // k x k, padding (k-1)/2
  one_by_one,  // 1 x 1, padding 0, embedded before merging
  identity,    // BN only; folds to a centred unit kernel
};

struct RepBranch {
  BranchKind kind = BranchKind::main;
  ConvKernel conv;  // unused for identity branches
  BatchNormParams bn;
};

// Layer geometry shared by every branch of one set.
struct RepSpec {
  int64_t c_in = 0, c_out = 0;
  int64_t k = 3;
  int64_t stride = 1;
  int64_t groups = 1;
  int n_main = 1;            // re-parameterization factor N
  bool with_1x1 = false;     // extra 1x1 depthwise branch (depthwise sets only)
  bool with_identity = false;
  float bn_eps = 1e-5f;
  float bn_momentum = 0.1f;

  bool depthwise() const { return groups == c_in && groups == c_out; }
  void validate() const;
};

// Training-time form of one logical conv layer: parallel (conv, BN) branches
// summed elementwise. No nonlinearity inside the set; activation is the
// caller's job after summation.
struct RepBranchSet {
  RepSpec spec;
  std::vector<RepBranch> branches;

  static RepBranchSet init(const RepSpec& spec, std::mt19937_64& rng);
};

// Inference-time product: one conv with bias, shaped like the main branch.
struct FoldedConv {
  Tensor weight;  // (c_out, c_in/groups, kh, kw)
  Vec bias;       // length c_out
  int64_t stride = 1;
  int64_t pad_h = 0, pad_w = 0;  // strip kernels fold to asymmetric padding
  int64_t groups = 1;

  ConvKernel as_kernel() const;
};

struct RepSetCache {
  Tensor x;
  std::vector<Tensor> conv_out;      // per branch (identity: empty)
  std::vector<BnBatchStats> stats;   // per branch
};

struct RepBranchGrad {
  Tensor d_weight;  // empty for identity branches
  Vec d_gamma, d_beta;
};

struct RepSetGrads {
  Tensor d_input;
  std::vector<RepBranchGrad> branches;
};

// Sum over branches of bn(conv(x)). Train mode normalizes with batch
// statistics and updates each branch's running stats; infer mode uses
// running statistics.
Tensor forward_multibranch(RepBranchSet& set, const Tensor& x, Mode mode,
                           RepSetCache* cache = nullptr);
// Inference-only overload for read-only access.
Tensor forward_multibranch(const RepBranchSet& set, const Tensor& x);

RepSetGrads backward_multibranch(const RepBranchSet& set, const RepSetCache& cache,
                                 const Tensor& d_out);

// Absorbs BN statistics into the conv:
//   W_hat[o] = W[o] * gamma[o] / sqrt(var[o] + eps)
//   b_hat[o] = (b[o] - mean[o]) * gamma[o] / sqrt(var[o] + eps) + beta[o]
FoldedConv fold_conv_bn(const ConvKernel& conv, const BatchNormParams& bn);

// Centre-embeds a small odd kernel into target_k x target_k zeros; the bias
// is unchanged and the padding becomes (target_k-1)/2.
FoldedConv embed_kernel(const FoldedConv& small, int64_t target_k);

// Elementwise weight and bias sum; all inputs must agree on shape, stride,
// padding and groups.
FoldedConv merge_branches(const std::vector<FoldedConv>& folded);

// Whole pipeline: fold every branch (identity branches become centred unit
// kernels first), align kernel sizes, merge. conv2d with the result matches
// forward_multibranch(set, x, infer) for every x.
FoldedConv reparameterize(const RepBranchSet& set);

// Learnable parameter count (conv weights + BN gamma/beta, or weight + bias
// once folded).
int64_t count_params(const RepBranchSet& set);
int64_t count_params(const FoldedConv& folded);

}  // namespace gnv3
