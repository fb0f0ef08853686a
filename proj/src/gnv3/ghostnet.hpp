#pragma once

#include <functional>
#include <memory>
#include <unordered_map>

#include "gnv3/reparam.hpp"

namespace gnv3 {

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

struct StageSpec {
  int64_t exp = 0;      // expansion channels
  int64_t out = 0;      // output channels
  int64_t k = 3;        // depthwise kernel size
  int64_t stride = 1;
  bool attention = false;
};

struct ModelSpec {
  int64_t in_channels = 3;
  int64_t num_classes = 10;
  int64_t stem_channels = 16;
  int64_t final_expand = 0;  // optional 1x1 stage before pooling; 0 disables
  double width = 1.0;
  double ratio = 0.5;        // intrinsic channel fraction of the ghost module
  int rep_n = 3;             // re-parameterization factor N
  bool rep_1x1_dw = true;    // extra 1x1 branch on depthwise rep layers
  bool rep_identity = false; // BN-only identity branch (off by default)
  bool literal_cheap = false;     // cheap op reads the module input, not Y'
  bool gate_before_concat = false;
  std::vector<StageSpec> stages;

  void validate() const;
  // Nearest multiple of 4 after the width multiplier, minimum 4.
  static int64_t scale_channels(int64_t c, double width);
};

// Desk-scale default (4 stages, <=64 channels).
ModelSpec mini_spec(int64_t num_classes, double width = 1.0);
// Full-size layout mirroring the GhostNet family stage table. The published
// V3 table is not available, so this is a reconstruction, not a reference.
ModelSpec full_spec(int64_t num_classes, double width = 1.0);

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct TensorSlot {
  std::string name;
  float* data = nullptr;
  int64_t size = 0;
  std::vector<int64_t> dims;
  bool learnable = true;
  bool decay = false;
};

// Routes per-layer gradients into trainer-owned buffers, keyed by the
// parameter's storage address.
class GradSink {
 public:
  void bind(const float* param, float* grad, int64_t size);
  void add(const float* param, const float* g, int64_t size);
  void add(const Tensor& param, const Tensor& g) {
    add(param.data(), g.data(), param.numel());
  }
  void add(const Vec& param, const Vec& g) {
    add(param.data(), g.data(), static_cast<int64_t>(param.size()));
  }

 private:
  std::unordered_map<const float*, std::pair<float*, int64_t>> map_;
};

// Plain conv + BN pair (stem, attention convs, shortcut convs). Folds to a
// single conv at inference like every other conv+BN in the model.
struct ConvBnLayer {
  ConvKernel conv;
  BatchNormParams bn;
  std::optional<FoldedConv> folded;

  struct Cache {
    Tensor x, z;
    BnBatchStats stats;
  };

  Tensor forward(const Tensor& x, Mode mode, Cache* cache);
  Tensor forward_infer(const Tensor& x) const;
  Tensor backward(const Cache& cache, const Tensor& d_out, GradSink& sink) const;
  void fold();
  void collect_slots(const std::string& prefix, std::vector<TensorSlot>& out);
};

// Re-parameterizable layer: multi-branch set while training, single conv
// once folded.
struct RepLayer {
  RepSpec spec;
  std::optional<RepBranchSet> set;
  std::optional<FoldedConv> folded;

  bool is_folded() const { return folded.has_value(); }
  Tensor forward(const Tensor& x, Mode mode, RepSetCache* cache);
  Tensor forward_infer(const Tensor& x) const;
  Tensor backward(const RepSetCache& cache, const Tensor& d_out, GradSink& sink) const;
  void fold();
  void collect_slots(const std::string& prefix, std::vector<TensorSlot>& out);
};

// Decoupled fully-connected attention: pool /2, pointwise transform, then
// horizontal and vertical strip convolutions, sigmoid gate, upsample back.
struct DfcAttention {
  ConvBnLayer reduce;   // 1x1, c_in -> c_gate
  ConvBnLayer strip_h;  // 1x5 depthwise
  ConvBnLayer strip_v;  // 5x1 depthwise

  struct Cache {
    Tensor pooled;
    ConvBnLayer::Cache reduce_c, h_c, v_c;
    Tensor pre_sigmoid_out;  // strip_v output
    Tensor gate_small;       // sigmoid output at pooled resolution
    Shape4 in_shape;
  };

  Tensor forward(const Tensor& x, int64_t out_h, int64_t out_w, Mode mode,
                 Cache* cache);
  Tensor forward_infer(const Tensor& x, int64_t out_h, int64_t out_w) const;
  Tensor backward(const Cache& cache, const Tensor& d_gate, GradSink& sink) const;
};

struct GhostModule {
  RepLayer primary;  // 1x1, c_in -> intrinsic
  RepLayer cheap;    // 3x3 grouped over intrinsic channels -> ghost
  std::optional<DfcAttention> attention;
  int64_t c_in = 0, c_out = 0, intrinsic = 0, ghost = 0;
  bool use_relu = true;
  bool literal_cheap = false;
  bool gate_before_concat = false;

  struct Cache {
    Tensor x;
    RepSetCache primary_c, cheap_c;
    Tensor y1, a1, y2, a2;
    Tensor gate, gated_a1, pre_gate;
    DfcAttention::Cache dfc_c;
  };

  Tensor forward(const Tensor& x, Mode mode, Cache* cache);
  Tensor forward_infer(const Tensor& x) const;
  Tensor backward(const Cache& cache, const Tensor& d_out, GradSink& sink) const;
};

struct Bottleneck {
  GhostModule expand;   // with ReLU (+ attention when configured)
  RepLayer mid_dw;      // k x k depthwise, stride s
  GhostModule project;  // no activation
  std::optional<ConvBnLayer> sc_dw;  // shortcut: depthwise k x k stride s
  std::optional<ConvBnLayer> sc_pw;  // shortcut: 1x1
  int64_t c_in = 0, c_out = 0, stride = 1;

  struct Cache {
    Tensor x;
    GhostModule::Cache expand_c, project_c;
    RepSetCache mid_c;
    ConvBnLayer::Cache sc_dw_c, sc_pw_c;
    Tensor sc_dw_out;
  };

  Tensor forward(const Tensor& x, Mode mode, Cache* cache);
  Tensor forward_infer(const Tensor& x) const;
  Tensor backward(const Cache& cache, const Tensor& d_out, GradSink& sink) const;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class Model {
 public:
  struct Cache {
    Tensor input;
    ConvBnLayer::Cache stem_c;
    Tensor stem_out, stem_act;
    std::vector<Bottleneck::Cache> block_c;
    Tensor trunk_out;
    ConvBnLayer::Cache final_c;
    Tensor final_out, final_act;
    Tensor pooled;
  };

  ModelSpec spec;  // raw spec (pre width scaling); resolved channels live in layers
  ConvBnLayer stem;
  std::vector<Bottleneck> blocks;
  std::optional<ConvBnLayer> pre_head;
  Tensor fc_weight;  // (classes, features, 1, 1)
  Vec fc_bias;
  bool folded = false;

  // Logits (n, classes, 1, 1).
  Tensor forward_train(const Tensor& x, Cache& cache);
  Tensor forward(const Tensor& x) const;  // inference; read-only
  void backward(const Cache& cache, const Tensor& d_logits, GradSink& sink) const;

  std::vector<TensorSlot> slots();
  int64_t feature_channels() const;  // input width of the classifier
};

Tensor ghost_module_forward(GhostModule& m, const Tensor& x, Mode mode);
Tensor dfc_attention(DfcAttention& d, const Tensor& x, int64_t out_h, int64_t out_w,
                     Mode mode);
Tensor bottleneck_forward(Bottleneck& b, const Tensor& x, Mode mode);

std::unique_ptr<Model> build_model(const ModelSpec& spec, uint64_t seed);
// Replaces every rep set / conv+BN pair with its folded conv. Folding an
// already-folded model is a no-op.
std::unique_ptr<Model> fold_model(const Model& m);

int64_t count_params(Model& m);
// Multiply-accumulates of the model as currently structured (multi-branch
// counts every branch; folded counts the single conv), plus elementwise work
// for BN/activations/pool/gating. Bias adds are not counted.
int64_t count_flops(Model& m, int64_t in_h, int64_t in_w);

// Exact inference-form cost of one ghost module vs the ordinary convolution
// of identical (c_in, c_out, k) at spatial size h x w. Used to check the
// cheap-operation saving as integers.
struct CostPair {
  int64_t ghost_params = 0, conv_params = 0;
  int64_t ghost_flops = 0, conv_flops = 0;
};
CostPair ghost_vs_ordinary_cost(int64_t c_in, int64_t c_out, int64_t k,
                                int64_t h, int64_t w, double ratio = 0.5);

}  // namespace gnv3
