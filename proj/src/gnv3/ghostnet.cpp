#include "gnv3/ghostnet.hpp"

#include <cmath>

#include "gnv3/common.hpp"

namespace gnv3 {

namespace {

Tensor he_weights(int64_t c_out, int64_t cg_in, int64_t kh, int64_t kw,
                  std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(cg_in) * kh * kw;
  const float stddev = static_cast<float>(std::sqrt(2.0 / fan_in));
  return Tensor::randn(Shape4{c_out, cg_in, kh, kw}, rng, stddev);
}

ConvBnLayer make_conv_bn(int64_t c_in, int64_t c_out, int64_t kh, int64_t kw,
                         int64_t stride, int64_t pad_h, int64_t pad_w,
                         int64_t groups, std::mt19937_64& rng) {
  ConvBnLayer l;
  l.conv.weight = he_weights(c_out, c_in / groups, kh, kw, rng);
  l.conv.stride_h = stride;
  l.conv.stride_w = stride;
  l.conv.pad_h = pad_h;
  l.conv.pad_w = pad_w;
  l.conv.groups = groups;
  l.conv.validate();
  l.bn = BatchNormParams::identity(c_out);
  return l;
}

// Splits c_out into intrinsic/ghost and checks the grouped cheap op divides.
void ghost_split(int64_t c_out, double ratio, int64_t* intrinsic, int64_t* ghost) {
  int64_t intr = static_cast<int64_t>(std::llround(c_out * ratio));
  intr = std::max<int64_t>(1, std::min(c_out - 1, intr));
  const int64_t gh = c_out - intr;
  GNV3_CHECK_ARG(gh % intr == 0,
                 "ghost channels (" + std::to_string(gh) +
                     ") must be a multiple of intrinsic channels (" +
                     std::to_string(intr) + ")");
  *intrinsic = intr;
  *ghost = gh;
}

GhostModule make_ghost(const ModelSpec& ms, int64_t c_in, int64_t c_out,
                       bool use_relu, bool attention, std::mt19937_64& rng) {
  GhostModule g;
  g.c_in = c_in;
  g.c_out = c_out;
  g.use_relu = use_relu;
  g.literal_cheap = ms.literal_cheap;
  g.gate_before_concat = ms.gate_before_concat;
  ghost_split(c_out, ms.ratio, &g.intrinsic, &g.ghost);

  RepSpec p;
  p.c_in = c_in;
  p.c_out = g.intrinsic;
  p.k = 1;
  p.stride = 1;
  p.groups = 1;
  p.n_main = ms.rep_n;
  p.with_1x1 = false;
  p.with_identity = ms.rep_identity && c_in == g.intrinsic;
  g.primary.spec = p;
  g.primary.set = RepBranchSet::init(p, rng);

  RepSpec c;
  c.c_in = ms.literal_cheap ? c_in : g.intrinsic;
  c.c_out = g.ghost;
  c.k = 3;
  c.stride = 1;
  c.groups = c.c_in;
  GNV3_CHECK_ARG(c.c_out % c.groups == 0,
                 "cheap op cannot group " + std::to_string(c.c_in) +
                     " channels into " + std::to_string(c.c_out));
  c.n_main = ms.rep_n;
  c.with_1x1 = ms.rep_1x1_dw && c.c_in == c.c_out;
  c.with_identity = ms.rep_identity && c.c_in == c.c_out;
  g.cheap.spec = c;
  g.cheap.set = RepBranchSet::init(c, rng);

  if (attention) {
    const int64_t gated = ms.gate_before_concat ? g.intrinsic : c_out;
    DfcAttention d;
    d.reduce = make_conv_bn(c_in, gated, 1, 1, 1, 0, 0, 1, rng);
    d.strip_h = make_conv_bn(gated, gated, 1, 5, 1, 0, 2, gated, rng);
    d.strip_v = make_conv_bn(gated, gated, 5, 1, 1, 2, 0, gated, rng);
    g.attention = std::move(d);
  }
  return g;
}

Bottleneck make_bottleneck(const ModelSpec& ms, int64_t c_in, const StageSpec& st,
                           std::mt19937_64& rng) {
  const int64_t exp_c = ModelSpec::scale_channels(st.exp, ms.width);
  const int64_t out_c = ModelSpec::scale_channels(st.out, ms.width);
  Bottleneck b;
  b.c_in = c_in;
  b.c_out = out_c;
  b.stride = st.stride;
  b.expand = make_ghost(ms, c_in, exp_c, /*relu=*/true, st.attention, rng);

  RepSpec mid;
  mid.c_in = exp_c;
  mid.c_out = exp_c;
  mid.k = st.k;
  mid.stride = st.stride;
  mid.groups = exp_c;
  mid.n_main = ms.rep_n;
  mid.with_1x1 = ms.rep_1x1_dw && st.k > 1;
  mid.with_identity = ms.rep_identity && st.stride == 1;
  b.mid_dw.spec = mid;
  b.mid_dw.set = RepBranchSet::init(mid, rng);

  b.project = make_ghost(ms, exp_c, out_c, /*relu=*/false, false, rng);

  if (st.stride != 1 || c_in != out_c) {
    const int64_t pad = (st.k - 1) / 2;
    b.sc_dw = make_conv_bn(c_in, c_in, st.k, st.k, st.stride, pad, pad, c_in, rng);
    b.sc_pw = make_conv_bn(c_in, out_c, 1, 1, 1, 0, 0, 1, rng);
  }
  return b;
}

int64_t conv_macs(const ConvKernel& k, int64_t oh, int64_t ow) {
  return oh * ow * k.c_out() * (k.c_in() / k.groups) * k.k_h() * k.k_w();
}

void conv_out_size(int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t s,
                   int64_t ph, int64_t pw, int64_t* oh, int64_t* ow) {
  *oh = (h + 2 * ph - kh) / s + 1;
  *ow = (w + 2 * pw - kw) / s + 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

int64_t ModelSpec::scale_channels(int64_t c, double width) {
  const int64_t rounded = 4 * std::llround(c * width / 4.0);
  return std::max<int64_t>(4, rounded);
}

void ModelSpec::validate() const {
  GNV3_CHECK_ARG(in_channels >= 1, "in_channels must be positive");
  GNV3_CHECK_ARG(num_classes >= 2, "need at least two classes");
  GNV3_CHECK_ARG(stem_channels >= 1, "stem_channels must be positive");
  GNV3_CHECK_ARG(width > 0.0, "width multiplier must be positive");
  GNV3_CHECK_ARG(ratio > 0.0 && ratio < 1.0, "ratio must lie in (0, 1)");
  GNV3_CHECK_ARG(rep_n >= 1, "rep_n must be at least 1");
  GNV3_CHECK_ARG(!stages.empty(), "model needs at least one stage");
  for (const auto& s : stages) {
    GNV3_CHECK_ARG(s.exp >= 1 && s.out >= 1, "stage channels must be positive");
    GNV3_CHECK_ARG(s.stride == 1 || s.stride == 2, "stage stride must be 1 or 2");
    GNV3_CHECK_ARG(s.k >= 1 && s.k % 2 == 1, "stage kernel must be odd");
  }
}

ModelSpec mini_spec(int64_t num_classes, double width) {
  ModelSpec m;
  m.num_classes = num_classes;
  m.width = width;
  m.stem_channels = 8;
  m.final_expand = 64;
  m.stages = {
      {16, 12, 3, 1, false},
      {24, 16, 3, 2, false},
      {32, 24, 3, 2, true},
      {48, 32, 3, 1, true},
  };
  return m;
}

ModelSpec full_spec(int64_t num_classes, double width) {
  ModelSpec m;
  m.num_classes = num_classes;
  m.width = width;
  m.stem_channels = 16;
  m.final_expand = 960;
  m.stages = {
      {16, 16, 3, 1, false},   {48, 24, 3, 2, false},  {72, 24, 3, 1, false},
      {72, 40, 5, 2, true},    {120, 40, 5, 1, true},  {240, 80, 3, 2, false},
      {200, 80, 3, 1, false},  {184, 80, 3, 1, false}, {184, 80, 3, 1, false},
      {480, 112, 3, 1, true},  {672, 112, 3, 1, true}, {672, 160, 5, 2, true},
      {960, 160, 5, 1, false}, {960, 160, 5, 1, true}, {960, 160, 5, 1, false},
      {960, 160, 5, 1, true},
  };
  return m;
}

// ---------------------------------------------------------------------------
// GradSink
// ---------------------------------------------------------------------------

void GradSink::bind(const float* param, float* grad, int64_t size) {
  GNV3_CHECK_ARG(param != nullptr && grad != nullptr, "null gradient binding");
  map_[param] = {grad, size};
}

void GradSink::add(const float* param, const float* g, int64_t size) {
  auto it = map_.find(param);
  GNV3_CHECK(it != map_.end(), ErrorCode::internal,
             "gradient produced for an unbound parameter");
  GNV3_CHECK(it->second.second == size, ErrorCode::internal,
             "gradient size does not match its parameter");
  float* dst = it->second.first;
  for (int64_t i = 0; i < size; ++i) dst[i] += g[i];
}

// ---------------------------------------------------------------------------
// ConvBnLayer
// ---------------------------------------------------------------------------

Tensor ConvBnLayer::forward(const Tensor& x, Mode mode, Cache* cache) {
  if (folded) {
    GNV3_CHECK_ARG(mode == Mode::infer, "training forward on a folded layer");
    return conv2d(x, folded->as_kernel());
  }
  Tensor z = conv2d(x, conv);
  if (mode == Mode::infer) return batchnorm_infer(z, bn);
  BnBatchStats stats;
  Tensor y = batchnorm_train(z, bn, &stats);
  if (cache) {
    cache->x = x;
    cache->z = std::move(z);
    cache->stats = std::move(stats);
  }
  return y;
}

Tensor ConvBnLayer::forward_infer(const Tensor& x) const {
  if (folded) return conv2d(x, folded->as_kernel());
  return batchnorm_infer(conv2d(x, conv), bn);
}

Tensor ConvBnLayer::backward(const Cache& cache, const Tensor& d_out,
                             GradSink& sink) const {
  GNV3_CHECK(!folded, ErrorCode::internal, "backward through a folded layer");
  BnGrad bg = backward_batchnorm_train(cache.z, bn, cache.stats, d_out);
  sink.add(bn.gamma, bg.d_gamma);
  sink.add(bn.beta, bg.d_beta);
  ConvGrad cg = backward_conv2d(cache.x, conv, bg.d_input);
  sink.add(conv.weight, cg.d_weight);
  return std::move(cg.d_input);
}

void ConvBnLayer::fold() {
  if (folded) return;
  folded = fold_conv_bn(conv, bn);
  conv = ConvKernel{};
  bn = BatchNormParams{};
}

void ConvBnLayer::collect_slots(const std::string& prefix,
                                std::vector<TensorSlot>& out) {
  auto push = [&](const std::string& name, float* data, int64_t size,
                  std::vector<int64_t> dims, bool learnable, bool decay) {
    out.push_back(TensorSlot{prefix + name, data, size, std::move(dims),
                             learnable, decay});
  };
  if (folded) {
    Tensor& w = folded->weight;
    push(".w", w.data(), w.numel(), {w.n(), w.c(), w.h(), w.w()}, true, true);
    push(".b", folded->bias.data(), static_cast<int64_t>(folded->bias.size()),
         {static_cast<int64_t>(folded->bias.size())}, true, false);
    return;
  }
  Tensor& w = conv.weight;
  push(".conv.w", w.data(), w.numel(), {w.n(), w.c(), w.h(), w.w()}, true, true);
  const int64_t c = bn.channels();
  push(".bn.g", bn.gamma.data(), c, {c}, true, false);
  push(".bn.b", bn.beta.data(), c, {c}, true, false);
  push(".bn.rm", bn.running_mean.data(), c, {c}, false, false);
  push(".bn.rv", bn.running_var.data(), c, {c}, false, false);
}

// ---------------------------------------------------------------------------
// RepLayer
// ---------------------------------------------------------------------------

Tensor RepLayer::forward(const Tensor& x, Mode mode, RepSetCache* cache) {
  if (folded) {
    GNV3_CHECK_ARG(mode == Mode::infer, "training forward on a folded layer");
    return conv2d(x, folded->as_kernel());
  }
  return forward_multibranch(*set, x, mode, cache);
}

Tensor RepLayer::forward_infer(const Tensor& x) const {
  if (folded) return conv2d(x, folded->as_kernel());
  return forward_multibranch(*set, x);
}

Tensor RepLayer::backward(const RepSetCache& cache, const Tensor& d_out,
                          GradSink& sink) const {
  GNV3_CHECK(set.has_value(), ErrorCode::internal,
             "backward through a folded layer");
  RepSetGrads g = backward_multibranch(*set, cache, d_out);
  for (size_t i = 0; i < set->branches.size(); ++i) {
    const RepBranch& br = set->branches[i];
    if (br.kind != BranchKind::identity)
      sink.add(br.conv.weight, g.branches[i].d_weight);
    sink.add(br.bn.gamma, g.branches[i].d_gamma);
    sink.add(br.bn.beta, g.branches[i].d_beta);
  }
  return std::move(g.d_input);
}

void RepLayer::fold() {
  if (folded) return;
  folded = reparameterize(*set);
  set.reset();
}

void RepLayer::collect_slots(const std::string& prefix,
                             std::vector<TensorSlot>& out) {
  if (folded) {
    Tensor& w = folded->weight;
    out.push_back(TensorSlot{prefix + ".w", w.data(), w.numel(),
                             {w.n(), w.c(), w.h(), w.w()}, true, true});
    out.push_back(TensorSlot{prefix + ".b", folded->bias.data(),
                             static_cast<int64_t>(folded->bias.size()),
                             {static_cast<int64_t>(folded->bias.size())},
                             true, false});
    return;
  }
  int main_idx = 0;
  for (auto& br : set->branches) {
    std::string base = prefix;
    switch (br.kind) {
      case BranchKind::main: base += ".m" + std::to_string(main_idx++); break;
      case BranchKind::one_by_one: base += ".pw"; break;
      case BranchKind::identity: base += ".id"; break;
    }
    if (br.kind != BranchKind::identity) {
      Tensor& w = br.conv.weight;
      out.push_back(TensorSlot{base + ".conv.w", w.data(), w.numel(),
                               {w.n(), w.c(), w.h(), w.w()}, true, true});
    }
    const int64_t c = br.bn.channels();
    out.push_back(TensorSlot{base + ".bn.g", br.bn.gamma.data(), c, {c}, true, false});
    out.push_back(TensorSlot{base + ".bn.b", br.bn.beta.data(), c, {c}, true, false});
    out.push_back(
        TensorSlot{base + ".bn.rm", br.bn.running_mean.data(), c, {c}, false, false});
    out.push_back(
        TensorSlot{base + ".bn.rv", br.bn.running_var.data(), c, {c}, false, false});
  }
}

// ---------------------------------------------------------------------------
// DfcAttention
// ---------------------------------------------------------------------------

Tensor DfcAttention::forward(const Tensor& x, int64_t out_h, int64_t out_w,
                             Mode mode, Cache* cache) {
  Tensor pooled = avg_pool2d(x, 2, 2);
  Tensor r = reduce.forward(pooled, mode, cache ? &cache->reduce_c : nullptr);
  Tensor h = strip_h.forward(r, mode, cache ? &cache->h_c : nullptr);
  Tensor v = strip_v.forward(h, mode, cache ? &cache->v_c : nullptr);
  Tensor g = sigmoid(v);
  Tensor gate = nearest_resize(g, out_h, out_w);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->pre_sigmoid_out = std::move(v);
    cache->gate_small = std::move(g);
    cache->in_shape = x.shape();
  }
  return gate;
}

Tensor DfcAttention::forward_infer(const Tensor& x, int64_t out_h,
                                   int64_t out_w) const {
  Tensor g = sigmoid(strip_v.forward_infer(
      strip_h.forward_infer(reduce.forward_infer(avg_pool2d(x, 2, 2)))));
  return nearest_resize(g, out_h, out_w);
}

Tensor DfcAttention::backward(const Cache& cache, const Tensor& d_gate,
                              GradSink& sink) const {
  Tensor d_small = backward_nearest_resize(cache.gate_small.shape(), d_gate);
  Tensor d_v = backward_sigmoid(cache.gate_small, d_small);
  Tensor d_h = strip_v.backward(cache.v_c, d_v, sink);
  Tensor d_r = strip_h.backward(cache.h_c, d_h, sink);
  Tensor d_pooled = reduce.backward(cache.reduce_c, d_r, sink);
  return backward_avg_pool2d(cache.in_shape, 2, 2, d_pooled);
}

// ---------------------------------------------------------------------------
// GhostModule
// ---------------------------------------------------------------------------

Tensor GhostModule::forward(const Tensor& x, Mode mode, Cache* cache) {
  GNV3_CHECK_SHAPE(x.c() == c_in, "ghost module channel mismatch");
  Tensor y1 = primary.forward(x, mode, cache ? &cache->primary_c : nullptr);
  Tensor a1 = use_relu ? relu(y1) : y1;

  Tensor out;
  if (attention && gate_before_concat) {
    Tensor gate = attention->forward(x, a1.h(), a1.w(), mode,
                                     cache ? &cache->dfc_c : nullptr);
    Tensor ga1 = mul(a1, gate);
    const Tensor& cheap_in = literal_cheap ? x : ga1;
    Tensor y2 = cheap.forward(cheap_in, mode, cache ? &cache->cheap_c : nullptr);
    Tensor a2 = use_relu ? relu(y2) : y2;
    out = concat_channels(ga1, a2);
    if (cache) {
      cache->gate = std::move(gate);
      cache->gated_a1 = std::move(ga1);
      cache->y2 = std::move(y2);
      cache->a2 = std::move(a2);
    }
  } else {
    const Tensor& cheap_in = literal_cheap ? x : a1;
    Tensor y2 = cheap.forward(cheap_in, mode, cache ? &cache->cheap_c : nullptr);
    Tensor a2 = use_relu ? relu(y2) : y2;
    Tensor pre = concat_channels(a1, a2);
    if (attention) {
      Tensor gate = attention->forward(x, pre.h(), pre.w(), mode,
                                       cache ? &cache->dfc_c : nullptr);
      out = mul(pre, gate);
      if (cache) {
        cache->gate = std::move(gate);
        cache->pre_gate = pre;
      }
    } else {
      out = pre;
    }
    if (cache) {
      cache->y2 = std::move(y2);
      cache->a2 = std::move(a2);
    }
  }
  if (cache) {
    cache->x = x;
    cache->y1 = std::move(y1);
    cache->a1 = std::move(a1);
  }
  return out;
}

Tensor GhostModule::forward_infer(const Tensor& x) const {
  GNV3_CHECK_SHAPE(x.c() == c_in, "ghost module channel mismatch");
  Tensor y1 = primary.forward_infer(x);
  Tensor a1 = use_relu ? relu(y1) : std::move(y1);
  if (attention && gate_before_concat) {
    Tensor gate = attention->forward_infer(x, a1.h(), a1.w());
    Tensor ga1 = mul(a1, gate);
    Tensor y2 = cheap.forward_infer(literal_cheap ? x : ga1);
    Tensor a2 = use_relu ? relu(y2) : std::move(y2);
    return concat_channels(ga1, a2);
  }
  Tensor y2 = cheap.forward_infer(literal_cheap ? x : a1);
  Tensor a2 = use_relu ? relu(y2) : std::move(y2);
  Tensor pre = concat_channels(a1, a2);
  if (!attention) return pre;
  Tensor gate = attention->forward_infer(x, pre.h(), pre.w());
  return mul(pre, gate);
}

Tensor GhostModule::backward(const Cache& cache, const Tensor& d_out,
                             GradSink& sink) const {
  Tensor d_x;
  if (attention && gate_before_concat) {
    Tensor d_ga1(cache.gated_a1.shape()), d_a2(cache.a2.shape());
    split_channels(d_out, intrinsic, d_ga1, d_a2);
    Tensor d_y2 = use_relu ? backward_relu(cache.a2, d_a2) : std::move(d_a2);
    Tensor d_ci = cheap.backward(cache.cheap_c, d_y2, sink);
    if (literal_cheap) {
      d_x = std::move(d_ci);
    } else {
      add_inplace(d_ga1, d_ci);
    }
    Tensor d_a1 = mul(d_ga1, cache.gate);
    Tensor d_gate = mul(d_ga1, cache.a1);
    Tensor d_x_att = attention->backward(cache.dfc_c, d_gate, sink);
    Tensor d_y1 = use_relu ? backward_relu(cache.a1, d_a1) : std::move(d_a1);
    Tensor d_x_p = primary.backward(cache.primary_c, d_y1, sink);
    if (d_x.storage().empty()) d_x = Tensor::zeros(d_x_p.shape());
    add_inplace(d_x, d_x_p);
    add_inplace(d_x, d_x_att);
    return d_x;
  }

  Tensor d_pre;
  Tensor d_x_att;
  if (attention) {
    d_pre = mul(d_out, cache.gate);
    Tensor d_gate = mul(d_out, cache.pre_gate);
    d_x_att = attention->backward(cache.dfc_c, d_gate, sink);
  } else {
    d_pre = d_out;
  }
  Tensor d_a1(cache.a1.shape()), d_a2(cache.a2.shape());
  split_channels(d_pre, intrinsic, d_a1, d_a2);
  Tensor d_y2 = use_relu ? backward_relu(cache.a2, d_a2) : std::move(d_a2);
  Tensor d_ci = cheap.backward(cache.cheap_c, d_y2, sink);
  if (literal_cheap) {
    d_x = std::move(d_ci);
  } else {
    add_inplace(d_a1, d_ci);
  }
  Tensor d_y1 = use_relu ? backward_relu(cache.a1, d_a1) : std::move(d_a1);
  Tensor d_x_p = primary.backward(cache.primary_c, d_y1, sink);
  if (d_x.storage().empty())
    d_x = std::move(d_x_p);
  else
    add_inplace(d_x, d_x_p);
  if (!d_x_att.storage().empty()) add_inplace(d_x, d_x_att);
  return d_x;
}

// ---------------------------------------------------------------------------
// Bottleneck
// ---------------------------------------------------------------------------

Tensor Bottleneck::forward(const Tensor& x, Mode mode, Cache* cache) {
  Tensor e = expand.forward(x, mode, cache ? &cache->expand_c : nullptr);
  Tensor m = mid_dw.forward(e, mode, cache ? &cache->mid_c : nullptr);
  Tensor p = project.forward(m, mode, cache ? &cache->project_c : nullptr);

  Tensor sc;
  if (sc_dw) {
    Tensor s1 = sc_dw->forward(x, mode, cache ? &cache->sc_dw_c : nullptr);
    sc = sc_pw->forward(s1, mode, cache ? &cache->sc_pw_c : nullptr);
    if (cache) cache->sc_dw_out = std::move(s1);
  } else {
    sc = x;
  }
  if (cache) cache->x = x;
  return add(p, sc);
}

Tensor Bottleneck::forward_infer(const Tensor& x) const {
  Tensor p = project.forward_infer(
      mid_dw.forward_infer(expand.forward_infer(x)));
  if (!sc_dw) return add(p, x);
  return add(p, sc_pw->forward_infer(sc_dw->forward_infer(x)));
}

Tensor Bottleneck::backward(const Cache& cache, const Tensor& d_out,
                            GradSink& sink) const {
  Tensor d_m = project.backward(cache.project_c, d_out, sink);
  Tensor d_e = mid_dw.backward(cache.mid_c, d_m, sink);
  Tensor d_x = expand.backward(cache.expand_c, d_e, sink);
  if (sc_dw) {
    Tensor d_s1 = sc_pw->backward(cache.sc_pw_c, d_out, sink);
    Tensor d_sc = sc_dw->backward(cache.sc_dw_c, d_s1, sink);
    add_inplace(d_x, d_sc);
  } else {
    add_inplace(d_x, d_out);
  }
  return d_x;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Tensor Model::forward_train(const Tensor& x, Cache& cache) {
  GNV3_CHECK_ARG(!folded, "training forward on a folded model");
  cache.input = x;
  cache.block_c.resize(blocks.size());
  Tensor s = stem.forward(x, Mode::train, &cache.stem_c);
  cache.stem_out = s;
  Tensor t = relu(s);
  cache.stem_act = t;
  for (size_t i = 0; i < blocks.size(); ++i)
    t = blocks[i].forward(t, Mode::train, &cache.block_c[i]);
  cache.trunk_out = t;
  if (pre_head) {
    Tensor f = pre_head->forward(t, Mode::train, &cache.final_c);
    cache.final_out = f;
    t = relu(f);
    cache.final_act = t;
  }
  cache.pooled = global_avg_pool(t);
  return linear(cache.pooled, fc_weight, fc_bias);
}

Tensor Model::forward(const Tensor& x) const {
  Tensor t = relu(stem.forward_infer(x));
  for (const auto& b : blocks) t = b.forward_infer(t);
  if (pre_head) t = relu(pre_head->forward_infer(t));
  return linear(global_avg_pool(t), fc_weight, fc_bias);
}

void Model::backward(const Cache& cache, const Tensor& d_logits,
                     GradSink& sink) const {
  LinearGrad lg = backward_linear(cache.pooled, fc_weight, d_logits);
  sink.add(fc_weight, lg.d_weight);
  sink.add(fc_bias, lg.d_bias);

  const Tensor& pre_pool = pre_head ? cache.final_act : cache.trunk_out;
  Tensor d = backward_global_avg_pool(pre_pool.shape(), lg.d_input);
  if (pre_head) {
    Tensor d_f = backward_relu(cache.final_act, d);
    d = pre_head->backward(cache.final_c, d_f, sink);
  }
  for (size_t i = blocks.size(); i-- > 0;)
    d = blocks[i].backward(cache.block_c[i], d, sink);
  Tensor d_s = backward_relu(cache.stem_act, d);
  stem.backward(cache.stem_c, d_s, sink);
}

std::vector<TensorSlot> Model::slots() {
  std::vector<TensorSlot> out;
  stem.collect_slots("stem", out);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string b = "blk" + std::to_string(i);
    Bottleneck& bl = blocks[i];
    auto ghost_slots = [&](GhostModule& g, const std::string& prefix) {
      g.primary.collect_slots(prefix + ".p", out);
      g.cheap.collect_slots(prefix + ".c", out);
      if (g.attention) {
        g.attention->reduce.collect_slots(prefix + ".att.red", out);
        g.attention->strip_h.collect_slots(prefix + ".att.h", out);
        g.attention->strip_v.collect_slots(prefix + ".att.v", out);
      }
    };
    ghost_slots(bl.expand, b + ".ex");
    bl.mid_dw.collect_slots(b + ".mid", out);
    ghost_slots(bl.project, b + ".pr");
    if (bl.sc_dw) {
      bl.sc_dw->collect_slots(b + ".sc.dw", out);
      bl.sc_pw->collect_slots(b + ".sc.pw", out);
    }
  }
  if (pre_head) pre_head->collect_slots("pre_head", out);
  Tensor& w = fc_weight;
  out.push_back(TensorSlot{"head.w", w.data(), w.numel(),
                           {w.n(), w.c(), w.h(), w.w()}, true, true});
  out.push_back(TensorSlot{"head.b", fc_bias.data(),
                           static_cast<int64_t>(fc_bias.size()),
                           {static_cast<int64_t>(fc_bias.size())}, true, false});
  return out;
}

int64_t Model::feature_channels() const { return fc_weight.c(); }

// ---------------------------------------------------------------------------
// Free-function wrappers
// ---------------------------------------------------------------------------

Tensor ghost_module_forward(GhostModule& m, const Tensor& x, Mode mode) {
  if (mode == Mode::infer) return m.forward_infer(x);
  return m.forward(x, Mode::train, nullptr);
}

Tensor dfc_attention(DfcAttention& d, const Tensor& x, int64_t out_h,
                     int64_t out_w, Mode mode) {
  if (mode == Mode::infer) return d.forward_infer(x, out_h, out_w);
  return d.forward(x, out_h, out_w, Mode::train, nullptr);
}

Tensor bottleneck_forward(Bottleneck& b, const Tensor& x, Mode mode) {
  if (mode == Mode::infer) return b.forward_infer(x);
  return b.forward(x, Mode::train, nullptr);
}

// ---------------------------------------------------------------------------
// Build / fold
// ---------------------------------------------------------------------------

std::unique_ptr<Model> build_model(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  auto m = std::make_unique<Model>();
  m->spec = spec;
  std::mt19937_64 rng(mix_seed(seed, 0x6d6f64656cULL));

  const int64_t stem_c = ModelSpec::scale_channels(spec.stem_channels, spec.width);
  m->stem = make_conv_bn(spec.in_channels, stem_c, 3, 3, 2, 1, 1, 1, rng);

  int64_t c = stem_c;
  for (const auto& st : spec.stages) {
    m->blocks.push_back(make_bottleneck(spec, c, st, rng));
    c = m->blocks.back().c_out;
  }

  int64_t features = c;
  if (spec.final_expand > 0) {
    const int64_t fe = ModelSpec::scale_channels(spec.final_expand, spec.width);
    m->pre_head = make_conv_bn(c, fe, 1, 1, 1, 0, 0, 1, rng);
    features = fe;
  }

  const float bound = static_cast<float>(1.0 / std::sqrt(double(features)));
  m->fc_weight = Tensor::uniform(Shape4{spec.num_classes, features, 1, 1}, rng,
                                 -bound, bound);
  Tensor fb = Tensor::uniform(Shape4{1, spec.num_classes, 1, 1}, rng, -bound, bound);
  m->fc_bias.assign(fb.data(), fb.data() + spec.num_classes);
  return m;
}

std::unique_ptr<Model> fold_model(const Model& src) {
  auto m = std::make_unique<Model>(src);
  m->stem.fold();
  for (auto& b : m->blocks) {
    auto fold_ghost = [](GhostModule& g) {
      g.primary.fold();
      g.cheap.fold();
      if (g.attention) {
        g.attention->reduce.fold();
        g.attention->strip_h.fold();
        g.attention->strip_v.fold();
      }
    };
    fold_ghost(b.expand);
    b.mid_dw.fold();
    fold_ghost(b.project);
    if (b.sc_dw) {
      b.sc_dw->fold();
      b.sc_pw->fold();
    }
  }
  if (m->pre_head) m->pre_head->fold();
  m->folded = true;
  return m;
}

// ---------------------------------------------------------------------------
// Counting
// ---------------------------------------------------------------------------

int64_t count_params(Model& m) {
  int64_t total = 0;
  for (const auto& s : m.slots())
    if (s.learnable) total += s.size;
  return total;
}

namespace {

// Accumulates inference-form arithmetic for the model as structured now.
struct CostWalk {
  int64_t flops = 0;

  void conv_bn(const ConvBnLayer& l, int64_t& h, int64_t& w) {
    const ConvKernel k = l.folded ? l.folded->as_kernel() : l.conv;
    int64_t oh, ow;
    conv_out_size(h, w, k.k_h(), k.k_w(), k.stride_h, k.pad_h, k.pad_w, &oh, &ow);
    flops += conv_macs(k, oh, ow);
    if (!l.folded) flops += 2 * k.c_out() * oh * ow;  // scale + shift
    h = oh;
    w = ow;
  }

  void rep(const RepLayer& l, int64_t& h, int64_t& w) {
    if (l.folded) {
      const ConvKernel k = l.folded->as_kernel();
      int64_t oh, ow;
      conv_out_size(h, w, k.k_h(), k.k_w(), k.stride_h, k.pad_h, k.pad_w, &oh, &ow);
      flops += conv_macs(k, oh, ow);
      h = oh;
      w = ow;
      return;
    }
    const RepSpec& s = l.spec;
    const int64_t oh = (h + 2 * ((s.k - 1) / 2) - s.k) / s.stride + 1;
    const int64_t ow = (w + 2 * ((s.k - 1) / 2) - s.k) / s.stride + 1;
    const int64_t out_elems = s.c_out * oh * ow;
    for (const auto& br : l.set->branches) {
      if (br.kind != BranchKind::identity)
        flops += out_elems * (s.c_in / s.groups) * br.conv.k_h() * br.conv.k_w();
      flops += 2 * out_elems;  // BN
    }
    flops += (static_cast<int64_t>(l.set->branches.size()) - 1) * out_elems;
    h = oh;
    w = ow;
  }

  void elementwise(int64_t c, int64_t h, int64_t w, int64_t per_elem) {
    flops += per_elem * c * h * w;
  }

  void attention(const DfcAttention& d, int64_t c_in, int64_t h, int64_t w,
                 int64_t gated_c) {
    int64_t ph = h / 2, pw = w / 2;
    flops += c_in * ph * pw * 4;  // average pool, window 2x2
    int64_t th = ph, tw = pw;
    conv_bn(d.reduce, th, tw);
    conv_bn(d.strip_h, th, tw);
    conv_bn(d.strip_v, th, tw);
    elementwise(gated_c, th, tw, 4);  // sigmoid
    elementwise(gated_c, h, w, 1);    // upsample copy + gating handled by caller
  }

  void ghost(const GhostModule& g, int64_t h, int64_t w) {
    int64_t th = h, tw = w;
    rep(g.primary, th, tw);
    if (g.use_relu) elementwise(g.intrinsic, th, tw, 1);
    int64_t ch = th, cw = tw;
    rep(g.cheap, ch, cw);
    if (g.use_relu) elementwise(g.ghost, ch, cw, 1);
    if (g.attention) {
      const int64_t gated = g.gate_before_concat ? g.intrinsic : g.c_out;
      attention(*g.attention, g.c_in, h, w, gated);
      elementwise(gated, th, tw, 1);  // gate multiply
    }
  }
};

}  // namespace

int64_t count_flops(Model& m, int64_t in_h, int64_t in_w) {
  CostWalk cw;
  int64_t h = in_h, w = in_w;
  cw.conv_bn(m.stem, h, w);
  int64_t c = m.stem.folded ? m.stem.folded->weight.n() : m.stem.conv.c_out();
  cw.elementwise(c, h, w, 1);  // stem ReLU
  for (const auto& b : m.blocks) {
    const int64_t ih = h, iw = w;
    cw.ghost(b.expand, h, w);
    cw.rep(b.mid_dw, h, w);
    cw.ghost(b.project, h, w);
    if (b.sc_dw) {
      int64_t sh = ih, sw = iw;
      cw.conv_bn(*b.sc_dw, sh, sw);
      cw.conv_bn(*b.sc_pw, sh, sw);
    }
    cw.elementwise(b.c_out, h, w, 1);  // residual add
  }
  if (m.pre_head) {
    cw.conv_bn(*m.pre_head, h, w);
    const int64_t fc = m.feature_channels();
    cw.elementwise(fc, h, w, 1);  // ReLU
  }
  const int64_t feat = m.feature_channels();
  cw.flops += feat * h * w;  // global average pool
  cw.flops += m.fc_weight.n() * feat;
  return cw.flops;
}

CostPair ghost_vs_ordinary_cost(int64_t c_in, int64_t c_out, int64_t k,
                                int64_t h, int64_t w, double ratio) {
  GNV3_CHECK_ARG(c_in >= 1 && c_out >= 2 && k >= 1 && h >= 1 && w >= 1,
                 "invalid ghost cost query");
  int64_t intr = 0, gh = 0;
  ghost_split(c_out, ratio, &intr, &gh);
  CostPair p;
  p.conv_params = c_out * c_in * k * k + c_out;
  p.conv_flops = h * w * c_out * c_in * k * k;
  p.ghost_params = intr * c_in + intr + gh * 3 * 3 + gh;
  p.ghost_flops = h * w * (intr * c_in) + h * w * (gh * 3 * 3);
  return p;
}

}  // namespace gnv3
