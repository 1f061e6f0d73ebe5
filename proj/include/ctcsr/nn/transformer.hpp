// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctcsr/nn/layers.hpp"

namespace ctcsr {

struct AttentionConfig {
  int channels = 32;
  int heads = 1;
  double gdfn_expansion = 2.0;
  // true: 1x1 pointwise then 3x3 depthwise for Q/K/V; false: reversed.
  bool qkv_pointwise_first = true;
  double ln_eps = 1e-6;

  AttentionConfig with_channels(int c) const {
    AttentionConfig a = *this;
    a.channels = c;
    return a;
  }
};

// Channel-wise LayerNorm at each spatial position, learnable affine.
template <typename T>
class LayerNormCh {
 public:
  LayerNormCh() = default;
  LayerNormCh(int c, double eps) : eps_(static_cast<T>(eps)) {
    gamma = make_var(Tensor<T>::full({c}, T(1)), true);
    beta = make_var(Tensor<T>({c}), true);
  }

  Var<T> forward(const Var<T>& x) const { return layer_norm_ch(x, gamma, beta, eps_); }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    fn(p + ".gamma", gamma);
    fn(p + ".beta", beta);
  }

  Var<T> gamma, beta;

 private:
  T eps_ = T(1e-6);
};

// Transposed self-attention over channels: the attention map is
// (heads, C/heads, C/heads) rather than (HW, HW). Residual is added by the
// caller.
template <typename T>
class MDTA {
 public:
  MDTA() = default;
  MDTA(const AttentionConfig& cfg, Rng& rng)
      : channels_(cfg.channels), heads_(cfg.heads), pw_first_(cfg.qkv_pointwise_first) {
    if (channels_ % heads_ != 0)
      throw std::invalid_argument("mdta: channels not divisible by heads");
    ln = LayerNormCh<T>(channels_, cfg.ln_eps);
    for (int i = 0; i < 3; ++i) {
      pconv[i] = Conv2d<T>(channels_, channels_, 1, 1, 0, rng);
      dconv[i] = Conv2d<T>(channels_, channels_, 3, 1, 1, rng, channels_);
    }
    temperature =
        make_var(Tensor<T>::full({heads_}, static_cast<T>(std::sqrt(double(channels_) / heads_))),
                 true);
    out_conv = Conv2d<T>(channels_, channels_, 1, 1, 0, rng);
  }

  Var<T> project(int i, const Var<T>& x) const {
    return pw_first_ ? dconv[i].forward(pconv[i].forward(x))
                     : pconv[i].forward(dconv[i].forward(x));
  }

  Var<T> forward(const Var<T>& x) {
    int n = x->value.dim(0), h = x->value.dim(2), w = x->value.dim(3);
    int ch = channels_ / heads_;
    int hw = h * w;
    auto xn = ln.forward(x);
    auto q = reshape(project(0, xn), {n * heads_, ch, hw});
    auto k = reshape(project(1, xn), {n * heads_, ch, hw});
    auto v = reshape(project(2, xn), {n * heads_, ch, hw});
    auto logits = div_by_head_scalar(bmm(q, k, true), temperature, heads_);
    auto att = softmax_last(logits);
    last_attention = att;
    auto xw = reshape(bmm(att, v), {n, channels_, h, w});
    return out_conv.forward(xw);
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    ln.visit(p + ".ln", fn);
    static const char* names[3] = {"q", "k", "v"};
    for (int i = 0; i < 3; ++i) {
      pconv[i].visit(p + "." + names[i] + "_pconv", fn);
      dconv[i].visit(p + "." + names[i] + "_dconv", fn);
    }
    fn(p + ".temperature", temperature);
    out_conv.visit(p + ".out", fn);
  }

  LayerNormCh<T> ln;
  Conv2d<T> pconv[3], dconv[3];
  Conv2d<T> out_conv;
  Var<T> temperature;
  Var<T> last_attention;  // most recent softmax output, retained for tests

 private:
  int channels_ = 0, heads_ = 1;
  bool pw_first_ = true;
};

// Gated feed-forward: expand, depthwise conv, self-gate with GELU, project
// back. Residual added by the caller.
template <typename T>
class GDFN {
 public:
  GDFN() = default;
  GDFN(const AttentionConfig& cfg, Rng& rng) : channels_(cfg.channels) {
    int hidden = static_cast<int>(double(channels_) * cfg.gdfn_expansion);
    if (hidden < channels_) hidden = channels_;
    ln = LayerNormCh<T>(channels_, cfg.ln_eps);
    pconv_in = Conv2d<T>(channels_, hidden, 1, 1, 0, rng);
    dconv = Conv2d<T>(hidden, hidden, 3, 1, 1, rng, hidden);
    pconv_out = Conv2d<T>(hidden, channels_, 1, 1, 0, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    auto h = dconv.forward(pconv_in.forward(ln.forward(x)));
    return pconv_out.forward(mul(h, gelu_op(h)));
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    ln.visit(p + ".ln", fn);
    pconv_in.visit(p + ".pconv_in", fn);
    dconv.visit(p + ".dconv", fn);
    pconv_out.visit(p + ".pconv_out", fn);
  }

  LayerNormCh<T> ln;
  Conv2d<T> pconv_in, dconv, pconv_out;

 private:
  int channels_ = 0;
};

// Pre-norm residual pair: y = x + mdta(x); out = y + gdfn(y).
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const AttentionConfig& cfg, Rng& rng) : mdta(cfg, rng), gdfn(cfg, rng) {}

  Var<T> forward(const Var<T>& x) {
    auto y = add(x, mdta.forward(x));
    return add(y, gdfn.forward(y));
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    mdta.visit(p + ".mdta", fn);
    gdfn.visit(p + ".gdfn", fn);
  }

  MDTA<T> mdta;
  GDFN<T> gdfn;
};

}  // namespace ctcsr
