// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

#include "ctcsr/nn/layers.hpp"

namespace ctcsr {

struct BlockConfig {
  int in_channels = 32;
  int reduction_ratio = 16;   // channel-attention squeeze factor
  int min_squeeze = 4;        // lower clamp on the squeezed width
  double leaky_slope = 0.2;
  int hourglass_depth = 2;
  bool fsau_use_ca = true;
  bool fsau_use_sa = true;

  BlockConfig with_channels(int c) const {
    BlockConfig b = *this;
    b.in_channels = c;
    return b;
  }
  int squeeze_width() const {
    int w = in_channels / reduction_ratio;
    return w < min_squeeze ? min_squeeze : w;
  }
};

// Per-channel gating: pool -> squeeze conv -> LeakyReLU -> expand conv ->
// sigmoid -> rescale. Gates lie strictly in (0,1) for finite input.
template <typename T>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(const BlockConfig& cfg, Rng& rng)
      : channels_(cfg.in_channels), slope_(static_cast<T>(cfg.leaky_slope)) {
    int w = cfg.squeeze_width();
    squeeze = Conv2d<T>(channels_, w, 1, 1, 0, rng);
    expand = Conv2d<T>(w, channels_, 1, 1, 0, rng);
  }

  Var<T> gates(const Var<T>& x) const {
    if (x->value.dim(1) != channels_)
      throw std::invalid_argument("channel_attention: channel mismatch");
    int n = x->value.dim(0);
    auto g = reshape(global_avg_pool(x), {n, channels_, 1, 1});
    g = sigmoid_op(expand.forward(leaky_relu(squeeze.forward(g), slope_)));
    return reshape(g, {n, channels_});
  }

  Var<T> forward(const Var<T>& x) const { return scale_channels(x, gates(x)); }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    squeeze.visit(p + ".squeeze", fn);
    expand.visit(p + ".expand", fn);
  }

  Conv2d<T> squeeze, expand;

 private:
  int channels_ = 0;
  T slope_ = T(0.2);
};

// Reduce -> expand -> concat(input, expanded) -> 1x1 mix -> 3x3 back to C ->
// channel attention -> 3x3 refine -> + input.
template <typename T>
class AFDU {
 public:
  AFDU() = default;
  AFDU(const BlockConfig& cfg, Rng& rng) : slope_(static_cast<T>(cfg.leaky_slope)) {
    int c = cfg.in_channels;
    if (c % 2 != 0) throw std::invalid_argument("afdu: channel count must be even");
    reduce = Conv2d<T>(c, c / 2, 3, 1, 1, rng);
    expand = Conv2d<T>(c / 2, c, 3, 1, 1, rng);
    mix = Conv2d<T>(2 * c, 2 * c, 1, 1, 0, rng);
    shrink = Conv2d<T>(2 * c, c, 3, 1, 1, rng);
    ca = ChannelAttention<T>(cfg, rng);
    refine = Conv2d<T>(c, c, 3, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    auto r = leaky_relu(reduce.forward(x), slope_);
    auto e = leaky_relu(expand.forward(r), slope_);
    auto m = leaky_relu(mix.forward(concat_ch<T>({x, e})), slope_);
    auto s = leaky_relu(shrink.forward(m), slope_);
    return add(refine.forward(ca.forward(s)), x);
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    reduce.visit(p + ".reduce", fn);
    expand.visit(p + ".expand", fn);
    mix.visit(p + ".mix", fn);
    shrink.visit(p + ".shrink", fn);
    ca.visit(p + ".ca", fn);
    refine.visit(p + ".refine", fn);
  }

  Conv2d<T> reduce, expand, mix, shrink, refine;
  ChannelAttention<T> ca;

 private:
  T slope_ = T(0.2);
};

// Symmetric down/up stack with additive skips at every scale. Channel width
// is constant. nn_resample switches the resamplers to parameter-free nearest
// neighbour decimation/repetition (test hook; the level convs remain).
template <typename T>
class Hourglass {
 public:
  Hourglass() = default;
  Hourglass(const BlockConfig& cfg, Rng& rng)
      : depth_(cfg.hourglass_depth), slope_(static_cast<T>(cfg.leaky_slope)) {
    int c = cfg.in_channels;
    for (int i = 0; i < depth_; ++i) {
      down.emplace_back(c, c, 3, 2, 1, rng);
      up.emplace_back(c, c, 4, 2, 1, rng);
    }
    bottom = Conv2d<T>(c, c, 3, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    int div = 1 << depth_;
    if (x->value.dim(2) % div != 0 || x->value.dim(3) % div != 0)
      throw std::invalid_argument("hourglass: spatial size not divisible by 2^depth");
    std::vector<Var<T>> skips;
    Var<T> h = x;
    for (int i = 0; i < depth_; ++i) {
      skips.push_back(h);
      h = nn_resample ? nn_down2(h) : leaky_relu(down[static_cast<size_t>(i)].forward(h), slope_);
    }
    h = leaky_relu(bottom.forward(h), slope_);
    for (int i = depth_ - 1; i >= 0; --i) {
      h = nn_resample ? nn_up2(h) : leaky_relu(up[static_cast<size_t>(i)].forward(h), slope_);
      h = add(h, skips[static_cast<size_t>(i)]);
    }
    return h;
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    for (size_t i = 0; i < down.size(); ++i) down[i].visit(p + ".down" + std::to_string(i), fn);
    bottom.visit(p + ".bottom", fn);
    for (size_t i = 0; i < up.size(); ++i) up[i].visit(p + ".up" + std::to_string(i), fn);
  }

  std::vector<Conv2d<T>> down;
  std::vector<ConvTranspose2d<T>> up;
  Conv2d<T> bottom;
  bool nn_resample = false;

 private:
  int depth_ = 2;
  T slope_ = T(0.2);
};

// AFDU -> attention unit -> AFDU. The attention unit runs an hourglass, then
// channel attention, then a 3x3 conv + sigmoid producing a one-channel
// spatial map M; its output is u*M + u. With use_sa off the map branch is
// dropped entirely and the hourglass features are added back instead.
template <typename T>
class FSAU {
 public:
  FSAU() = default;
  FSAU(const BlockConfig& cfg, Rng& rng)
      : use_ca_(cfg.fsau_use_ca), use_sa_(cfg.fsau_use_sa) {
    afdu_in = AFDU<T>(cfg, rng);
    hg = Hourglass<T>(cfg, rng);
    if (use_ca_) ca = ChannelAttention<T>(cfg, rng);
    if (use_sa_) to_map = Conv2d<T>(cfg.in_channels, 1, 3, 1, 1, rng);
    afdu_out = AFDU<T>(cfg, rng);
  }

  Var<T> attention_unit(const Var<T>& u) const {
    auto t = hg.forward(u);
    if (use_ca_) t = ca.forward(t);
    if (!use_sa_) return add(u, t);
    auto m = sigmoid_op(to_map.forward(t));
    return add(scale_spatial(u, m), u);
  }

  Var<T> forward(const Var<T>& x) const {
    return afdu_out.forward(attention_unit(afdu_in.forward(x)));
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    afdu_in.visit(p + ".afdu_in", fn);
    hg.visit(p + ".hg", fn);
    if (use_ca_) ca.visit(p + ".ca", fn);
    if (use_sa_) to_map.visit(p + ".to_map", fn);
    afdu_out.visit(p + ".afdu_out", fn);
  }

  AFDU<T> afdu_in, afdu_out;
  Hourglass<T> hg;
  ChannelAttention<T> ca;
  Conv2d<T> to_map;

 private:
  bool use_ca_ = true;
  bool use_sa_ = true;
};

// 3x3 stride-2 conv (C -> 2C) -> LeakyReLU -> 3x3 conv. Halves spatial size.
template <typename T>
class DownsampleBlock {
 public:
  DownsampleBlock() = default;
  DownsampleBlock(int c, double slope, Rng& rng) : slope_(static_cast<T>(slope)) {
    conv_a = Conv2d<T>(c, 2 * c, 3, 2, 1, rng);
    conv_b = Conv2d<T>(2 * c, 2 * c, 3, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    if (x->value.dim(2) % 2 != 0 || x->value.dim(3) % 2 != 0)
      throw std::invalid_argument("downsample_block: spatial dims must be even");
    return conv_b.forward(leaky_relu(conv_a.forward(x), slope_));
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    conv_a.visit(p + ".conv_a", fn);
    conv_b.visit(p + ".conv_b", fn);
  }

  Conv2d<T> conv_a, conv_b;

 private:
  T slope_ = T(0.2);
};

// 6x6 stride-2 pad-2 transposed conv (C -> C/2) -> LeakyReLU -> 3x3 conv.
// Doubles spatial size.
template <typename T>
class UpsampleBlock {
 public:
  UpsampleBlock() = default;
  UpsampleBlock(int c, double slope, Rng& rng) : slope_(static_cast<T>(slope)) {
    if (c % 2 != 0) throw std::invalid_argument("upsample_block: channel count must be even");
    deconv = ConvTranspose2d<T>(c, c / 2, 6, 2, 2, rng);
    conv = Conv2d<T>(c / 2, c / 2, 3, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& x) const {
    return conv.forward(leaky_relu(deconv.forward(x), slope_));
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    deconv.visit(p + ".deconv", fn);
    conv.visit(p + ".conv", fn);
  }

  ConvTranspose2d<T> deconv;
  Conv2d<T> conv;

 private:
  T slope_ = T(0.2);
};

}  // namespace ctcsr
