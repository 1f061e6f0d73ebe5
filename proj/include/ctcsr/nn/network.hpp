// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "ctcsr/nn/blocks.hpp"
#include "ctcsr/nn/transformer.hpp"
#include "json.hpp"

namespace ctcsr {

enum class FusionMode { none, concat, add, concat_ca, add_ca };

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "concat") return FusionMode::concat;
  if (s == "add") return FusionMode::add;
  if (s == "concat+ca" || s == "concat_ca") return FusionMode::concat_ca;
  if (s == "add+ca" || s == "add_ca") return FusionMode::add_ca;
  throw std::invalid_argument("unknown fusion mode: " + s);
}

inline std::string fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::concat: return "concat";
    case FusionMode::add: return "add";
    case FusionMode::concat_ca: return "concat+ca";
    case FusionMode::add_ca: return "add+ca";
  }
  return "none";
}

struct AblationConfig {
  bool use_fsau = true;
  bool use_transformer = true;
  bool use_mffu = true;
  std::string mffu_fusion_mode = "concat+ca";
  bool use_feu_dual_branch = true;
  bool use_feu_selfcal = true;
  bool use_afdu = true;  // the AFDU applications inside FEU
  bool fsau_use_ca = true;
  bool fsau_use_sa = true;
};

struct ModelConfig {
  int base_channels = 32;
  int num_stages = 3;
  int num_frm = 4;
  int input_size = 128;
  int heads = 1;
  double gdfn_expansion = 2.0;
  bool qkv_pointwise_first = true;
  bool lgcm_parallel = false;
  int reduction_ratio = 16;
  int min_squeeze = 4;
  double leaky_slope = 0.2;
  int hourglass_depth = 2;
  double ln_eps = 1e-6;
  int disc_channels = 32;
  AblationConfig ablation;

  BlockConfig block(int c) const {
    BlockConfig b;
    b.in_channels = c;
    b.reduction_ratio = reduction_ratio;
    b.min_squeeze = min_squeeze;
    b.leaky_slope = leaky_slope;
    b.hourglass_depth = hourglass_depth;
    b.fsau_use_ca = ablation.fsau_use_ca;
    b.fsau_use_sa = ablation.fsau_use_sa;
    return b;
  }

  AttentionConfig attention(int c) const {
    AttentionConfig a;
    a.channels = c;
    a.heads = heads;
    a.gdfn_expansion = gdfn_expansion;
    a.qkv_pointwise_first = qkv_pointwise_first;
    a.ln_eps = ln_eps;
    return a;
  }

  int stage_channels(int i) const { return base_channels << i; }
  int stage_size(int i) const { return input_size >> i; }
  int bottleneck_channels() const { return base_channels << num_stages; }
  int bottleneck_size() const { return input_size >> num_stages; }

  FusionMode fusion_mode() const {
    return ablation.use_mffu ? parse_fusion_mode(ablation.mffu_fusion_mode) : FusionMode::none;
  }

  void validate() const {
    if (base_channels < 2 || base_channels % 2 != 0)
      throw std::invalid_argument("model: base_channels must be even and >= 2");
    if (num_stages < 1) throw std::invalid_argument("model: num_stages must be >= 1");
    if (num_frm < 0) throw std::invalid_argument("model: num_frm must be >= 0");
    int div = 1 << num_stages;
    if (input_size % div != 0)
      throw std::invalid_argument("model: input_size not divisible by 2^num_stages");
    if (num_frm > 0 && (input_size >> num_stages) % 2 != 0)
      throw std::invalid_argument("model: bottleneck size must be even when FRMs are present");
    int hg_div = 1 << hourglass_depth;
    if (ablation.use_fsau && (input_size >> (num_stages - 1)) % hg_div != 0)
      throw std::invalid_argument("model: smallest stage size not divisible by 2^hourglass_depth");
    if (num_frm > 0 && (input_size >> num_stages) % hg_div != 0)
      throw std::invalid_argument("model: bottleneck size not divisible by 2^hourglass_depth");
    if (base_channels % heads != 0)
      throw std::invalid_argument("model: base_channels not divisible by heads");
    bool none = parse_fusion_mode(ablation.mffu_fusion_mode) == FusionMode::none;
    if (none != !ablation.use_mffu)
      throw std::invalid_argument("model: mffu_fusion_mode must be 'none' iff use_mffu is false");
  }
};

inline void to_json(nlohmann::json& j, const AblationConfig& a) {
  j = nlohmann::json{{"use_fsau", a.use_fsau},
                     {"use_transformer", a.use_transformer},
                     {"use_mffu", a.use_mffu},
                     {"mffu_fusion_mode", a.mffu_fusion_mode},
                     {"use_feu_dual_branch", a.use_feu_dual_branch},
                     {"use_feu_selfcal", a.use_feu_selfcal},
                     {"use_afdu", a.use_afdu},
                     {"fsau_use_ca", a.fsau_use_ca},
                     {"fsau_use_sa", a.fsau_use_sa}};
}

inline void from_json(const nlohmann::json& j, AblationConfig& a) {
  a = AblationConfig{};
  a.use_fsau = j.value("use_fsau", a.use_fsau);
  a.use_transformer = j.value("use_transformer", a.use_transformer);
  a.use_mffu = j.value("use_mffu", a.use_mffu);
  a.mffu_fusion_mode = j.value("mffu_fusion_mode", a.mffu_fusion_mode);
  a.use_feu_dual_branch = j.value("use_feu_dual_branch", a.use_feu_dual_branch);
  a.use_feu_selfcal = j.value("use_feu_selfcal", a.use_feu_selfcal);
  a.use_afdu = j.value("use_afdu", a.use_afdu);
  a.fsau_use_ca = j.value("fsau_use_ca", a.fsau_use_ca);
  a.fsau_use_sa = j.value("fsau_use_sa", a.fsau_use_sa);
}

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = nlohmann::json{{"base_channels", m.base_channels},
                     {"num_stages", m.num_stages},
                     {"num_frm", m.num_frm},
                     {"input_size", m.input_size},
                     {"heads", m.heads},
                     {"gdfn_expansion", m.gdfn_expansion},
                     {"qkv_pointwise_first", m.qkv_pointwise_first},
                     {"lgcm_parallel", m.lgcm_parallel},
                     {"reduction_ratio", m.reduction_ratio},
                     {"min_squeeze", m.min_squeeze},
                     {"leaky_slope", m.leaky_slope},
                     {"hourglass_depth", m.hourglass_depth},
                     {"ln_eps", m.ln_eps},
                     {"disc_channels", m.disc_channels},
                     {"ablation", m.ablation}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  m = ModelConfig{};
  m.base_channels = j.value("base_channels", m.base_channels);
  m.num_stages = j.value("num_stages", m.num_stages);
  m.num_frm = j.value("num_frm", m.num_frm);
  m.input_size = j.value("input_size", m.input_size);
  m.heads = j.value("heads", m.heads);
  m.gdfn_expansion = j.value("gdfn_expansion", m.gdfn_expansion);
  m.qkv_pointwise_first = j.value("qkv_pointwise_first", m.qkv_pointwise_first);
  m.lgcm_parallel = j.value("lgcm_parallel", m.lgcm_parallel);
  m.reduction_ratio = j.value("reduction_ratio", m.reduction_ratio);
  m.min_squeeze = j.value("min_squeeze", m.min_squeeze);
  m.leaky_slope = j.value("leaky_slope", m.leaky_slope);
  m.hourglass_depth = j.value("hourglass_depth", m.hourglass_depth);
  m.ln_eps = j.value("ln_eps", m.ln_eps);
  m.disc_channels = j.value("disc_channels", m.disc_channels);
  if (j.contains("ablation")) m.ablation = j.at("ablation").get<AblationConfig>();
}

// FSAU and transformer block in sequence; either may be ablated away. With
// lgcm_parallel the two branch residuals are summed instead.
template <typename T>
class LGCM {
 public:
  LGCM() = default;
  LGCM(int c, const ModelConfig& cfg, Rng& rng)
      : use_fsau_(cfg.ablation.use_fsau), use_tb_(cfg.ablation.use_transformer),
        parallel_(cfg.lgcm_parallel) {
    if (use_fsau_) fsau = FSAU<T>(cfg.block(c), rng);
    if (use_tb_) tb = TransformerBlock<T>(cfg.attention(c), rng);
  }

  Var<T> forward(const Var<T>& x) {
    if (parallel_ && use_fsau_ && use_tb_)
      return add(x, add(sub(fsau.forward(x), x), sub(tb.forward(x), x)));
    Var<T> h = x;
    if (use_fsau_) h = fsau.forward(h);
    if (use_tb_) h = tb.forward(h);
    return h;
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    if (use_fsau_) fsau.visit(p + ".fsau", fn);
    if (use_tb_) tb.visit(p + ".tb", fn);
  }

  FSAU<T> fsau;
  TransformerBlock<T> tb;

 private:
  bool use_fsau_ = true, use_tb_ = true, parallel_ = false;
};

// Dual-scale AFDU ladder with a sigmoid self-calibration residual:
//   F'      = a1(F)            F'_low  = a2(avgpool2(F))
//   F''_low = a3(F'_low)
//   F''     = fuse1(cat(a4(F'), up2(F''_low)))
//   F'''    = fuse2(cat(a5(F''), up2(a6(F''_low))))
//   out     = a7(F''') + F * sigmoid(cal(F))
template <typename T>
class FEU {
 public:
  FEU() = default;
  FEU(int c, const ModelConfig& cfg, Rng& rng)
      : dual_(cfg.ablation.use_feu_dual_branch), selfcal_(cfg.ablation.use_feu_selfcal),
        use_afdu_(cfg.ablation.use_afdu) {
    BlockConfig b = cfg.block(c);
    if (use_afdu_) {
      a1 = AFDU<T>(b, rng);
      if (dual_) {
        a2 = AFDU<T>(b, rng);
        a3 = AFDU<T>(b, rng);
      }
      a4 = AFDU<T>(b, rng);
      a5 = AFDU<T>(b, rng);
      if (dual_) a6 = AFDU<T>(b, rng);
      a7 = AFDU<T>(b, rng);
    }
    int cat_c = dual_ ? 2 * c : c;
    fuse1 = Conv2d<T>(cat_c, c, 1, 1, 0, rng);
    fuse2 = Conv2d<T>(cat_c, c, 1, 1, 0, rng);
    if (selfcal_) cal = Conv2d<T>(c, c, 1, 1, 0, rng);
  }

  Var<T> fa(const AFDU<T>& a, const Var<T>& x) const { return use_afdu_ ? a.forward(x) : x; }

  Var<T> forward(const Var<T>& x) const {
    if (x->value.dim(2) % 2 != 0 || x->value.dim(3) % 2 != 0)
      throw std::invalid_argument("feu: spatial dims must be even");
    auto f1 = fa(a1, x);
    Var<T> f2, f3;
    if (dual_) {
      auto f2_low = fa(a3, fa(a2, avg_pool2(x)));
      f2 = fuse1.forward(concat_ch<T>({fa(a4, f1), bilinear_up2(f2_low)}));
      f3 = fuse2.forward(concat_ch<T>({fa(a5, f2), bilinear_up2(fa(a6, f2_low))}));
    } else {
      f2 = fuse1.forward(fa(a4, f1));
      f3 = fuse2.forward(fa(a5, f2));
    }
    auto main = fa(a7, f3);
    if (selfcal_) return add(main, mul(x, sigmoid_op(cal.forward(x))));
    return add(main, x);
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    if (use_afdu_) {
      a1.visit(p + ".a1", fn);
      if (dual_) {
        a2.visit(p + ".a2", fn);
        a3.visit(p + ".a3", fn);
      }
      a4.visit(p + ".a4", fn);
      a5.visit(p + ".a5", fn);
      if (dual_) a6.visit(p + ".a6", fn);
      a7.visit(p + ".a7", fn);
    }
    fuse1.visit(p + ".fuse1", fn);
    fuse2.visit(p + ".fuse2", fn);
    if (selfcal_) cal.visit(p + ".cal", fn);
  }

  AFDU<T> a1, a2, a3, a4, a5, a6, a7;
  Conv2d<T> fuse1, fuse2, cal;

 private:
  bool dual_ = true, selfcal_ = true, use_afdu_ = true;
};

// Bottleneck refinement stage: FSAU then FEU.
template <typename T>
class FRM {
 public:
  FRM() = default;
  FRM(int c, const ModelConfig& cfg, Rng& rng) : fsau(cfg.block(c), rng), feu(c, cfg, rng) {}

  Var<T> forward(const Var<T>& x) { return feu.forward(fsau.forward(x)); }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    fsau.visit(p + ".fsau", fn);
    feu.visit(p + ".feu", fn);
  }

  FSAU<T> fsau;
  FEU<T> feu;
};

// Rescales every encoder skip to the decoder's scale (repeated 3x3 stride-2
// convs going down, channels doubling per step; repeated 6x6 stride-2 pad-2
// transposed convs going up, channels halving), fuses with the decoder map,
// projects back to the decoder width, and reweighs with channel attention.
// Concatenation order: rescaled skips in encoder-stage order, then the
// same-scale skip, then the decoder map.
template <typename T>
class MFFU {
 public:
  MFFU() = default;
  MFFU(const std::vector<int>& enc_ch, const std::vector<int>& enc_sz, int d_ch, int d_sz,
       const ModelConfig& cfg, Rng& rng)
      : mode_(cfg.fusion_mode()), d_ch_(d_ch), d_sz_(d_sz) {
    if (mode_ == FusionMode::none) return;
    size_t ns = enc_ch.size();
    down_chains.resize(ns);
    up_chains.resize(ns);
    for (size_t j = 0; j < ns; ++j) {
      int sz = enc_sz[j], ch = enc_ch[j];
      while (sz > d_sz_) {
        down_chains[j].emplace_back(ch, 2 * ch, 3, 2, 1, rng);
        ch *= 2;
        sz /= 2;
      }
      while (sz < d_sz_) {
        up_chains[j].emplace_back(ch, ch / 2, 6, 2, 2, rng);
        ch /= 2;
        sz *= 2;
      }
      if (ch != d_ch_) throw std::invalid_argument("mffu: skip width does not reach decoder width");
    }
    bool is_concat = mode_ == FusionMode::concat || mode_ == FusionMode::concat_ca;
    proj = Conv2d<T>(is_concat ? d_ch_ * (static_cast<int>(ns) + 1) : d_ch_, d_ch_, 1, 1, 0, rng);
    if (mode_ == FusionMode::concat_ca || mode_ == FusionMode::add_ca)
      ca = ChannelAttention<T>(cfg.block(d_ch_), rng);
  }

  Var<T> forward(const std::vector<Var<T>>& skips, const Var<T>& d) const {
    if (mode_ == FusionMode::none) return d;
    if (skips.size() != down_chains.size())
      throw std::invalid_argument("mffu: wrong number of skip maps");
    if (d->value.dim(1) != d_ch_ || d->value.dim(2) != d_sz_)
      throw std::invalid_argument("mffu: decoder map has unexpected shape");
    std::vector<Var<T>> rescaled;
    Var<T> same;
    for (size_t j = 0; j < skips.size(); ++j) {
      Var<T> h = skips[j];
      if (down_chains[j].empty() && up_chains[j].empty()) {
        same = h;
        continue;
      }
      for (const auto& cv : down_chains[j]) h = cv.forward(h);
      for (const auto& cv : up_chains[j]) h = cv.forward(h);
      rescaled.push_back(h);
    }
    if (!same) throw std::invalid_argument("mffu: no skip at the decoder scale");
    Var<T> fused;
    if (mode_ == FusionMode::concat || mode_ == FusionMode::concat_ca) {
      std::vector<Var<T>> parts = rescaled;
      parts.push_back(same);
      parts.push_back(d);
      fused = proj.forward(concat_ch<T>(parts));
    } else {
      Var<T> s = add(same, d);
      for (const auto& r : rescaled) s = add(s, r);
      fused = proj.forward(s);
    }
    if (mode_ == FusionMode::concat_ca || mode_ == FusionMode::add_ca) fused = ca.forward(fused);
    return fused;
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) const {
    if (mode_ == FusionMode::none) return;
    for (size_t j = 0; j < down_chains.size(); ++j) {
      for (size_t s = 0; s < down_chains[j].size(); ++s)
        down_chains[j][s].visit(p + ".down" + std::to_string(j) + "_" + std::to_string(s), fn);
      for (size_t s = 0; s < up_chains[j].size(); ++s)
        up_chains[j][s].visit(p + ".up" + std::to_string(j) + "_" + std::to_string(s), fn);
    }
    proj.visit(p + ".proj", fn);
    if (mode_ == FusionMode::concat_ca || mode_ == FusionMode::add_ca) ca.visit(p + ".ca", fn);
  }

  std::vector<std::vector<Conv2d<T>>> down_chains;
  std::vector<std::vector<ConvTranspose2d<T>>> up_chains;
  Conv2d<T> proj;
  ChannelAttention<T> ca;

 private:
  FusionMode mode_ = FusionMode::none;
  int d_ch_ = 0, d_sz_ = 0;
};

template <typename T>
struct NetworkOutput {
  Var<T> sr;
  std::vector<std::pair<std::string, Var<T>>> intermediates;
};

// U-shaped generator: stem -> [LGCM, downsample] x stages -> FRM x num_frm ->
// [upsample, MFFU, LGCM] x stages -> tail conv, with sr = lr_up + tail out.
// The tail conv is zero-initialized so an untrained model is the identity on
// its input.
template <typename T>
class CtcNet {
 public:
  explicit CtcNet(const ModelConfig& cfg, uint64_t init_seed = 1) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed);
    int c = cfg_.base_channels;
    stem = Conv2d<T>(3, c, 3, 1, 1, rng);
    for (int i = 0; i < cfg_.num_stages; ++i) {
      int ci = cfg_.stage_channels(i);
      enc_lgcm.emplace_back(ci, cfg_, rng);
      downs.emplace_back(ci, cfg_.leaky_slope, rng);
    }
    for (int i = 0; i < cfg_.num_frm; ++i)
      frms.emplace_back(cfg_.bottleneck_channels(), cfg_, rng);
    std::vector<int> enc_ch, enc_sz;
    for (int i = 0; i < cfg_.num_stages; ++i) {
      enc_ch.push_back(cfg_.stage_channels(i));
      enc_sz.push_back(cfg_.stage_size(i));
    }
    for (int i = 0; i < cfg_.num_stages; ++i) {
      int stage = cfg_.num_stages - 1 - i;  // decoder lands on this encoder stage
      int ci = cfg_.stage_channels(stage);
      ups.emplace_back(2 * ci, cfg_.leaky_slope, rng);
      mffus.emplace_back(enc_ch, enc_sz, ci, cfg_.stage_size(stage), cfg_, rng);
      dec_lgcm.emplace_back(ci, cfg_, rng);
    }
    tail = Conv2d<T>(c, 3, 3, 1, 1, rng, 1, true, /*zero_init=*/true);
  }

  NetworkOutput<T> forward(const Var<T>& lr_up, bool collect = false) {
    if (lr_up->value.dim(1) != 3 || lr_up->value.dim(2) != cfg_.input_size ||
        lr_up->value.dim(3) != cfg_.input_size)
      throw std::invalid_argument("ctcnet: input must be (3, input_size, input_size)");
    NetworkOutput<T> out;
    auto note = [&](const std::string& name, const Var<T>& v) {
      if (collect) {
        v->keep = true;
        out.intermediates.emplace_back(name, v);
      }
    };
    Var<T> h = stem.forward(lr_up);
    std::vector<Var<T>> skips;
    for (int i = 0; i < cfg_.num_stages; ++i) {
      auto s = enc_lgcm[static_cast<size_t>(i)].forward(h);
      skips.push_back(s);
      note("enc" + std::to_string(i), s);
      h = downs[static_cast<size_t>(i)].forward(s);
    }
    note("bottleneck_in", h);
    for (auto& f : frms) h = f.forward(h);
    note("bottleneck_out", h);
    for (int i = 0; i < cfg_.num_stages; ++i) {
      h = ups[static_cast<size_t>(i)].forward(h);
      h = mffus[static_cast<size_t>(i)].forward(skips, h);
      h = dec_lgcm[static_cast<size_t>(i)].forward(h);
      note("dec" + std::to_string(i), h);
    }
    out.sr = add(lr_up, tail.forward(h));
    return out;
  }

  void visit(const ParamVisitor<T>& fn) const {
    stem.visit("stem", fn);
    for (size_t i = 0; i < enc_lgcm.size(); ++i) {
      enc_lgcm[i].visit("enc" + std::to_string(i) + ".lgcm", fn);
      downs[i].visit("enc" + std::to_string(i) + ".down", fn);
    }
    for (size_t i = 0; i < frms.size(); ++i) frms[i].visit("frm" + std::to_string(i), fn);
    for (size_t i = 0; i < ups.size(); ++i) {
      ups[i].visit("dec" + std::to_string(i) + ".up", fn);
      mffus[i].visit("dec" + std::to_string(i) + ".mffu", fn);
      dec_lgcm[i].visit("dec" + std::to_string(i) + ".lgcm", fn);
    }
    tail.visit("tail", fn);
  }

  const ModelConfig& config() const { return cfg_; }

  Conv2d<T> stem, tail;
  std::vector<LGCM<T>> enc_lgcm, dec_lgcm;
  std::vector<DownsampleBlock<T>> downs;
  std::vector<FRM<T>> frms;
  std::vector<UpsampleBlock<T>> ups;
  std::vector<MFFU<T>> mffus;

 private:
  ModelConfig cfg_;
};

// Conditional patch critic: concat(image, condition) -> three stride-2 convs
// -> 1-channel logit map (sigmoid lives in the loss).
template <typename T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  explicit PatchDiscriminator(const ModelConfig& cfg, uint64_t init_seed = 2)
      : slope_(static_cast<T>(cfg.leaky_slope)) {
    Rng rng(init_seed);
    int d = cfg.disc_channels;
    conv0 = Conv2d<T>(6, d, 4, 2, 1, rng);
    conv1 = Conv2d<T>(d, 2 * d, 4, 2, 1, rng);
    conv2 = Conv2d<T>(2 * d, 4 * d, 4, 2, 1, rng);
    conv3 = Conv2d<T>(4 * d, 1, 3, 1, 1, rng);
  }

  Var<T> forward(const Var<T>& x, const Var<T>& condition) const {
    if (!x->value.same_shape(condition->value))
      throw std::invalid_argument("discriminator: input/condition size mismatch");
    auto h = concat_ch<T>({x, condition});
    h = leaky_relu(conv0.forward(h), slope_);
    h = leaky_relu(conv1.forward(h), slope_);
    h = leaky_relu(conv2.forward(h), slope_);
    return conv3.forward(h);
  }

  void visit(const ParamVisitor<T>& fn) const {
    conv0.visit("d.conv0", fn);
    conv1.visit("d.conv1", fn);
    conv2.visit("d.conv2", fn);
    conv3.visit("d.conv3", fn);
  }

  Conv2d<T> conv0, conv1, conv2, conv3;

 private:
  T slope_ = T(0.2);
};

template <typename T, typename Net>
int64_t parameter_count(const Net& net) {
  int64_t total = 0;
  net.visit([&](const std::string&, const Var<T>& v) { total += v->value.numel(); });
  return total;
}

}  // namespace ctcsr
