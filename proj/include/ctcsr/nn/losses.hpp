// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctcsr/io/checkpoint.hpp"
#include "ctcsr/nn/layers.hpp"

namespace ctcsr {

struct LossWeights {
  double lambda_pix = 1.0;
  double lambda_pcp = 0.01;
  double lambda_adv = 0.01;
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"lambda_pix", w.lambda_pix},
                     {"lambda_pcp", w.lambda_pcp},
                     {"lambda_adv", w.lambda_adv}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w = LossWeights{};
  w.lambda_pix = j.value("lambda_pix", w.lambda_pix);
  w.lambda_pcp = j.value("lambda_pcp", w.lambda_pcp);
  w.lambda_adv = j.value("lambda_adv", w.lambda_adv);
}

// Mean absolute difference over every element of the batch.
template <typename T>
Var<T> pixel_loss(const Var<T>& sr, const Var<T>& hr) {
  if (!sr->value.same_shape(hr->value))
    throw std::invalid_argument("pixel_loss: shape mismatch");
  return mean_all(abs_op(sub(sr, hr)));
}

// Frozen convolutional feature stack for the perceptual distance. Three
// flavours: "identity" (features == input), "random" (fixed-seed stack, lets
// every loss check run offline), and weights loaded from a container file
// (for converted pretrained feature extractors).
template <typename T>
class FeatureExtractor {
 public:
  struct Layer {
    Conv2d<T> conv;
    bool relu = true;
    bool tap = true;  // contributes a feature term
  };

  static FeatureExtractor identity() {
    FeatureExtractor fx;
    fx.kind_ = "identity";
    return fx;
  }

  // Two-layer stack, kernel 3, stride 2, LeakyReLU taps after each layer.
  static FeatureExtractor random_stack(uint64_t seed, int width = 8) {
    FeatureExtractor fx;
    fx.kind_ = "random";
    Rng rng(seed);
    fx.push_layer(Conv2d<T>(3, width, 3, 2, 1, rng), true, true);
    fx.push_layer(Conv2d<T>(width, 2 * width, 3, 2, 1, rng), true, true);
    return fx;
  }

  static FeatureExtractor load(const std::string& path) {
    Checkpoint c = Checkpoint::load(path);
    if (c.meta.value("artifact", "") != "feature_extractor")
      throw std::runtime_error("extractor: " + path + " is not a feature extractor artifact");
    FeatureExtractor fx;
    fx.kind_ = c.meta.value("kind", "conv_stack");
    for (const auto& lj : c.meta.at("layers")) {
      int idx = static_cast<int>(fx.layers_.size());
      Layer l;
      l.relu = lj.value("relu", true);
      l.tap = lj.value("tap", true);
      l.conv = Conv2d<T>();
      l.conv.weight = make_var(c.get<T>("layer" + std::to_string(idx) + ".weight"), false);
      if (c.has("layer" + std::to_string(idx) + ".bias"))
        l.conv.bias = make_var(c.get<T>("layer" + std::to_string(idx) + ".bias"), false);
      int stride = lj.value("stride", 1);
      int pad = lj.value("pad", l.conv.weight->value.dim(2) / 2);
      l.conv = rebuild_conv(l.conv, stride, pad);
      fx.strides_.push_back(stride);
      fx.pads_.push_back(pad);
      fx.layers_.push_back(std::move(l));
    }
    return fx;
  }

  void save(const std::string& path) const {
    Checkpoint c;
    c.meta["artifact"] = "feature_extractor";
    c.meta["kind"] = kind_;
    nlohmann::json layers = nlohmann::json::array();
    for (size_t i = 0; i < layers_.size(); ++i) {
      layers.push_back({{"relu", layers_[i].relu},
                        {"tap", layers_[i].tap},
                        {"stride", strides_[i]},
                        {"pad", pads_[i]}});
      c.put("layer" + std::to_string(i) + ".weight", layers_[i].conv.weight->value);
      if (layers_[i].conv.bias) c.put("layer" + std::to_string(i) + ".bias",
                                      layers_[i].conv.bias->value);
    }
    c.meta["layers"] = layers;
    c.save(path);
  }

  // Feature maps at every tap; extractor parameters never require gradients.
  std::vector<Var<T>> features(const Var<T>& x) const {
    if (kind_ == "identity") return {x};
    std::vector<Var<T>> out;
    Var<T> h = x;
    for (const auto& l : layers_) {
      h = l.conv.forward(h);
      if (l.relu) h = leaky_relu(h, T(0.2));
      if (l.tap) out.push_back(h);
    }
    if (out.empty()) throw std::runtime_error("extractor: no tap layers configured");
    return out;
  }

  bool is_identity() const { return kind_ == "identity"; }

 private:
  std::string kind_ = "identity";
  std::vector<Layer> layers_;
  std::vector<int> strides_, pads_;

  void push_layer(Conv2d<T> conv, bool relu, bool tap) {
    // Frozen: strip the gradient requirement from the freshly drawn params.
    conv.weight->requires_grad = false;
    if (conv.bias) conv.bias->requires_grad = false;
    Layer l;
    l.conv = std::move(conv);
    l.relu = relu;
    l.tap = tap;
    strides_.push_back(2);
    pads_.push_back(1);
    layers_.push_back(std::move(l));
  }

  static Conv2d<T> rebuild_conv(const Conv2d<T>& src, int stride, int pad) {
    Conv2d<T> c;
    Rng dummy(0);
    int cout = src.weight->value.dim(0);
    int cin = src.weight->value.dim(1);
    int k = src.weight->value.dim(2);
    c = Conv2d<T>(cin, cout, k, stride, pad, dummy, 1, static_cast<bool>(src.bias));
    c.weight = src.weight;
    c.bias = src.bias;
    return c;
  }
};

// Resolves an extractor spec for training: "identity", "random:<seed>", or a
// saved artifact path. An empty spec or a missing file is a hard error; this
// runs before any training work starts.
template <typename T>
FeatureExtractor<T> resolve_extractor(const std::string& spec) {
  if (spec.empty())
    throw std::runtime_error(
        "extractor: no feature extractor configured; use 'random:<seed>' for the "
        "deterministic test extractor, 'identity', or a saved artifact path");
  if (spec == "identity") return FeatureExtractor<T>::identity();
  if (spec.rfind("random:", 0) == 0)
    return FeatureExtractor<T>::random_stack(std::stoull(spec.substr(7)));
  return FeatureExtractor<T>::load(spec);
}

// Sum over taps of the per-element-normalized L1 feature distance, averaged
// over the batch.
template <typename T>
Var<T> perceptual_loss(const Var<T>& sr, const Var<T>& hr, const FeatureExtractor<T>& fx) {
  auto fs = fx.features(sr);
  auto fh = fx.features(hr);
  Var<T> total;
  for (size_t i = 0; i < fs.size(); ++i) {
    auto term = mean_all(abs_op(sub(fs[i], fh[i])));
    total = total ? add(total, term) : term;
  }
  return total;
}

// Stable binary cross-entropy over patch logits:
//   E[softplus(-real)] + E[softplus(fake)].
template <typename T>
Var<T> discriminator_loss(const Var<T>& real_logits, const Var<T>& fake_logits) {
  return add(mean_all(softplus_op(neg(real_logits))), mean_all(softplus_op(fake_logits)));
}

// Non-saturating generator objective: E[softplus(-fake)].
template <typename T>
Var<T> generator_adv_loss(const Var<T>& fake_logits) {
  return mean_all(softplus_op(neg(fake_logits)));
}

template <typename T>
struct GeneratorLoss {
  Var<T> total;
  double pix = 0, pcp = 0, adv = 0;
};

// Weighted three-term objective with a per-term breakdown for logging. Terms
// are always evaluated (so zero-weight runs stay numerically comparable) but
// contribute exactly zero when their weight is zero.
template <typename T>
GeneratorLoss<T> total_generator_loss(const Var<T>& sr, const Var<T>& hr,
                                      const Var<T>& d_fake_logits, const LossWeights& w,
                                      const FeatureExtractor<T>& fx) {
  GeneratorLoss<T> out;
  auto l_pix = pixel_loss(sr, hr);
  auto l_pcp = perceptual_loss(sr, hr, fx);
  auto l_adv = generator_adv_loss(d_fake_logits);
  out.pix = static_cast<double>(l_pix->value[0]);
  out.pcp = static_cast<double>(l_pcp->value[0]);
  out.adv = static_cast<double>(l_adv->value[0]);
  out.total = add(scale(l_pix, static_cast<T>(w.lambda_pix)),
                  add(scale(l_pcp, static_cast<T>(w.lambda_pcp)),
                      scale(l_adv, static_cast<T>(w.lambda_adv))));
  return out;
}

}  // namespace ctcsr
