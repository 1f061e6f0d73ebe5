// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "ctcsr/autograd/conv.hpp"
#include "ctcsr/autograd/ops.hpp"
#include "ctcsr/core/rng.hpp"

namespace ctcsr {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, const Var<T>&)>;

template <typename T>
Var<T> new_param(std::vector<int> shape, Rng& rng, double bound) {
  Tensor<T> t(std::move(shape));
  T* p = t.data();
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.uniform(-bound, bound));
  return make_var(std::move(t), true);
}

// Plain convolution layer. fan-in uniform init: U(-1/sqrt(fan), 1/sqrt(fan)),
// fan = (cin/groups) * k * k. zero_init skips the draw and leaves all zeros,
// used for the tail conv so the network starts as the identity residual.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng, int groups = 1,
         bool has_bias = true, bool zero_init = false)
      : stride_(stride), pad_(pad), groups_(groups) {
    double bound = 1.0 / std::sqrt(double(cin / groups) * k * k);
    if (zero_init) {
      weight = make_var(Tensor<T>({cout, cin / groups, k, k}), true);
      if (has_bias) bias = make_var(Tensor<T>({cout}), true);
    } else {
      weight = new_param<T>({cout, cin / groups, k, k}, rng, bound);
      if (has_bias) bias = new_param<T>({cout}, rng, bound);
    }
  }

  Var<T> forward(const Var<T>& x) const { return conv2d(x, weight, bias, stride_, pad_, groups_); }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) const {
    fn(prefix + ".weight", weight);
    if (bias) fn(prefix + ".bias", bias);
  }

  Var<T> weight, bias;

 private:
  int stride_ = 1, pad_ = 0, groups_ = 1;
};

// Transposed convolution layer, weight (cin, cout, k, k).
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(int cin, int cout, int k, int stride, int pad, Rng& rng, bool has_bias = true)
      : stride_(stride), pad_(pad) {
    double bound = 1.0 / std::sqrt(double(cin) * k * k);
    weight = new_param<T>({cin, cout, k, k}, rng, bound);
    if (has_bias) bias = new_param<T>({cout}, rng, bound);
  }

  Var<T> forward(const Var<T>& x) const { return conv_transpose2d(x, weight, bias, stride_, pad_); }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) const {
    fn(prefix + ".weight", weight);
    if (bias) fn(prefix + ".bias", bias);
  }

  Var<T> weight, bias;

 private:
  int stride_ = 2, pad_ = 2;
};

template <typename T>
int64_t visit_count(const std::function<void(const ParamVisitor<T>&)>& walker) {
  int64_t total = 0;
  walker([&](const std::string&, const Var<T>& v) { total += v->value.numel(); });
  return total;
}

}  // namespace ctcsr
