// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "ctcsr/autograd/variable.hpp"
#include "ctcsr/io/checkpoint.hpp"

namespace ctcsr {

// Adam with bias correction. Moment tensors are keyed by parameter name so an
// optimizer state round-trips through checkpoints independent of registration
// order changes (names are stable, slots are rebuilt on attach).
template <typename T>
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.99, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  template <typename Net>
  void attach(Net& net) {
    net.visit([this](const std::string& name, const Var<T>& p) { add_param(name, p); });
  }

  void add_param(const std::string& name, const Var<T>& p) {
    if (!p->requires_grad) return;
    slots_.push_back({name, p, Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape())});
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& s : slots_) {
      if (s.p->grad.numel() == 0) continue;  // unreached parameter this step
      T* p = s.p->value.data();
      const T* g = s.p->grad.data();
      T* m = s.m.data();
      T* v = s.v.data();
      int64_t n = s.p->value.numel();
      T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
      for (int64_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        double mhat = static_cast<double>(m[i]) / bc1;
        double vhat = static_cast<double>(v[i]) / bc2;
        p[i] = static_cast<T>(p[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.p->grad.release();
  }

  int64_t steps() const { return t_; }
  double lr() const { return lr_; }

  void save(Checkpoint& c, const std::string& prefix) const {
    for (const auto& s : slots_) {
      c.put(prefix + ".m." + s.name, s.m);
      c.put(prefix + ".v." + s.name, s.v);
    }
    c.meta[prefix + "_t"] = t_;
  }

  void load(const Checkpoint& c, const std::string& prefix) {
    for (auto& s : slots_) {
      s.m = c.template get<T>(prefix + ".m." + s.name);
      s.v = c.template get<T>(prefix + ".v." + s.name);
      if (!s.m.same_shape(s.p->value) || !s.v.same_shape(s.p->value))
        throw std::runtime_error("adam: moment shape mismatch for " + s.name);
    }
    t_ = c.meta.at(prefix + "_t").get<int64_t>();
  }

 private:
  struct Slot {
    std::string name;
    Var<T> p;
    Tensor<T> m, v;
  };
  std::vector<Slot> slots_;
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

}  // namespace ctcsr
