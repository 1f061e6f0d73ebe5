// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "ctcsr/autograd/variable.hpp"
#include "ctcsr/core/blas.hpp"

namespace ctcsr {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  assert(a->value.same_shape(b->value));
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  return make_node<T>(std::move(out), {a, b}, [](VarNode<T>& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->add_grad_from(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->add_grad_from(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  assert(a->value.same_shape(b->value));
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  return make_node<T>(std::move(out), {a, b}, [](VarNode<T>& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->add_grad_from(self.grad);
    if (self.inputs[1]->requires_grad) {
      Tensor<T>& g = self.inputs[1]->ensure_grad();
      const T* pg = self.grad.data();
      T* pd = g.data();
      int64_t m = g.numel();
      for (int64_t i = 0; i < m; ++i) pd[i] -= pg[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  assert(a->value.same_shape(b->value));
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  return make_node<T>(std::move(out), {a, b}, [](VarNode<T>& self) {
    const T* pg = self.grad.data();
    int64_t m = self.grad.numel();
    if (self.inputs[0]->requires_grad) {
      Tensor<T>& g = self.inputs[0]->ensure_grad();
      const T* pb2 = self.inputs[1]->value.data();
      T* pd = g.data();
      for (int64_t i = 0; i < m; ++i) pd[i] += pg[i] * pb2[i];
    }
    if (self.inputs[1]->requires_grad) {
      Tensor<T>& g = self.inputs[1]->ensure_grad();
      const T* pa2 = self.inputs[0]->value.data();
      T* pd = g.data();
      for (int64_t i = 0; i < m; ++i) pd[i] += pg[i] * pa2[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = c * pa[i];
  return make_node<T>(std::move(out), {a}, [c](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* pg = self.grad.data();
    T* pd = g.data();
    int64_t m = g.numel();
    for (int64_t i = 0; i < m; ++i) pd[i] += c * pg[i];
  });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> abs_op(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::abs(pa[i]);
  return make_node<T>(std::move(out), {a}, [](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* px = self.inputs[0]->value.data();
    const T* pg = self.grad.data();
    T* pd = g.data();
    int64_t m = g.numel();
    for (int64_t i = 0; i < m; ++i)
      pd[i] += px[i] > T(0) ? pg[i] : (px[i] < T(0) ? -pg[i] : T(0));
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] >= T(0) ? pa[i] : slope * pa[i];
  return make_node<T>(std::move(out), {a}, [slope](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* px = self.inputs[0]->value.data();
    const T* pg = self.grad.data();
    T* pd = g.data();
    int64_t m = g.numel();
    for (int64_t i = 0; i < m; ++i) pd[i] += px[i] >= T(0) ? pg[i] : slope * pg[i];
  });
}

template <typename T>
Var<T> sigmoid_op(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = T(1) / (T(1) + std::exp(-pa[i]));
  return make_node<T>(std::move(out), {a}, [](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* py = self.value.data();
    const T* pg = self.grad.data();
    T* pd = g.data();
    int64_t m = g.numel();
    for (int64_t i = 0; i < m; ++i) pd[i] += pg[i] * py[i] * (T(1) - py[i]);
  });
}

// Exact erf form.
template <typename T>
Var<T> gelu_op(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  const T inv_sqrt2 = T(0.70710678118654752440084436210485L);
  for (int64_t i = 0; i < n; ++i)
    po[i] = T(0.5) * pa[i] * (T(1) + std::erf(pa[i] * inv_sqrt2));
  return make_node<T>(std::move(out), {a}, [inv_sqrt2](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* px = self.inputs[0]->value.data();
    const T* pg = self.grad.data();
    T* pd = g.data();
    int64_t m = g.numel();
    const T inv_sqrt2pi = T(0.39894228040143267793994605993438L);
    for (int64_t i = 0; i < m; ++i) {
      T x = px[i];
      T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      pd[i] += pg[i] * (cdf + x * pdf);
    }
  });
}

// Numerically stable log(1 + exp(x)).
template <typename T>
Var<T> softplus_op(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  const T* pa = a->value.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    T x = pa[i];
    po[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  return make_node<T>(std::move(out), {a}, [](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* px = self.inputs[0]->value.data();
    const T* pg = self.grad.data();
    T* pd = g.data();
    int64_t m = g.numel();
    for (int64_t i = 0; i < m; ++i) pd[i] += pg[i] / (T(1) + std::exp(-px[i]));
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  int64_t n = a->value.numel();
  T acc = 0;
  const T* pa = a->value.data();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor<T> out({1});
  out[0] = acc / static_cast<T>(n);
  return make_node<T>(std::move(out), {a}, [n](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    T gv = self.grad[0] / static_cast<T>(n);
    T* pd = g.data();
    for (int64_t i = 0; i < n; ++i) pd[i] += gv;
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  int64_t n = a->value.numel();
  T acc = 0;
  const T* pa = a->value.data();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  Tensor<T> out({1});
  out[0] = acc;
  return make_node<T>(std::move(out), {a}, [n](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    T gv = self.grad[0];
    T* pd = g.data();
    for (int64_t i = 0; i < n; ++i) pd[i] += gv;
  });
}

// Concatenates NCHW tensors along the channel axis.
template <typename T>
Var<T> concat_ch(const std::vector<Var<T>>& xs) {
  assert(!xs.empty());
  int n = xs[0]->value.dim(0), h = xs[0]->value.dim(2), w = xs[0]->value.dim(3);
  int ctot = 0;
  for (const auto& x : xs) {
    assert(x->value.rank() == 4 && x->value.dim(0) == n && x->value.dim(2) == h &&
           x->value.dim(3) == w);
    ctot += x->value.dim(1);
  }
  Tensor<T> out({n, ctot, h, w});
  int64_t plane = int64_t(h) * w;
  for (int b = 0; b < n; ++b) {
    int coff = 0;
    for (const auto& x : xs) {
      int cx = x->value.dim(1);
      const T* src = x->value.data() + int64_t(b) * cx * plane;
      T* dst = out.data() + (int64_t(b) * ctot + coff) * plane;
      std::copy(src, src + int64_t(cx) * plane, dst);
      coff += cx;
    }
  }
  return make_node<T>(std::move(out), xs, [n, ctot, plane](VarNode<T>& self) {
    const T* pg = self.grad.data();
    for (int b = 0; b < n; ++b) {
      int coff = 0;
      for (auto& x : self.inputs) {
        int cx = x->value.dim(1);
        if (x->requires_grad) {
          Tensor<T>& g = x->ensure_grad();
          T* dst = g.data() + int64_t(b) * cx * plane;
          const T* src = pg + (int64_t(b) * ctot + coff) * plane;
          for (int64_t i = 0; i < int64_t(cx) * plane; ++i) dst[i] += src[i];
        }
        coff += cx;
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  assert(Tensor<T>::count(shape) == a->value.numel());
  Tensor<T> out(std::move(shape), a->value.vec());
  auto old_shape = a->value.shape();
  return make_node<T>(std::move(out), {a}, [old_shape](VarNode<T>& self) {
    Tensor<T> g(old_shape, self.grad.vec());
    self.inputs[0]->add_grad_from(g);
  });
}

// LayerNorm across the channel axis at each (n, h, w) position, with per
// channel affine parameters gamma and beta of shape (C).
template <typename T>
Var<T> layer_norm_ch(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  assert(gamma->value.numel() == c && beta->value.numel() == c);
  int64_t plane = int64_t(h) * w;
  Tensor<T> out(x->value.shape());
  auto xhat = std::make_shared<Tensor<T>>(x->value.shape());
  auto rstd = std::make_shared<Tensor<T>>(std::vector<int>{n, h, w});
  const T* px = x->value.data();
  const T* pgm = gamma->value.data();
  const T* pbt = beta->value.data();
  T* po = out.data();
  T* ph = xhat->data();
  T* pr = rstd->data();
  for (int b = 0; b < n; ++b) {
    for (int64_t s = 0; s < plane; ++s) {
      int64_t base = int64_t(b) * c * plane + s;
      T mu = 0;
      for (int ch = 0; ch < c; ++ch) mu += px[base + ch * plane];
      mu /= static_cast<T>(c);
      T var = 0;
      for (int ch = 0; ch < c; ++ch) {
        T d = px[base + ch * plane] - mu;
        var += d * d;
      }
      var /= static_cast<T>(c);
      T rs = T(1) / std::sqrt(var + eps);
      pr[b * plane + s] = rs;
      for (int ch = 0; ch < c; ++ch) {
        T xh = (px[base + ch * plane] - mu) * rs;
        ph[base + ch * plane] = xh;
        po[base + ch * plane] = pgm[ch] * xh + pbt[ch];
      }
    }
  }
  return make_node<T>(std::move(out), {x, gamma, beta},
                      [n, c, plane, xhat, rstd](VarNode<T>& self) {
    const T* pg = self.grad.data();
    const T* ph2 = xhat->data();
    const T* pr2 = rstd->data();
    const T* pgm2 = self.inputs[1]->value.data();
    if (self.inputs[1]->requires_grad) {
      Tensor<T>& gg = self.inputs[1]->ensure_grad();
      Tensor<T>& gb = self.inputs[2]->ensure_grad();
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          int64_t base = (int64_t(b) * c + ch) * plane;
          T sg = 0, sb = 0;
          for (int64_t s = 0; s < plane; ++s) {
            sg += pg[base + s] * ph2[base + s];
            sb += pg[base + s];
          }
          gg[ch] += sg;
          gb[ch] += sb;
        }
    }
    if (self.inputs[0]->requires_grad) {
      Tensor<T>& gx = self.inputs[0]->ensure_grad();
      T* pd = gx.data();
      for (int b = 0; b < n; ++b)
        for (int64_t s = 0; s < plane; ++s) {
          int64_t base = int64_t(b) * c * plane + s;
          T m1 = 0, m2 = 0;
          for (int ch = 0; ch < c; ++ch) {
            T dxh = pg[base + ch * plane] * pgm2[ch];
            m1 += dxh;
            m2 += dxh * ph2[base + ch * plane];
          }
          m1 /= static_cast<T>(c);
          m2 /= static_cast<T>(c);
          T rs = pr2[b * plane + s];
          for (int ch = 0; ch < c; ++ch) {
            T dxh = pg[base + ch * plane] * pgm2[ch];
            pd[base + ch * plane] += rs * (dxh - m1 - ph2[base + ch * plane] * m2);
          }
        }
    }
  });
}

// Softmax over the last axis.
template <typename T>
Var<T> softmax_last(const Var<T>& x) {
  int64_t n = x->value.numel();
  int cols = x->value.dim(x->value.rank() - 1);
  int64_t rows = n / cols;
  Tensor<T> out(x->value.shape());
  const T* px = x->value.data();
  T* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xi = px + r * cols;
    T* yo = po + r * cols;
    T mx = xi[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    T sum = 0;
    for (int j = 0; j < cols; ++j) {
      yo[j] = std::exp(xi[j] - mx);
      sum += yo[j];
    }
    T inv = T(1) / sum;
    for (int j = 0; j < cols; ++j) yo[j] *= inv;
  }
  return make_node<T>(std::move(out), {x}, [rows, cols](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* py = self.value.data();
    const T* pg = self.grad.data();
    T* pd = g.data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* y = py + r * cols;
      const T* gy = pg + r * cols;
      T dot = 0;
      for (int j = 0; j < cols; ++j) dot += gy[j] * y[j];
      T* dx = pd + r * cols;
      for (int j = 0; j < cols; ++j) dx[j] += y[j] * (gy[j] - dot);
    }
  });
}

// Batched matmul on rank-3 tensors: y[g] = a[g] * op(b[g]).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_b = false) {
  assert(a->value.rank() == 3 && b->value.rank() == 3);
  int g = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
  int bn = trans_b ? b->value.dim(1) : b->value.dim(2);
  assert(b->value.dim(0) == g && (trans_b ? b->value.dim(2) : b->value.dim(1)) == k);
  Tensor<T> out({g, m, bn});
  const T* pa = a->value.data();
  const T* pb = b->value.data();
  T* po = out.data();
  int64_t sa = int64_t(m) * k, sb = int64_t(b->value.dim(1)) * b->value.dim(2),
          so = int64_t(m) * bn;
  for (int i = 0; i < g; ++i)
    gemm(false, trans_b, m, bn, k, T(1), pa + i * sa, k, pb + i * sb, b->value.dim(2), T(0),
         po + i * so, bn);
  return make_node<T>(std::move(out), {a, b},
                      [g, m, k, bn, sa, sb, so, trans_b](VarNode<T>& self) {
    const T* pg = self.grad.data();
    const T* pa2 = self.inputs[0]->value.data();
    const T* pb2 = self.inputs[1]->value.data();
    int ldb = self.inputs[1]->value.dim(2);
    if (self.inputs[0]->requires_grad) {
      Tensor<T>& ga = self.inputs[0]->ensure_grad();
      // dA = dY * B^T (or dY * B when b was transposed in forward)
      for (int i = 0; i < g; ++i)
        gemm(false, !trans_b, m, k, bn, T(1), pg + i * so, bn, pb2 + i * sb, ldb, T(1),
             ga.data() + i * sa, k);
    }
    if (self.inputs[1]->requires_grad) {
      Tensor<T>& gb = self.inputs[1]->ensure_grad();
      for (int i = 0; i < g; ++i) {
        if (!trans_b)  // dB = A^T * dY
          gemm(true, false, k, bn, m, T(1), pa2 + i * sa, k, pg + i * so, bn, T(1),
               gb.data() + i * sb, ldb);
        else  // stored b is (g, n, k): dB = dY^T * A
          gemm(true, false, bn, k, m, T(1), pg + i * so, bn, pa2 + i * sa, k, T(1),
               gb.data() + i * sb, ldb);
      }
    }
  });
}

// y[g, :, :] = x[g, :, :] / tau[g % heads]; tau is a learnable positive scalar
// per attention head.
template <typename T>
Var<T> div_by_head_scalar(const Var<T>& x, const Var<T>& tau, int heads) {
  assert(x->value.rank() == 3 && tau->value.numel() == heads);
  int g = x->value.dim(0);
  assert(g % heads == 0);
  int64_t stride = x->value.numel() / g;
  Tensor<T> out(x->value.shape());
  const T* px = x->value.data();
  const T* pt = tau->value.data();
  T* po = out.data();
  for (int i = 0; i < g; ++i) {
    T inv = T(1) / pt[i % heads];
    const T* xi = px + i * stride;
    T* yo = po + i * stride;
    for (int64_t j = 0; j < stride; ++j) yo[j] = xi[j] * inv;
  }
  return make_node<T>(std::move(out), {x, tau}, [g, heads, stride](VarNode<T>& self) {
    const T* pg = self.grad.data();
    const T* pt2 = self.inputs[1]->value.data();
    const T* py = self.value.data();
    if (self.inputs[0]->requires_grad) {
      Tensor<T>& gx = self.inputs[0]->ensure_grad();
      T* pd = gx.data();
      for (int i = 0; i < g; ++i) {
        T inv = T(1) / pt2[i % heads];
        for (int64_t j = 0; j < stride; ++j) pd[i * stride + j] += pg[i * stride + j] * inv;
      }
    }
    if (self.inputs[1]->requires_grad) {
      Tensor<T>& gt = self.inputs[1]->ensure_grad();
      for (int i = 0; i < g; ++i) {
        T inv = T(1) / pt2[i % heads];
        T acc = 0;
        for (int64_t j = 0; j < stride; ++j) acc += pg[i * stride + j] * py[i * stride + j];
        gt[i % heads] -= acc * inv;
      }
    }
  });
}

// y[n,c,h,w] = x[n,c,h,w] * gate[n,c]; channel attention application.
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& gate) {
  int n = x->value.dim(0), c = x->value.dim(1);
  assert(gate->value.numel() == int64_t(n) * c);
  int64_t plane = int64_t(x->value.dim(2)) * x->value.dim(3);
  Tensor<T> out(x->value.shape());
  const T* px = x->value.data();
  const T* pgt = gate->value.data();
  T* po = out.data();
  for (int64_t i = 0; i < int64_t(n) * c; ++i) {
    T gv = pgt[i];
    for (int64_t j = 0; j < plane; ++j) po[i * plane + j] = px[i * plane + j] * gv;
  }
  return make_node<T>(std::move(out), {x, gate}, [n, c, plane](VarNode<T>& self) {
    const T* pg = self.grad.data();
    const T* px2 = self.inputs[0]->value.data();
    const T* pgt2 = self.inputs[1]->value.data();
    if (self.inputs[0]->requires_grad) {
      Tensor<T>& gx = self.inputs[0]->ensure_grad();
      T* pd = gx.data();
      for (int64_t i = 0; i < int64_t(n) * c; ++i) {
        T gv = pgt2[i];
        for (int64_t j = 0; j < plane; ++j) pd[i * plane + j] += pg[i * plane + j] * gv;
      }
    }
    if (self.inputs[1]->requires_grad) {
      Tensor<T>& gg = self.inputs[1]->ensure_grad();
      for (int64_t i = 0; i < int64_t(n) * c; ++i) {
        T acc = 0;
        for (int64_t j = 0; j < plane; ++j) acc += pg[i * plane + j] * px2[i * plane + j];
        gg[i] += acc;
      }
    }
  });
}

// y[n,c,h,w] = x[n,c,h,w] * map[n,0,h,w]; spatial attention application.
template <typename T>
Var<T> scale_spatial(const Var<T>& x, const Var<T>& map) {
  int n = x->value.dim(0), c = x->value.dim(1);
  int64_t plane = int64_t(x->value.dim(2)) * x->value.dim(3);
  assert(map->value.dim(0) == n && map->value.dim(1) == 1 && map->value.numel() == n * plane);
  Tensor<T> out(x->value.shape());
  const T* px = x->value.data();
  const T* pm = map->value.data();
  T* po = out.data();
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      int64_t base = (int64_t(b) * c + ch) * plane;
      const T* mrow = pm + int64_t(b) * plane;
      for (int64_t j = 0; j < plane; ++j) po[base + j] = px[base + j] * mrow[j];
    }
  return make_node<T>(std::move(out), {x, map}, [n, c, plane](VarNode<T>& self) {
    const T* pg = self.grad.data();
    const T* px2 = self.inputs[0]->value.data();
    const T* pm2 = self.inputs[1]->value.data();
    if (self.inputs[0]->requires_grad) {
      Tensor<T>& gx = self.inputs[0]->ensure_grad();
      T* pd = gx.data();
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          int64_t base = (int64_t(b) * c + ch) * plane;
          const T* mrow = pm2 + int64_t(b) * plane;
          for (int64_t j = 0; j < plane; ++j) pd[base + j] += pg[base + j] * mrow[j];
        }
    }
    if (self.inputs[1]->requires_grad) {
      Tensor<T>& gm = self.inputs[1]->ensure_grad();
      T* pd = gm.data();
      for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
          int64_t base = (int64_t(b) * c + ch) * plane;
          T* mrow = pd + int64_t(b) * plane;
          for (int64_t j = 0; j < plane; ++j) mrow[j] += pg[base + j] * px2[base + j];
        }
    }
  });
}

}  // namespace ctcsr
