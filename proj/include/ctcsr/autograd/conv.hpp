// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ctcsr/autograd/variable.hpp"
#include "ctcsr/core/blas.hpp"

namespace ctcsr {
namespace detail {

template <typename T>
std::vector<T>& conv_scratch(int slot) {
  static thread_local std::vector<T> bufs[4];
  return bufs[static_cast<size_t>(slot)];
}

// col layout: (C*kh*kw) rows by (Ho*Wo) columns, row-major.
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  for (int ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + ((int64_t(ch) * k + ki) * k + kj) * ho * wo;
        const T* src = x + int64_t(ch) * h * w;
        for (int oh = 0; oh < ho; ++oh) {
          int ih = oh * stride - pad + ki;
          T* dst = row + int64_t(oh) * wo;
          if (ih < 0 || ih >= h) {
            for (int ow = 0; ow < wo; ++ow) dst[ow] = T(0);
            continue;
          }
          const T* srow = src + int64_t(ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            int iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < w) ? srow[iw] : T(0);
          }
        }
      }
}

// Scatter-accumulate of im2col's adjoint: x += col2im(col).
template <typename T>
void col2im_acc(const T* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
                T* x) {
  for (int ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((int64_t(ch) * k + ki) * k + kj) * ho * wo;
        T* dst = x + int64_t(ch) * h * w;
        for (int oh = 0; oh < ho; ++oh) {
          int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          T* drow = dst + int64_t(ih) * w;
          const T* srow = row + int64_t(oh) * wo;
          for (int ow = 0; ow < wo; ++ow) {
            int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < w) drow[iw] += srow[ow];
          }
        }
      }
}

struct ConvGeom {
  int cin, cout, k, stride, pad, groups;
  int h, w, ho, wo;
};

// Single-image forward: y (cout, ho*wo) = W (cout, cin/g*k*k) * col, per group.
template <typename T>
void conv_fwd_one(const ConvGeom& g, const T* x, const T* wgt, const T* bias, T* y) {
  int kdim = (g.cin / g.groups) * g.k * g.k;
  int64_t cols = int64_t(g.ho) * g.wo;
  auto& col = conv_scratch<T>(0);
  col.resize(static_cast<size_t>(int64_t(g.cin) * g.k * g.k * cols));
  im2col(x, g.cin, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, col.data());
  int cpg = g.cout / g.groups;
  for (int gi = 0; gi < g.groups; ++gi)
    gemm(false, false, cpg, static_cast<int>(cols), kdim, T(1), wgt + int64_t(gi) * cpg * kdim,
         kdim, col.data() + int64_t(gi) * kdim * cols, static_cast<int>(cols), T(0),
         y + int64_t(gi) * cpg * cols, static_cast<int>(cols));
  if (bias)
    for (int co = 0; co < g.cout; ++co) {
      T b = bias[co];
      T* yr = y + int64_t(co) * cols;
      for (int64_t i = 0; i < cols; ++i) yr[i] += b;
    }
}

// Single-image backward. Any of dx, dw, db may be null; dw/db are accumulated.
template <typename T>
void conv_bwd_one(const ConvGeom& g, const T* x, const T* wgt, const T* dy, T* dx, T* dw, T* db) {
  int kdim = (g.cin / g.groups) * g.k * g.k;
  int64_t cols = int64_t(g.ho) * g.wo;
  int cpg = g.cout / g.groups;
  if (db)
    for (int co = 0; co < g.cout; ++co) {
      const T* row = dy + int64_t(co) * cols;
      T acc = 0;
      for (int64_t i = 0; i < cols; ++i) acc += row[i];
      db[co] += acc;
    }
  if (dw) {
    auto& col = conv_scratch<T>(0);
    col.resize(static_cast<size_t>(int64_t(g.cin) * g.k * g.k * cols));
    im2col(x, g.cin, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, col.data());
    for (int gi = 0; gi < g.groups; ++gi)
      gemm(false, true, cpg, kdim, static_cast<int>(cols), T(1), dy + int64_t(gi) * cpg * cols,
           static_cast<int>(cols), col.data() + int64_t(gi) * kdim * cols,
           static_cast<int>(cols), T(1), dw + int64_t(gi) * cpg * kdim, kdim);
  }
  if (dx) {
    auto& colg = conv_scratch<T>(1);
    colg.resize(static_cast<size_t>(int64_t(g.cin) * g.k * g.k * cols));
    for (int gi = 0; gi < g.groups; ++gi)
      gemm(true, false, kdim, static_cast<int>(cols), cpg, T(1), wgt + int64_t(gi) * cpg * kdim,
           kdim, dy + int64_t(gi) * cpg * cols, static_cast<int>(cols), T(0),
           colg.data() + int64_t(gi) * kdim * cols, static_cast<int>(cols));
    col2im_acc(colg.data(), g.cin, g.h, g.w, g.k, g.stride, g.pad, g.ho, g.wo, dx);
  }
}

}  // namespace detail

// 2-d convolution, NCHW. Weight (cout, cin/groups, k, k), optional bias (cout).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad,
              int groups = 1) {
  int n = x->value.dim(0), cin = x->value.dim(1), h = x->value.dim(2), wi = x->value.dim(3);
  int cout = w->value.dim(0), k = w->value.dim(2);
  assert(w->value.dim(1) == cin / groups && w->value.dim(3) == k);
  assert(cin % groups == 0 && cout % groups == 0);
  detail::ConvGeom g{cin, cout, k, stride, pad, groups, h, wi,
                     (h + 2 * pad - k) / stride + 1, (wi + 2 * pad - k) / stride + 1};
  assert(g.ho > 0 && g.wo > 0);
  Tensor<T> out({n, cout, g.ho, g.wo});
  const T* bias = b ? b->value.data() : nullptr;
  for (int i = 0; i < n; ++i)
    detail::conv_fwd_one(g, x->value.data() + int64_t(i) * cin * h * wi, w->value.data(), bias,
                         out.data() + int64_t(i) * cout * g.ho * g.wo);
  std::vector<Var<T>> inputs = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_node<T>(std::move(out), std::move(inputs), [g, n](VarNode<T>& self) {
    auto& xv = self.inputs[0];
    auto& wv = self.inputs[1];
    bool has_b = self.inputs.size() == 3;
    T* dx = nullptr;
    if (xv->requires_grad) dx = xv->ensure_grad().data();
    T* dw = wv->requires_grad ? wv->ensure_grad().data() : nullptr;
    T* db = has_b && self.inputs[2]->requires_grad ? self.inputs[2]->ensure_grad().data() : nullptr;
    int64_t in_sz = int64_t(g.cin) * g.h * g.w;
    int64_t out_sz = int64_t(g.cout) * g.ho * g.wo;
    for (int i = 0; i < n; ++i)
      detail::conv_bwd_one(g, xv->value.data() + i * in_sz, wv->value.data(),
                           self.grad.data() + i * out_sz, dx ? dx + i * in_sz : nullptr, dw, db);
  });
}

// Transposed 2-d convolution (stride-s upsampling). Weight (cin, cout, k, k).
// Output size: s*(in-1) + k - 2*pad.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  int n = x->value.dim(0), cin = x->value.dim(1), h = x->value.dim(2), wi = x->value.dim(3);
  int cout = w->value.dim(1), k = w->value.dim(2);
  assert(w->value.dim(0) == cin && w->value.dim(3) == k);
  int ho = stride * (h - 1) + k - 2 * pad;
  int wo = stride * (wi - 1) + k - 2 * pad;
  assert(ho > 0 && wo > 0);
  // Geometry mirrors a forward conv mapping (ho, wo) -> (h, wi).
  detail::ConvGeom g{cout, cin, k, stride, pad, 1, ho, wo, h, wi};
  int kdim = cout * k * k;
  int64_t cols = int64_t(h) * wi;
  Tensor<T> out({n, cout, ho, wo});
  auto& colbuf = detail::conv_scratch<T>(2);
  colbuf.resize(static_cast<size_t>(int64_t(kdim) * cols));
  for (int i = 0; i < n; ++i) {
    // col = W^T (kdim x cin) * x (cin x cols), W viewed as (cin, kdim)
    gemm(true, false, kdim, static_cast<int>(cols), cin, T(1), w->value.data(), kdim,
         x->value.data() + int64_t(i) * cin * cols, static_cast<int>(cols), T(0), colbuf.data(),
         static_cast<int>(cols));
    T* y = out.data() + int64_t(i) * cout * ho * wo;
    detail::col2im_acc(colbuf.data(), cout, ho, wo, k, stride, pad, h, wi, y);
    if (b) {
      const T* bias = b->value.data();
      for (int co = 0; co < cout; ++co) {
        T bv = bias[co];
        T* yr = y + int64_t(co) * ho * wo;
        for (int64_t j = 0; j < int64_t(ho) * wo; ++j) yr[j] += bv;
      }
    }
  }
  std::vector<Var<T>> inputs = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
  return make_node<T>(std::move(out), std::move(inputs),
                      [g, n, cin, cout, k, kdim, cols, ho, wo](VarNode<T>& self) {
    auto& xv = self.inputs[0];
    auto& wv = self.inputs[1];
    bool has_b = self.inputs.size() == 3;
    int64_t in_sz = int64_t(cin) * cols;
    int64_t out_sz = int64_t(cout) * ho * wo;
    auto& col = detail::conv_scratch<T>(0);
    col.resize(static_cast<size_t>(int64_t(kdim) * cols));
    for (int i = 0; i < n; ++i) {
      const T* dy = self.grad.data() + i * out_sz;
      if (has_b && self.inputs[2]->requires_grad) {
        T* db = self.inputs[2]->ensure_grad().data();
        for (int co = 0; co < cout; ++co) {
          const T* row = dy + int64_t(co) * ho * wo;
          T acc = 0;
          for (int64_t j = 0; j < int64_t(ho) * wo; ++j) acc += row[j];
          db[co] += acc;
        }
      }
      detail::im2col(dy, cout, ho, wo, k, g.stride, g.pad, g.ho, g.wo, col.data());
      if (xv->requires_grad) {
        // dx (cin x cols) = W (cin, kdim) * col
        gemm(false, false, cin, static_cast<int>(cols), kdim, T(1), wv->value.data(), kdim,
             col.data(), static_cast<int>(cols), T(1), xv->ensure_grad().data() + i * in_sz,
             static_cast<int>(cols));
      }
      if (wv->requires_grad) {
        // dW (cin, kdim) += x (cin x cols) * col^T
        gemm(false, true, cin, kdim, static_cast<int>(cols), T(1),
             xv->value.data() + i * in_sz, static_cast<int>(cols), col.data(),
             static_cast<int>(cols), T(1), wv->ensure_grad().data(), kdim);
      }
    }
  });
}

// 2x2 average pooling with stride 2.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  assert(h % 2 == 0 && w % 2 == 0);
  int ho = h / 2, wo = w / 2;
  Tensor<T> out({n, c, ho, wo});
  const T* px = x->value.data();
  T* po = out.data();
  for (int64_t i = 0; i < int64_t(n) * c; ++i) {
    const T* sp = px + i * h * w;
    T* dp = po + i * ho * wo;
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow) {
        const T* s = sp + int64_t(2 * oh) * w + 2 * ow;
        dp[int64_t(oh) * wo + ow] = T(0.25) * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  }
  return make_node<T>(std::move(out), {x}, [n, c, h, w, ho, wo](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* pg = self.grad.data();
    T* pd = g.data();
    for (int64_t i = 0; i < int64_t(n) * c; ++i) {
      T* dp = pd + i * h * w;
      const T* sp = pg + i * ho * wo;
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          T gv = T(0.25) * sp[int64_t(oh) * wo + ow];
          T* d = dp + int64_t(2 * oh) * w + 2 * ow;
          d[0] += gv;
          d[1] += gv;
          d[w] += gv;
          d[w + 1] += gv;
        }
    }
  });
}

namespace detail {

// Half-pixel-centre source coordinates for 2x bilinear upsampling.
inline void bilinear2_taps(int out, int in, std::vector<int>& i0, std::vector<int>& i1,
                           std::vector<double>& w1) {
  i0.resize(static_cast<size_t>(out));
  i1.resize(static_cast<size_t>(out));
  w1.resize(static_cast<size_t>(out));
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    double f = std::floor(src);
    int a = static_cast<int>(f);
    double frac = src - f;
    int b = a + 1;
    if (a < 0) a = 0;
    if (b < 0) b = 0;
    if (a > in - 1) a = in - 1;
    if (b > in - 1) b = in - 1;
    i0[static_cast<size_t>(o)] = a;
    i1[static_cast<size_t>(o)] = b;
    w1[static_cast<size_t>(o)] = frac;
  }
}

}  // namespace detail

// 2x bilinear upsampling, half-pixel centres.
template <typename T>
Var<T> bilinear_up2(const Var<T>& x) {
  int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  int ho = h * 2, wo = w * 2;
  std::vector<int> y0, y1, x0, x1;
  std::vector<double> wy, wx;
  detail::bilinear2_taps(ho, h, y0, y1, wy);
  detail::bilinear2_taps(wo, w, x0, x1, wx);
  Tensor<T> out({n, c, ho, wo});
  const T* px = x->value.data();
  T* po = out.data();
  for (int64_t i = 0; i < int64_t(n) * c; ++i) {
    const T* sp = px + i * h * w;
    T* dp = po + i * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      const T* r0 = sp + int64_t(y0[oh]) * w;
      const T* r1 = sp + int64_t(y1[oh]) * w;
      T fy = static_cast<T>(wy[oh]);
      for (int ow = 0; ow < wo; ++ow) {
        T fx = static_cast<T>(wx[ow]);
        T top = r0[x0[ow]] * (T(1) - fx) + r0[x1[ow]] * fx;
        T bot = r1[x0[ow]] * (T(1) - fx) + r1[x1[ow]] * fx;
        dp[int64_t(oh) * wo + ow] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return make_node<T>(std::move(out),
                      {x}, [n, c, h, w, ho, wo, y0, y1, x0, x1, wy, wx](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* pg = self.grad.data();
    T* pd = g.data();
    for (int64_t i = 0; i < int64_t(n) * c; ++i) {
      T* dp = pd + i * h * w;
      const T* sp = pg + i * ho * wo;
      for (int oh = 0; oh < ho; ++oh) {
        T fy = static_cast<T>(wy[oh]);
        for (int ow = 0; ow < wo; ++ow) {
          T fx = static_cast<T>(wx[ow]);
          T gv = sp[int64_t(oh) * wo + ow];
          dp[int64_t(y0[oh]) * w + x0[ow]] += gv * (T(1) - fy) * (T(1) - fx);
          dp[int64_t(y0[oh]) * w + x1[ow]] += gv * (T(1) - fy) * fx;
          dp[int64_t(y1[oh]) * w + x0[ow]] += gv * fy * (T(1) - fx);
          dp[int64_t(y1[oh]) * w + x1[ow]] += gv * fy * fx;
        }
      }
    }
  });
}

// Nearest-neighbour decimation (keeps even rows/columns).
template <typename T>
Var<T> nn_down2(const Var<T>& x) {
  int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  int ho = h / 2, wo = w / 2;
  Tensor<T> out({n, c, ho, wo});
  const T* px = x->value.data();
  T* po = out.data();
  for (int64_t i = 0; i < int64_t(n) * c; ++i)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow)
        po[(i * ho + oh) * wo + ow] = px[(i * h + 2 * oh) * w + 2 * ow];
  return make_node<T>(std::move(out), {x}, [n, c, h, w, ho, wo](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* pg = self.grad.data();
    T* pd = g.data();
    for (int64_t i = 0; i < int64_t(n) * c; ++i)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow)
          pd[(i * h + 2 * oh) * w + 2 * ow] += pg[(i * ho + oh) * wo + ow];
  });
}

// Nearest-neighbour 2x repetition.
template <typename T>
Var<T> nn_up2(const Var<T>& x) {
  int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  int ho = h * 2, wo = w * 2;
  Tensor<T> out({n, c, ho, wo});
  const T* px = x->value.data();
  T* po = out.data();
  for (int64_t i = 0; i < int64_t(n) * c; ++i)
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow)
        po[(i * ho + oh) * wo + ow] = px[(i * h + oh / 2) * w + ow / 2];
  return make_node<T>(std::move(out), {x}, [n, c, h, w, ho, wo](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* pg = self.grad.data();
    T* pd = g.data();
    for (int64_t i = 0; i < int64_t(n) * c; ++i)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow)
          pd[(i * h + oh / 2) * w + ow / 2] += pg[(i * ho + oh) * wo + ow];
  });
}

// Global average pool to (N, C).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  int n = x->value.dim(0), c = x->value.dim(1);
  int64_t plane = int64_t(x->value.dim(2)) * x->value.dim(3);
  Tensor<T> out({n, c});
  const T* px = x->value.data();
  for (int64_t i = 0; i < int64_t(n) * c; ++i) {
    T acc = 0;
    const T* sp = px + i * plane;
    for (int64_t j = 0; j < plane; ++j) acc += sp[j];
    out[i] = acc / static_cast<T>(plane);
  }
  return make_node<T>(std::move(out), {x}, [n, c, plane](VarNode<T>& self) {
    Tensor<T>& g = self.inputs[0]->ensure_grad();
    const T* pg = self.grad.data();
    T* pd = g.data();
    T inv = T(1) / static_cast<T>(plane);
    for (int64_t i = 0; i < int64_t(n) * c; ++i) {
      T gv = pg[i] * inv;
      T* dp = pd + i * plane;
      for (int64_t j = 0; j < plane; ++j) dp[j] += gv;
    }
  });
}

}  // namespace ctcsr
