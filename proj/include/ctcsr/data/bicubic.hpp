// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>

#include "ctcsr/core/tensor.hpp"

namespace ctcsr {

// Keys cubic-convolution kernel, a = -0.5.
inline double cubic_kernel(double x) {
  x = std::abs(x);
  const double a = -0.5;
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

namespace detail {

struct ResampleTaps {
  // For output index o: weights over input indices start[o]..start[o]+len-1,
  // already edge-clamped and normalized.
  std::vector<int> start;
  std::vector<double> weights;  // row-major, len per output
  int len = 0;
};

// Half-pixel-centre mapping; when shrinking, the kernel is stretched by the
// scale factor (antialiasing). Weights are renormalized so constants are
// preserved exactly.
inline ResampleTaps cubic_taps(int in, int out) {
  ResampleTaps t;
  double step = static_cast<double>(in) / out;
  double support = step > 1.0 ? 2.0 * step : 2.0;
  t.len = static_cast<int>(std::ceil(support)) * 2 + 1;
  t.start.resize(static_cast<size_t>(out));
  t.weights.assign(static_cast<size_t>(out) * t.len, 0.0);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * step - 0.5;
    int first = static_cast<int>(std::floor(src - support)) + 1;
    t.start[static_cast<size_t>(o)] = first;
    double sum = 0.0;
    double* w = t.weights.data() + static_cast<size_t>(o) * t.len;
    for (int k = 0; k < t.len; ++k) {
      double d = src - (first + k);
      double v = step > 1.0 ? cubic_kernel(d / step) : cubic_kernel(d);
      w[k] = v;
      sum += v;
    }
    for (int k = 0; k < t.len; ++k) w[k] /= sum;
  }
  return t;
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace detail

// Separable cubic resize of a (C,H,W) image. Intermediate values are kept
// unclamped; only the final result is clamped to [0,1].
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& img, int out_h, int out_w) {
  int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  auto tw = detail::cubic_taps(w, out_w);
  auto th = detail::cubic_taps(h, out_h);

  // Horizontal pass in double precision.
  std::vector<double> mid(static_cast<size_t>(c) * h * out_w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const T* src = img.data() + (int64_t(ch) * h + y) * w;
      double* dst = mid.data() + (static_cast<size_t>(ch) * h + y) * out_w;
      for (int x = 0; x < out_w; ++x) {
        const double* wt = tw.weights.data() + static_cast<size_t>(x) * tw.len;
        int first = tw.start[static_cast<size_t>(x)];
        double acc = 0.0;
        for (int k = 0; k < tw.len; ++k)
          acc += wt[k] * static_cast<double>(src[detail::clamp_index(first + k, w)]);
        dst[x] = acc;
      }
    }

  Tensor<T> out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y) {
      const double* wt = th.weights.data() + static_cast<size_t>(y) * th.len;
      int first = th.start[static_cast<size_t>(y)];
      T* dst = out.data() + (int64_t(ch) * out_h + y) * out_w;
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < th.len; ++k)
          acc += wt[k] *
                 mid[(static_cast<size_t>(ch) * h + detail::clamp_index(first + k, h)) * out_w + x];
        if (acc < 0.0) acc = 0.0;
        if (acc > 1.0) acc = 1.0;
        dst[int64_t(x)] = static_cast<T>(acc);
      }
    }
  return out;
}

template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& img, int target_size) {
  return bicubic_resize(img, target_size, target_size);
}

// Centered crop; odd overhang drops the extra row/column at the bottom/right.
template <typename T>
Tensor<T> center_crop(const Tensor<T>& img, int size) {
  int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (h < size || w < size) throw std::runtime_error("center_crop: image smaller than crop");
  int top = (h - size) / 2;
  int left = (w - size) / 2;
  Tensor<T> out({c, size, size});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < size; ++y) {
      const T* src = img.data() + (int64_t(ch) * h + top + y) * w + left;
      std::copy(src, src + size, out.data() + (int64_t(ch) * size + y) * size);
    }
  return out;
}

}  // namespace ctcsr
