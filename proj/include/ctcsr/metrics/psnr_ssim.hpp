// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>

#include "ctcsr/core/tensor.hpp"

namespace ctcsr {

// BT.601 luma of an RGB (3,H,W) unit-range image, kept in [0,1] (digital
// range 16..235 maps to 16/255..235/255).
template <typename T>
Tensor<double> luminance(const Tensor<T>& img) {
  int h = img.dim(1), w = img.dim(2);
  int64_t plane = int64_t(h) * w;
  Tensor<double> y({h, w});
  for (int64_t i = 0; i < plane; ++i) {
    double r = img[i], g = img[plane + i], b = img[2 * plane + i];
    y[i] = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0;
  }
  return y;
}

// Peak signal-to-noise ratio over all RGB samples, peak = 1. Identical inputs
// give +infinity; aggregation code caps that (see report.hpp).
template <typename T>
double psnr_rgb(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

template <typename T>
double psnr_y(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  auto ya = luminance(a), yb = luminance(b);
  double mse = 0.0;
  for (int64_t i = 0; i < ya.numel(); ++i) {
    double d = ya[i] - yb[i];
    mse += d * d;
  }
  mse /= static_cast<double>(ya.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int n, double sigma) {
  std::vector<double> w(static_cast<size_t>(n));
  double c = (n - 1) / 2.0, sum = 0.0;
  for (int i = 0; i < n; ++i) {
    w[static_cast<size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Valid-mode separable filtering of an (H,W) grid with an outer-product
// window; output is (H-n+1, W-n+1).
inline Tensor<double> filter_valid(const Tensor<double>& x, const std::vector<double>& win) {
  int n = static_cast<int>(win.size());
  int h = x.dim(0), w = x.dim(1);
  int oh = h - n + 1, ow = w - n + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("filter_valid: window larger than image");
  Tensor<double> mid({h, ow});
  for (int y = 0; y < h; ++y)
    for (int xo = 0; xo < ow; ++xo) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += win[static_cast<size_t>(k)] * x[int64_t(y) * w + xo + k];
      mid[int64_t(y) * ow + xo] = acc;
    }
  Tensor<double> out({oh, ow});
  for (int yo = 0; yo < oh; ++yo)
    for (int xo = 0; xo < ow; ++xo) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += win[static_cast<size_t>(k)] * mid[int64_t(yo + k) * ow + xo];
      out[int64_t(yo) * ow + xo] = acc;
    }
  return out;
}

inline Tensor<double> hadamard(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

}  // namespace detail

// Mean structural similarity of two luminance grids in [0,1]: 11x11 Gaussian
// window (sigma 1.5), valid positions only, K1=0.01 K2=0.03 on unit range.
inline double ssim(const Tensor<double>& a, const Tensor<double>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  auto win = detail::gaussian_window(11, 1.5);
  auto mu1 = detail::filter_valid(a, win);
  auto mu2 = detail::filter_valid(b, win);
  auto s11 = detail::filter_valid(detail::hadamard(a, a), win);
  auto s22 = detail::filter_valid(detail::hadamard(b, b), win);
  auto s12 = detail::filter_valid(detail::hadamard(a, b), win);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (int64_t i = 0; i < mu1.numel(); ++i) {
    double m1 = mu1[i], m2 = mu2[i];
    double v1 = s11[i] - m1 * m1, v2 = s22[i] - m2 * m2, cv = s12[i] - m1 * m2;
    acc += ((2.0 * m1 * m2 + c1) * (2.0 * cv + c2)) /
           ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
  }
  return acc / static_cast<double>(mu1.numel());
}

template <typename T>
double ssim_rgb(const Tensor<T>& a, const Tensor<T>& b) {
  return ssim(luminance(a), luminance(b));
}

}  // namespace ctcsr
