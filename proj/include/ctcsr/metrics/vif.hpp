// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "ctcsr/metrics/psnr_ssim.hpp"

namespace ctcsr {

namespace detail {

// Keep every second row/column, starting at index 0.
inline Tensor<double> decimate2(const Tensor<double>& x) {
  int h = x.dim(0), w = x.dim(1);
  int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor<double> out({oh, ow});
  for (int y = 0; y < oh; ++y)
    for (int xo = 0; xo < ow; ++xo) out[int64_t(y) * ow + xo] = x[int64_t(2 * y) * w + 2 * xo];
  return out;
}

}  // namespace detail

// Pixel-domain visual information fidelity with a Gaussian scale mixture
// model: four scales, window size 2^(5-s)+1 with std N/5, additive noise
// variance 2 on the 0..255 range. Inputs are luminance grids in [0,1];
// they are rescaled to 0..255 internally.
inline double vif_p(const Tensor<double>& ref_unit, const Tensor<double>& dist_unit) {
  if (!ref_unit.same_shape(dist_unit)) throw std::invalid_argument("vif: shape mismatch");
  const double sigma_n_sq = 2.0, eps = 1e-10;

  Tensor<double> ref(ref_unit.shape()), dist(dist_unit.shape());
  for (int64_t i = 0; i < ref.numel(); ++i) {
    ref[i] = ref_unit[i] * 255.0;
    dist[i] = dist_unit[i] * 255.0;
  }

  double num = 0.0, den = 0.0;
  for (int scale = 1; scale <= 4; ++scale) {
    int n = (1 << (4 - scale + 1)) + 1;
    auto win = detail::gaussian_window(n, n / 5.0);
    if (scale > 1) {
      if (ref.dim(0) < n || ref.dim(1) < n) break;  // image too small for this scale
      ref = detail::decimate2(detail::filter_valid(ref, win));
      dist = detail::decimate2(detail::filter_valid(dist, win));
    }
    if (ref.dim(0) < n || ref.dim(1) < n) break;
    auto mu1 = detail::filter_valid(ref, win);
    auto mu2 = detail::filter_valid(dist, win);
    auto s11 = detail::filter_valid(detail::hadamard(ref, ref), win);
    auto s22 = detail::filter_valid(detail::hadamard(dist, dist), win);
    auto s12 = detail::filter_valid(detail::hadamard(ref, dist), win);
    for (int64_t i = 0; i < mu1.numel(); ++i) {
      double m1 = mu1[i], m2 = mu2[i];
      double sigma1_sq = std::max(0.0, s11[i] - m1 * m1);
      double sigma2_sq = std::max(0.0, s22[i] - m2 * m2);
      double sigma12 = s12[i] - m1 * m2;

      double g = sigma12 / (sigma1_sq + eps);
      double sv_sq = sigma2_sq - g * sigma12;
      if (sigma1_sq < eps) {
        g = 0.0;
        sv_sq = sigma2_sq;
        sigma1_sq = 0.0;
      }
      if (sigma2_sq < eps) {
        g = 0.0;
        sv_sq = 0.0;
      }
      if (g < 0.0) {
        sv_sq = sigma2_sq;
        g = 0.0;
      }
      if (sv_sq < eps) sv_sq = eps;

      num += std::log10(1.0 + g * g * sigma1_sq / (sv_sq + sigma_n_sq));
      den += std::log10(1.0 + sigma1_sq / sigma_n_sq);
    }
  }
  if (den == 0.0) return 1.0;  // featureless reference carries no information
  return num / den;
}

template <typename T>
double vif_p_rgb(const Tensor<T>& ref, const Tensor<T>& dist) {
  return vif_p(luminance(ref), luminance(dist));
}

}  // namespace ctcsr
