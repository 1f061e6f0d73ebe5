// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <filesystem>

#include "ctcsr/core/rng.hpp"
#include "ctcsr/io/png_io.hpp"

namespace ctcsr {

namespace detail {

struct FaceParams {
  double cx, cy;          // head centre (fraction of canvas)
  double rx, ry;          // head radii
  double skin_r, skin_g, skin_b;
  double bg_r, bg_g, bg_b, bg_tilt;
  double eye_dx, eye_y, eye_r, iris_r, iris_hue;
  double brow_y, brow_tilt;
  double nose_len;
  double mouth_y, mouth_w, mouth_curve;
  double hair_r, hair_g, hair_b, hair_drop;
  double blush;
  int freckles;
  uint64_t freckle_seed;
};

inline FaceParams sample_face(Rng& rng) {
  FaceParams p;
  p.cx = 0.5 + rng.uniform(-0.04, 0.04);
  p.cy = 0.46 + rng.uniform(-0.03, 0.03);
  p.rx = 0.30 + rng.uniform(-0.04, 0.05);
  p.ry = 0.38 + rng.uniform(-0.04, 0.05);
  double tone = rng.uniform(0.35, 0.9);
  p.skin_r = tone * 1.00 + 0.05;
  p.skin_g = tone * 0.82 + 0.03;
  p.skin_b = tone * 0.66 + 0.02;
  p.bg_r = rng.uniform(0.1, 0.9);
  p.bg_g = rng.uniform(0.1, 0.9);
  p.bg_b = rng.uniform(0.1, 0.9);
  p.bg_tilt = rng.uniform(-1.0, 1.0);
  p.eye_dx = 0.12 + rng.uniform(-0.02, 0.03);
  p.eye_y = p.cy - 0.05 + rng.uniform(-0.02, 0.02);
  p.eye_r = 0.035 + rng.uniform(-0.006, 0.01);
  p.iris_r = p.eye_r * (0.45 + rng.uniform(0.0, 0.25));
  p.iris_hue = rng.uniform(0.0, 1.0);
  p.brow_y = p.eye_y - 0.06 + rng.uniform(-0.01, 0.01);
  p.brow_tilt = rng.uniform(-0.02, 0.02);
  p.nose_len = 0.08 + rng.uniform(-0.015, 0.02);
  p.mouth_y = p.cy + 0.17 + rng.uniform(-0.02, 0.02);
  p.mouth_w = 0.09 + rng.uniform(-0.02, 0.03);
  p.mouth_curve = rng.uniform(-0.015, 0.03);
  double hair = rng.uniform(0.05, 0.6);
  p.hair_r = hair * (0.8 + rng.uniform(0.0, 0.4));
  p.hair_g = hair * (0.6 + rng.uniform(0.0, 0.3));
  p.hair_b = hair * (0.4 + rng.uniform(0.0, 0.4));
  p.hair_drop = rng.uniform(0.10, 0.22);
  p.blush = rng.uniform(0.0, 0.25);
  p.freckles = rng.below(14);
  p.freckle_seed = static_cast<uint64_t>(rng.uniform() * 9007199254740992.0);
  return p;
}

inline double soft_in(double d, double feather) {  // 1 inside (d<0), 0 outside
  double t = -d / feather;
  if (t <= -1.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return 0.5 + t * (0.75 - 0.25 * t * t);  // smooth cubic step
}

inline double ellipse_sd(double x, double y, double cx, double cy, double rx, double ry) {
  double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return std::sqrt(dx * dx + dy * dy) - 1.0;
}

}  // namespace detail

// Renders one procedural portrait at (3, h, w), values in [0,1]. Pure function
// of the RNG state; the canvas is drawn at 2x and box-averaged down.
template <typename T = float>
Tensor<T> synth_face(Rng& rng, int h = 218, int w = 178) {
  using namespace detail;
  FaceParams p = sample_face(rng);
  int H = h * 2, W = w * 2;
  std::vector<double> canvas(static_cast<size_t>(3) * H * W);
  double feather = 2.5 / H;

  std::vector<std::array<double, 3>> freckles;
  {
    Rng fr(p.freckle_seed);
    for (int i = 0; i < p.freckles; ++i)
      freckles.push_back({p.cx + fr.uniform(-0.5, 0.5) * p.rx, p.cy + fr.uniform(0.0, 0.6) * p.ry,
                          0.004 + fr.uniform(0.0, 0.004)});
  }

  double iris[3] = {0.2 + 0.4 * p.iris_hue, 0.3 + 0.3 * (1.0 - p.iris_hue),
                    0.25 + 0.55 * (1.0 - p.iris_hue)};

  for (int y = 0; y < H; ++y) {
    double fy = (y + 0.5) / H;
    for (int x = 0; x < W; ++x) {
      double fx = (x + 0.5) / W;
      double t = fy + p.bg_tilt * (fx - 0.5);
      double r = p.bg_r * (0.6 + 0.4 * t), g = p.bg_g * (0.6 + 0.4 * t),
             b = p.bg_b * (0.6 + 0.4 * t);

      auto blend = [&](double m, double cr, double cg, double cb) {
        r += m * (cr - r);
        g += m * (cg - g);
        b += m * (cb - b);
      };

      // torso
      blend(soft_in(ellipse_sd(fx, fy, p.cx, 1.25, 0.42, 0.45), feather * 2),
            p.hair_r * 0.6 + 0.2, p.hair_g * 0.6 + 0.2, p.hair_b * 0.6 + 0.3);
      // hair behind the head
      blend(soft_in(ellipse_sd(fx, fy, p.cx, p.cy - 0.03, p.rx * 1.22, p.ry * 1.18), feather * 2),
            p.hair_r, p.hair_g, p.hair_b);
      // head
      double rim = ellipse_sd(fx, fy, p.cx, p.cy, p.rx, p.ry);
      double head = soft_in(rim, feather);
      // darken the skin toward the rim for some low-frequency structure
      double shade = 1.0 - 0.25 * std::min(1.0, std::max(0.0, (rim + 0.35) / 0.35));
      blend(head, p.skin_r * shade, p.skin_g * shade, p.skin_b * shade);
      // hairline cap over the forehead
      blend(head * soft_in(fy - (p.cy - p.ry + p.hair_drop), feather * 3), p.hair_r, p.hair_g,
            p.hair_b);
      // blush
      for (int s = -1; s <= 1; s += 2)
        blend(p.blush * soft_in(ellipse_sd(fx, fy, p.cx + s * p.eye_dx, p.cy + 0.09, 0.055, 0.035),
                                feather * 6),
              p.skin_r * 1.05, p.skin_g * 0.6, p.skin_b * 0.6);
      // freckles
      for (const auto& f : freckles)
        blend(0.5 * soft_in(ellipse_sd(fx, fy, f[0], f[1], f[2], f[2]), feather), p.skin_r * 0.55,
              p.skin_g * 0.45, p.skin_b * 0.4);
      // eyes: sclera, iris, pupil, brow
      for (int s = -1; s <= 1; s += 2) {
        double ex = p.cx + s * p.eye_dx;
        blend(soft_in(ellipse_sd(fx, fy, ex, p.eye_y, p.eye_r * 1.5, p.eye_r), feather), 0.93,
              0.93, 0.92);
        blend(soft_in(ellipse_sd(fx, fy, ex, p.eye_y, p.iris_r, p.iris_r), feather), iris[0],
              iris[1], iris[2]);
        blend(soft_in(ellipse_sd(fx, fy, ex, p.eye_y, p.iris_r * 0.45, p.iris_r * 0.45), feather),
              0.05, 0.05, 0.06);
        double by = p.brow_y + s * p.brow_tilt * (fx - ex);
        blend(soft_in(ellipse_sd(fx, fy, ex, by, p.eye_r * 1.9, p.eye_r * 0.45), feather),
              p.hair_r * 0.7, p.hair_g * 0.7, p.hair_b * 0.7);
      }
      // nose: vertical ridge + base shadow
      blend(0.35 * soft_in(ellipse_sd(fx, fy, p.cx, p.cy + 0.04, 0.012, p.nose_len), feather * 2),
            p.skin_r * 0.8, p.skin_g * 0.75, p.skin_b * 0.7);
      blend(0.5 * soft_in(ellipse_sd(fx, fy, p.cx, p.cy + 0.04 + p.nose_len, 0.03, 0.012),
                          feather * 2),
            p.skin_r * 0.7, p.skin_g * 0.6, p.skin_b * 0.55);
      // mouth: two stacked lobes, curve bends the midline
      double my = p.mouth_y + p.mouth_curve * (1.0 - std::pow((fx - p.cx) / p.mouth_w, 2.0));
      blend(soft_in(ellipse_sd(fx, fy, p.cx, my, p.mouth_w, 0.022), feather), 0.65, 0.25, 0.28);
      blend(soft_in(ellipse_sd(fx, fy, p.cx, my + 0.012, p.mouth_w * 0.8, 0.012), feather), 0.5,
            0.15, 0.18);

      size_t i = static_cast<size_t>(y) * W + x;
      canvas[i] = r;
      canvas[static_cast<size_t>(H) * W + i] = g;
      canvas[2 * static_cast<size_t>(H) * W + i] = b;
    }
  }

  Tensor<T> out({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double* pl = canvas.data() + static_cast<size_t>(c) * H * W;
        double v = 0.25 * (pl[size_t(2 * y) * W + 2 * x] + pl[size_t(2 * y) * W + 2 * x + 1] +
                           pl[size_t(2 * y + 1) * W + 2 * x] + pl[size_t(2 * y + 1) * W + 2 * x + 1]);
        out[(int64_t(c) * h + y) * w + x] = static_cast<T>(std::min(1.0, std::max(0.0, v)));
      }
  return out;
}

// Writes `count` portraits as 16-bit PNGs named face_00000.png.. into dir.
// Image k depends only on (seed, k).
inline int synth_corpus(const std::filesystem::path& dir, int count, uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::mix(seed, 0xFACE0000ull + static_cast<uint64_t>(i)));
    auto img = synth_face<float>(rng);
    char name[32];
    std::snprintf(name, sizeof(name), "face_%05d.png", i);
    write_png((dir / name).string(), img);
  }
  return count;
}

}  // namespace ctcsr
