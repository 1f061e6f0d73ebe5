// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ctcsr/io/png_io.hpp"

namespace ctcsr {

// Minimal line-chart renderer for loss curves: one series per named CSV
// column, log-ish autoscaling left to the caller (values are plotted as-is).
class Plot {
 public:
  Plot(int w = 900, int h = 500) : w_(w), h_(h), img_({3, h, w}) {
    std::fill(img_.data(), img_.data() + img_.numel(), 1.0f);
  }

  void add_series(const std::vector<double>& xs, const std::vector<double>& ys, int color) {
    series_.push_back({xs, ys, color});
  }

  void save(const std::string& path) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series_)
      for (size_t i = 0; i < s.xs.size(); ++i) {
        if (!std::isfinite(s.ys[i])) continue;
        xmin = std::min(xmin, s.xs[i]);
        xmax = std::max(xmax, s.xs[i]);
        ymin = std::min(ymin, s.ys[i]);
        ymax = std::max(ymax, s.ys[i]);
      }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;
    // axes margin
    int m = 40;
    for (int y = 0; y < h_; ++y) put(y, m, 0.7f, 0.7f, 0.7f);
    for (int x = 0; x < w_; ++x) put(h_ - m, x, 0.7f, 0.7f, 0.7f);
    for (const auto& s : series_) {
      float r = colors_[s.color % 6][0], g = colors_[s.color % 6][1],
            b = colors_[s.color % 6][2];
      int px = -1, py = -1;
      for (size_t i = 0; i < s.xs.size(); ++i) {
        if (!std::isfinite(s.ys[i])) continue;
        int x = m + static_cast<int>((s.xs[i] - xmin) / (xmax - xmin) * (w_ - m - 10));
        int y = h_ - m - static_cast<int>((s.ys[i] - ymin) / (ymax - ymin) * (h_ - m - 10));
        if (px >= 0) line(px, py, x, y, r, g, b);
        px = x;
        py = y;
      }
    }
    write_png(path, img_, 8);
  }

 private:
  struct Series {
    std::vector<double> xs, ys;
    int color;
  };
  int w_, h_;
  Tensor<float> img_;
  std::vector<Series> series_;
  static constexpr float colors_[6][3] = {{0.85f, 0.2f, 0.2f}, {0.2f, 0.4f, 0.85f},
                                          {0.15f, 0.6f, 0.25f}, {0.8f, 0.55f, 0.1f},
                                          {0.55f, 0.25f, 0.7f}, {0.2f, 0.2f, 0.2f}};

  void put(int y, int x, float r, float g, float b) {
    if (y < 0 || y >= h_ || x < 0 || x >= w_) return;
    int64_t plane = int64_t(h_) * w_;
    img_[int64_t(y) * w_ + x] = r;
    img_[plane + int64_t(y) * w_ + x] = g;
    img_[2 * plane + int64_t(y) * w_ + x] = b;
  }

  void line(int x0, int y0, int x1, int y1, float r, float g, float b) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1, err = dx + dy;
    while (true) {
      put(y0, x0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
};

// Renders selected columns of a loss CSV (header row expected) to a PNG.
inline void plot_csv(const std::string& csv_path, const std::string& png_path,
                     const std::vector<std::string>& columns) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("plot: cannot open " + csv_path);
  std::string header;
  std::getline(in, header);
  std::vector<std::string> names;
  {
    std::stringstream ss(header);
    std::string tok;
    while (std::getline(ss, tok, ',')) names.push_back(tok);
  }
  std::vector<int> want;
  for (const auto& c : columns) {
    auto it = std::find(names.begin(), names.end(), c);
    if (it == names.end()) throw std::runtime_error("plot: no column " + c);
    want.push_back(static_cast<int>(it - names.begin()));
  }
  std::vector<std::vector<double>> xs(want.size()), ys(want.size());
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> cells;
    while (std::getline(ss, tok, ',')) cells.push_back(tok);
    if (cells.empty()) continue;
    double x = std::atof(cells[0].c_str());
    for (size_t i = 0; i < want.size(); ++i) {
      size_t col = static_cast<size_t>(want[i]);
      if (col < cells.size() && !cells[col].empty()) {
        xs[i].push_back(x);
        ys[i].push_back(std::atof(cells[col].c_str()));
      }
    }
  }
  Plot p;
  for (size_t i = 0; i < want.size(); ++i)
    if (!xs[i].empty()) p.add_series(xs[i], ys[i], static_cast<int>(i));
  p.save(png_path);
}

}  // namespace ctcsr
