// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace ctcsr {

struct ImageMetrics {
  double psnr_rgb = 0, psnr_y = 0, ssim = 0, vif = 0;
  double lpips = 0;
  bool lpips_available = false;
};

// Infinite PSNR (identical images) is reported per-image as "inf" but enters
// aggregates capped, so averages stay finite and comparable.
constexpr double kPsnrCap = 99.0;

struct MetricReport {
  std::vector<std::pair<std::string, ImageMetrics>> per_image;
  std::string checkpoint_id;  // provenance: what produced the SR images
  std::string manifest_id;

  ImageMetrics aggregate() const {
    ImageMetrics agg;
    if (per_image.empty()) return agg;
    int lp_n = 0;
    for (const auto& [id, m] : per_image) {
      agg.psnr_rgb += std::min(m.psnr_rgb, kPsnrCap);
      agg.psnr_y += std::min(m.psnr_y, kPsnrCap);
      agg.ssim += m.ssim;
      agg.vif += m.vif;
      if (m.lpips_available) {
        agg.lpips += m.lpips;
        ++lp_n;
      }
    }
    double n = static_cast<double>(per_image.size());
    agg.psnr_rgb /= n;
    agg.psnr_y /= n;
    agg.ssim /= n;
    agg.vif /= n;
    agg.lpips_available = lp_n == static_cast<int>(per_image.size());
    if (lp_n > 0) agg.lpips /= lp_n;
    return agg;
  }

  static std::string fmt(double v) {
    if (std::isinf(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("report: cannot write " + path);
    out << "id,psnr_rgb,psnr_y,ssim,vif,lpips\n";
    auto row = [&](const std::string& id, const ImageMetrics& m) {
      out << id << ',' << fmt(m.psnr_rgb) << ',' << fmt(m.psnr_y) << ',' << fmt(m.ssim) << ','
          << fmt(m.vif) << ',' << (m.lpips_available ? fmt(m.lpips) : std::string()) << "\n";
    };
    for (const auto& [id, m] : per_image) row(id, m);
    ImageMetrics agg = aggregate();
    // The aggregate row re-caps PSNR so the written value matches aggregate().
    row("aggregate", agg);
  }

  // Sidecar recording exactly which checkpoint and manifest produced the CSV.
  void write_provenance(const std::string& path) const {
    nlohmann::json j{{"checkpoint", checkpoint_id},
                     {"manifest", manifest_id},
                     {"images", per_image.size()}};
    std::ofstream out(path);
    out << j.dump(2) << "\n";
  }
};

}  // namespace ctcsr
