// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ctcsr/core/rng.hpp"
#include "ctcsr/data/bicubic.hpp"
#include "ctcsr/io/png_io.hpp"
#include "json.hpp"

namespace ctcsr {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string id;
  std::string hr;     // paths relative to the manifest file
  std::string lr;
  std::string lr_up;
};

struct Manifest {
  std::string split;
  uint64_t seed = 0;
  std::string source_protocol;
  std::vector<ManifestEntry> entries;
  fs::path dir;  // directory the manifest was loaded from

  fs::path resolve(const std::string& rel) const { return dir / rel; }

  static Manifest load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
    Manifest m;
    m.dir = path.parent_path();
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("manifest: empty file " + path.string());
    auto hdr = nlohmann::json::parse(line);
    m.split = hdr.at("split").get<std::string>();
    m.seed = hdr.at("seed").get<uint64_t>();
    m.source_protocol = hdr.at("source_protocol").get<std::string>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      m.entries.push_back({j.at("id").get<std::string>(), j.at("hr").get<std::string>(),
                           j.at("lr").get<std::string>(), j.at("lr_up").get<std::string>()});
    }
    return m;
  }

  void save(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest: cannot write " + path.string());
    nlohmann::json hdr{{"split", split}, {"seed", seed}, {"source_protocol", source_protocol}};
    out << hdr.dump() << "\n";
    for (const auto& e : entries) {
      nlohmann::json j{{"id", e.id}, {"hr", e.hr}, {"lr", e.lr}, {"lr_up", e.lr_up}};
      out << j.dump() << "\n";
    }
  }
};

struct PrepareResult {
  std::vector<fs::path> manifests;  // train, val, test
  int prepared = 0;
  std::vector<std::string> skipped;  // ids too small for the crop
};

// Crops each source image to hr_size, derives lr by cubic downscale and lr_up
// by cubic upscale of the stored (quantized) lr, and writes one manifest per
// split. The stored files are the ground truth: lr reproduces bit-exactly from
// the stored hr under the fixed kernel.
inline PrepareResult prepare_dataset(const fs::path& src_dir, const fs::path& out_dir,
                                     int n_train, int n_val, int n_test, uint64_t seed,
                                     int hr_size = 128, int scale = 8) {
  if (hr_size % scale != 0) throw std::runtime_error("prepare: hr_size must be divisible by scale");
  std::vector<fs::path> files;
  if (!fs::exists(src_dir)) throw std::runtime_error("prepare: no such directory " + src_dir.string());
  for (const auto& e : fs::directory_iterator(src_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("prepare: no readable images in " + src_dir.string());

  PrepareResult res;
  int lr_size = hr_size / scale;

  // Filter out images too small to crop before splitting, so split sizes are
  // honoured exactly.
  std::vector<fs::path> usable;
  for (const auto& f : files) {
    auto [h, w] = png_dims(f.string());
    if (h < hr_size || w < hr_size)
      res.skipped.push_back(f.filename().string());
    else
      usable.push_back(f);
  }
  if (static_cast<int>(usable.size()) < n_train + n_val + n_test)
    throw std::runtime_error("prepare: requested splits exceed corpus size (" +
                             std::to_string(usable.size()) + " usable images)");

  std::vector<int> order(usable.size());
  Rng rng(Rng::mix(seed, 0xDA7A));
  rng.permutation(order, order.size());

  fs::create_directories(out_dir);
  const char* names[3] = {"train", "val", "test"};
  int counts[3] = {n_train, n_val, n_test};
  int cursor = 0;
  for (int s = 0; s < 3; ++s) {
    Manifest m;
    m.split = names[s];
    m.seed = seed;
    m.source_protocol = "center-crop " + std::to_string(hr_size) + ", cubic x" +
                        std::to_string(scale) + " down, 16-bit png";
    fs::path split_dir = out_dir / names[s];
    fs::create_directories(split_dir);
    for (int i = 0; i < counts[s]; ++i, ++cursor) {
      const fs::path& src = usable[static_cast<size_t>(order[static_cast<size_t>(cursor)])];
      std::string id = src.stem().string();
      // Double precision keeps the stored lr bit-identical to what a double
      // re-derivation from the stored hr produces (the load_batch invariant).
      auto img = read_png<double>(src.string());
      auto hr = quantize_unit(center_crop(img, hr_size));
      auto lr = quantize_unit(bicubic_resize(hr, lr_size));
      auto lr_up = quantize_unit(bicubic_resize(lr, hr_size));
      std::string base = std::string(names[s]) + "/" + id;
      write_png((out_dir / (base + "_hr.png")).string(), hr);
      write_png((out_dir / (base + "_lr.png")).string(), lr);
      write_png((out_dir / (base + "_lrup.png")).string(), lr_up);
      m.entries.push_back({id, base + "_hr.png", base + "_lr.png", base + "_lrup.png"});
      ++res.prepared;
    }
    fs::path mpath = out_dir / (std::string(names[s]) + ".jsonl");
    m.save(mpath);
    res.manifests.push_back(mpath);
  }

  std::ofstream log(out_dir / "prepare_log.txt");
  log << "prepared " << res.prepared << " images, seed " << seed << "\n";
  for (const auto& s : res.skipped) log << "skipped (too small): " << s << "\n";
  return res;
}

template <typename T>
struct Batch {
  Tensor<T> hr;     // (B,3,S,S)
  Tensor<T> lr;     // (B,3,S/8,S/8)
  Tensor<T> lr_up;  // (B,3,S,S)
  std::vector<std::string> ids;
};

namespace detail {
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}
}  // namespace detail

// Loads the given manifest rows into batch tensors. About 1% of ids (chosen by
// id hash, so the set is stable) get the derivation invariant re-checked:
// quantize(resize(hr)) must equal the stored lr exactly.
template <typename T>
Batch<T> load_batch(const Manifest& m, const std::vector<int>& indices) {
  if (indices.empty()) throw std::runtime_error("load_batch: empty index list");
  Batch<T> b;
  int n = static_cast<int>(indices.size());
  for (int i = 0; i < n; ++i) {
    int idx = indices[static_cast<size_t>(i)];
    if (idx < 0 || idx >= static_cast<int>(m.entries.size()))
      throw std::runtime_error("load_batch: index out of range");
    const auto& e = m.entries[static_cast<size_t>(idx)];
    auto hr_path = m.resolve(e.hr);
    if (!fs::exists(hr_path))
      throw std::runtime_error("load_batch: missing file for id '" + e.id + "': " +
                               hr_path.string());
    auto hr = read_png<T>(hr_path.string());
    auto lr = read_png<T>(m.resolve(e.lr).string());
    auto lr_up = read_png<T>(m.resolve(e.lr_up).string());
    if (i == 0) {
      b.hr = Tensor<T>({n, hr.dim(0), hr.dim(1), hr.dim(2)});
      b.lr = Tensor<T>({n, lr.dim(0), lr.dim(1), lr.dim(2)});
      b.lr_up = Tensor<T>({n, lr_up.dim(0), lr_up.dim(1), lr_up.dim(2)});
    }
    std::copy(hr.data(), hr.data() + hr.numel(), b.hr.data() + int64_t(i) * hr.numel());
    std::copy(lr.data(), lr.data() + lr.numel(), b.lr.data() + int64_t(i) * lr.numel());
    std::copy(lr_up.data(), lr_up.data() + lr_up.numel(),
              b.lr_up.data() + int64_t(i) * lr_up.numel());

    if (detail::fnv1a(e.id) % 100 == 0) {
      auto hr_d = read_png<double>(hr_path.string());
      auto expect = quantize_unit(bicubic_resize(hr_d, lr.dim(1), lr.dim(2)));
      auto lr_d = read_png<double>(m.resolve(e.lr).string());
      for (int64_t k = 0; k < expect.numel(); ++k)
        if (expect[k] != lr_d[k])
          throw std::runtime_error("load_batch: derivation invariant violated for id '" + e.id +
                                   "'");
    }
    b.ids.push_back(e.id);
  }
  return b;
}

}  // namespace ctcsr
