// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ctcsr/autograd/variable.hpp"
#include "ctcsr/core/tensor.hpp"
#include "json.hpp"

namespace ctcsr {

// Single-file container: magic, format version, a JSON metadata blob, and an
// ordered set of named raw arrays. Round-trips are bit-exact.
class Checkpoint {
 public:
  static constexpr uint32_t kVersion = 1;

  struct Blob {
    char dtype = 'f';  // 'f' float32, 'd' float64
    std::vector<int> shape;
    std::vector<unsigned char> bytes;
  };

  nlohmann::json meta;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    Blob b;
    b.dtype = sizeof(T) == 4 ? 'f' : 'd';
    b.shape = t.shape();
    b.bytes.resize(static_cast<size_t>(t.numel()) * sizeof(T));
    std::memcpy(b.bytes.data(), t.data(), b.bytes.size());
    auto it = index_.find(name);
    if (it != index_.end()) {
      arrays_[it->second].second = std::move(b);
    } else {
      index_[name] = arrays_.size();
      arrays_.emplace_back(name, std::move(b));
    }
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("checkpoint: missing array " + name);
    const Blob& b = arrays_[it->second].second;
    char want = sizeof(T) == 4 ? 'f' : 'd';
    if (b.dtype != want) throw std::runtime_error("checkpoint: dtype mismatch for " + name);
    Tensor<T> t(b.shape);
    std::memcpy(t.data(), b.bytes.data(), b.bytes.size());
    return t;
  }

  const std::vector<std::pair<std::string, Blob>>& arrays() const { return arrays_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    f.write("CTCKPT", 6);
    write_u32(f, kVersion);
    std::string mj = meta.dump();
    write_u64(f, mj.size());
    f.write(mj.data(), static_cast<std::streamsize>(mj.size()));
    write_u32(f, static_cast<uint32_t>(arrays_.size()));
    for (const auto& [name, b] : arrays_) {
      write_u32(f, static_cast<uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(b.dtype);
      write_u32(f, static_cast<uint32_t>(b.shape.size()));
      for (int d : b.shape) write_u32(f, static_cast<uint32_t>(d));
      write_u64(f, b.bytes.size());
      f.write(reinterpret_cast<const char*>(b.bytes.data()),
              static_cast<std::streamsize>(b.bytes.size()));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, "CTCKPT", 6) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = read_u32(f);
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported format version");
    Checkpoint c;
    uint64_t mlen = read_u64(f);
    std::string mj(mlen, '\0');
    f.read(mj.data(), static_cast<std::streamsize>(mlen));
    c.meta = nlohmann::json::parse(mj);
    uint32_t n = read_u32(f);
    for (uint32_t i = 0; i < n; ++i) {
      uint32_t nl = read_u32(f);
      std::string name(nl, '\0');
      f.read(name.data(), nl);
      Blob b;
      b.dtype = static_cast<char>(f.get());
      uint32_t rank = read_u32(f);
      b.shape.resize(rank);
      for (uint32_t r = 0; r < rank; ++r) b.shape[r] = static_cast<int>(read_u32(f));
      uint64_t len = read_u64(f);
      b.bytes.resize(len);
      f.read(reinterpret_cast<char*>(b.bytes.data()), static_cast<std::streamsize>(len));
      if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
      c.index_[name] = c.arrays_.size();
      c.arrays_.emplace_back(std::move(name), std::move(b));
    }
    return c;
  }

 private:
  std::vector<std::pair<std::string, Blob>> arrays_;
  std::map<std::string, size_t> index_;

  static void write_u32(std::ostream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ostream& f, uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  static uint32_t read_u32(std::istream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static uint64_t read_u64(std::istream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }
};

// Stores every parameter reachable from the walker under its visit name.
template <typename T, typename Net>
void checkpoint_put_params(Checkpoint& c, const Net& net, const std::string& prefix = "") {
  net.visit([&](const std::string& name, const Var<T>& v) { c.put(prefix + name, v->value); });
}

// Loads parameters back; every parameter must be present with matching shape.
template <typename T, typename Net>
void checkpoint_get_params(const Checkpoint& c, Net& net, const std::string& prefix = "") {
  net.visit([&](const std::string& name, const Var<T>& v) {
    Tensor<T> t = c.get<T>(prefix + name);
    if (!t.same_shape(v->value))
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    v->value = std::move(t);
  });
}

}  // namespace ctcsr
