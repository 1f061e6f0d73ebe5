// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace ctcsr {

// Deterministic RNG. Draw helpers are hand-rolled so sequences do not depend
// on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= lim);
    return v % n;
  }

  // Box-Muller, one value per call (the pair partner is cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename IntT>
  void permutation(std::vector<IntT>& idx, size_t n) {
    idx.resize(n);
    for (size_t i = 0; i < n; ++i) idx[i] = static_cast<IntT>(i);
    for (size_t i = n; i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(idx[i - 1], idx[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_ << ' ' << (have_spare_ ? 1 : 0) << ' ';
    os.precision(17);
    os << spare_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    int flag = 0;
    is >> eng_ >> flag >> spare_;
    have_spare_ = flag != 0;
  }

  // Stable stream split: mixes tag into seed without consuming engine state.
  static uint64_t mix(uint64_t seed, uint64_t tag) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ctcsr
