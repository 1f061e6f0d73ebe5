// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <filesystem>

#include "ctcsr/nn/losses.hpp"

namespace ctcsr {

// Learned-feature metrics are adapters over a feature-extractor artifact: when
// no artifact is configured (or the file is missing) the metric reports itself
// unavailable instead of fabricating a number.
struct AdapterValue {
  double value = 0.0;
  bool available = false;
  std::string note;
};

namespace detail {

template <typename T>
Var<T> as_batch(const Tensor<T>& img) {
  Tensor<T> t({1, img.dim(0), img.dim(1), img.dim(2)}, img.vec());
  return make_var(std::move(t), false);
}

// Resolve a spec for metric use; failures become "unavailable", not errors.
template <typename T>
bool try_resolve_extractor(const std::string& spec, FeatureExtractor<T>& out, std::string& note) {
  if (spec.empty()) {
    note = "no feature extractor configured";
    return false;
  }
  if (spec == "identity") {
    out = FeatureExtractor<T>::identity();
    return true;
  }
  if (spec.rfind("random:", 0) == 0) {
    out = FeatureExtractor<T>::random_stack(std::stoull(spec.substr(7)));
    return true;
  }
  if (!std::filesystem::exists(spec)) {
    note = "feature extractor artifact not found: " + spec;
    return false;
  }
  out = FeatureExtractor<T>::load(spec);
  return true;
}

}  // namespace detail

// Perceptual distance: per tap, unit-normalize the channel vector at every
// spatial position, then average the squared difference over positions and
// channels; taps are summed. Zero for identical inputs.
template <typename T>
double lpips_distance(const FeatureExtractor<T>& fx, const Tensor<T>& a, const Tensor<T>& b) {
  auto fa = fx.features(detail::as_batch(a));
  auto fb = fx.features(detail::as_batch(b));
  double total = 0.0;
  for (size_t t = 0; t < fa.size(); ++t) {
    const Tensor<T>& x = fa[t]->value;
    const Tensor<T>& y = fb[t]->value;
    int c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int64_t plane = int64_t(h) * w;
    double acc = 0.0;
    for (int64_t p = 0; p < plane; ++p) {
      double nx = 0.0, ny = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        double vx = x[ch * plane + p], vy = y[ch * plane + p];
        nx += vx * vx;
        ny += vy * vy;
      }
      nx = std::sqrt(nx) + 1e-10;
      ny = std::sqrt(ny) + 1e-10;
      for (int ch = 0; ch < c; ++ch) {
        double d = x[ch * plane + p] / nx - y[ch * plane + p] / ny;
        acc += d * d;
      }
    }
    total += acc / static_cast<double>(plane);
  }
  return total;
}

inline AdapterValue lpips_adapter(const std::string& spec, const Tensor<float>& a,
                                  const Tensor<float>& b) {
  FeatureExtractor<float> fx;
  std::string note;
  if (!detail::try_resolve_extractor(spec, fx, note)) return {0.0, false, note};
  return {lpips_distance(fx, a, b), true, ""};
}

// Global-average-pooled tap activations concatenated into one embedding.
template <typename T>
std::vector<double> feature_embedding(const FeatureExtractor<T>& fx, const Tensor<T>& img) {
  auto taps = fx.features(detail::as_batch(img));
  std::vector<double> e;
  for (const auto& t : taps) {
    int c = t->value.dim(1);
    int64_t plane = int64_t(t->value.dim(2)) * t->value.dim(3);
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int64_t p = 0; p < plane; ++p) acc += t->value[ch * plane + p];
      e.push_back(acc / static_cast<double>(plane));
    }
  }
  return e;
}

// Frechet distance between two Gaussians:
// |mu1-mu2|^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2).
inline double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1,
                               const Eigen::VectorXd& mu2, const Eigen::MatrixXd& s2) {
  auto psd_sqrt = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };
  Eigen::MatrixXd rt2 = psd_sqrt(s2);
  Eigen::MatrixXd inner = psd_sqrt(rt2 * s1 * rt2);
  double d2 = (mu1 - mu2).squaredNorm();
  return d2 + s1.trace() + s2.trace() - 2.0 * inner.trace();
}

namespace detail {

inline bool dir_moments(const FeatureExtractor<float>& fx, const std::filesystem::path& dir,
                        Eigen::VectorXd& mu, Eigen::MatrixXd& cov, std::string& note) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::exists(dir)) {
    note = "no such directory: " + dir.string();
    return false;
  }
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    note = "no images in " + dir.string();
    return false;
  }
  std::vector<std::vector<double>> embs;
  for (const auto& f : files)
    embs.push_back(feature_embedding(fx, read_png<float>(f.string())));
  int d = static_cast<int>(embs[0].size());
  int n = static_cast<int>(embs.size());
  mu = Eigen::VectorXd::Zero(d);
  for (const auto& e : embs) mu += Eigen::Map<const Eigen::VectorXd>(e.data(), d);
  mu /= n;
  cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : embs) {
    Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(e.data(), d) - mu;
    cov += c * c.transpose();
  }
  cov /= n;
  return true;
}

}  // namespace detail

// Distribution distance between the PNG sets in two directories, computed on
// feature embeddings. Identical directories give (numerically) zero.
inline AdapterValue fid_adapter(const std::string& spec, const std::filesystem::path& dir_a,
                                const std::filesystem::path& dir_b) {
  FeatureExtractor<float> fx;
  std::string note;
  if (!detail::try_resolve_extractor(spec, fx, note)) return {0.0, false, note};
  Eigen::VectorXd mu1, mu2;
  Eigen::MatrixXd s1, s2;
  if (!detail::dir_moments(fx, dir_a, mu1, s1, note)) return {0.0, false, note};
  if (!detail::dir_moments(fx, dir_b, mu2, s2, note)) return {0.0, false, note};
  if (mu1.size() != mu2.size()) return {0.0, false, "embedding dimensions differ"};
  return {frechet_distance(mu1, s1, mu2, s2), true, ""};
}

}  // namespace ctcsr
