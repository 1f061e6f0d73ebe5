// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <vector>

namespace ctcsr {

// Dense row-major tensor. Image batches use NCHW order.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    assert(static_cast<size_t>(count(shape_)) == data_.size());
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }

  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 4-d accessor, valid when rank()==4.
  T& at(int n, int c, int h, int w) {
    return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(int n, int c, int h, int w) const {
    return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void zero() { std::fill(data_.begin(), data_.end(), T(0)); }

  void release() {
    shape_.clear();
    data_.clear();
    data_.shrink_to_fit();
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (size_t i = 0; i < data_.size(); ++i) out[static_cast<int64_t>(i)] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

inline bool shape_eq(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

}  // namespace ctcsr
