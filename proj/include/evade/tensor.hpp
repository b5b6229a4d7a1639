#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evade/rng.hpp"

namespace evade {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("non-positive dim in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Dense row-major N-dimensional array. Arithmetic requires exact shape
// agreement; mismatches throw instead of broadcasting silently.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw std::invalid_argument("data length does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
  static Tensor randn(Shape s, Rng& rng, T scale = T(1)) {
    Tensor t(std::move(s));
    for (auto& x : t.data_) x = static_cast<T>(rng.normal()) * scale;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Index helpers for the common layouts.
  T& at3(int c, int i, int j) { return data_[(static_cast<std::size_t>(c) * dim(1) + i) * dim(2) + j]; }
  const T& at3(int c, int i, int j) const {
    return data_[(static_cast<std::size_t>(c) * dim(1) + i) * dim(2) + j];
  }
  T& at4(int n, int c, int i, int j) {
    return data_[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + i) * dim(3) + j];
  }
  const T& at4(int n, int c, int i, int j) const {
    return data_[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + i) * dim(3) + j];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  void check_same_shape(const Tensor& o, const char* op) const {
    if (shape_ != o.shape_)
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(shape_) +
                                  " vs " + shape_str(o.shape_));
  }

  Tensor& operator+=(const Tensor& o) {
    check_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& x : data_) x *= s;
    return *this;
  }
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }

  Tensor hadamard(const Tensor& o) const {
    check_same_shape(o, "hadamard");
    Tensor r(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) r.data_[i] = data_[i] * o.data_[i];
    return r;
  }

  T sum() const {
    T s = 0;
    for (T x : data_) s += x;
    return s;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(d));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.check_same_shape(b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// max_i |a_i - b_i| / max(1, |b_i|)
template <typename T>
T max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.check_same_shape(b, "max_rel_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]) / std::max(T(1), std::abs(b[i])));
  return m;
}

}  // namespace evade
