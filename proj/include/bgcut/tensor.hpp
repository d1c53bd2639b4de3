#pragma once

// Dense row-major N-d tensor. Activations use NCHW layout. Buffers are
// shared on copy; everything treats a tensor as immutable once it has been
// handed to another owner, so sharing never needs copy-on-write.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "bgcut/error.hpp"

namespace bgcut {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    require(d > 0, Errc::invalid_argument, "tensor extents must be positive");
    n *= d;
  }
  return n;
}

template <class T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)),
        size_(shape_numel(shape_)),
        buf_(std::make_shared<std::vector<T>>(size_, T(0))) {}

  static TensorT full(Shape shape, T v) {
    TensorT t(std::move(shape));
    std::fill(t.buf_->begin(), t.buf_->end(), v);
    return t;
  }

  static TensorT from_data(Shape shape, std::vector<T> data) {
    TensorT t;
    t.shape_ = std::move(shape);
    t.size_ = shape_numel(t.shape_);
    require(static_cast<std::int64_t>(data.size()) == t.size_, Errc::shape_mismatch,
            "data length does not match shape");
    t.buf_ = std::make_shared<std::vector<T>>(std::move(data));
    return t;
  }

  static TensorT zeros_like(const TensorT& o) { return TensorT(o.shape_); }

  bool defined() const { return buf_ != nullptr; }
  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const { return size_; }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }

  T& operator[](std::int64_t i) { return (*buf_)[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return (*buf_)[static_cast<std::size_t>(i)]; }

  // NCHW accessors for the common rank-4 case.
  T& at(int n, int c, int h, int w) {
    return (*buf_)[offset(n, c, h, w)];
  }
  const T& at(int n, int c, int h, int w) const {
    return (*buf_)[offset(n, c, h, w)];
  }

  std::size_t offset(int n, int c, int h, int w) const {
    return static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
  }

  TensorT clone() const {
    TensorT t;
    t.shape_ = shape_;
    t.size_ = size_;
    t.buf_ = std::make_shared<std::vector<T>>(*buf_);
    return t;
  }

  // Same buffer under a new shape of equal element count.
  TensorT reshaped(Shape shape) const {
    TensorT t;
    t.size_ = shape_numel(shape);
    require(t.size_ == size_, Errc::shape_mismatch, "reshape changes element count");
    t.shape_ = std::move(shape);
    t.buf_ = buf_;
    return t;
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (std::int64_t i = 0; i < size_; ++i) {
      if (!std::isfinite(static_cast<double>((*buf_)[static_cast<std::size_t>(i)]))) return false;
    }
    return true;
  }

  template <class U>
  TensorT<U> cast() const {
    std::vector<U> d(static_cast<std::size_t>(size_));
    for (std::int64_t i = 0; i < size_; ++i) d[static_cast<std::size_t>(i)] = static_cast<U>((*buf_)[static_cast<std::size_t>(i)]);
    return TensorT<U>::from_data(shape_, std::move(d));
  }

 private:
  Shape shape_;
  std::int64_t size_ = 0;
  std::shared_ptr<std::vector<T>> buf_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <class T>
void fill_value(TensorT<T>& t, T v) {
  std::fill(t.data(), t.data() + t.size(), v);
}

// y += alpha * x
template <class T>
void axpy(T alpha, const TensorT<T>& x, TensorT<T>& y) {
  require(x.same_shape(y), Errc::shape_mismatch, "axpy shape mismatch");
  const T* xs = x.data();
  T* ys = y.data();
  for (std::int64_t i = 0; i < x.size(); ++i) ys[i] += alpha * xs[i];
}

template <class T>
void scale_inplace(TensorT<T>& t, T alpha) {
  T* p = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) p[i] *= alpha;
}

template <class T>
T max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  require(a.same_shape(b), Errc::shape_mismatch, "max_abs_diff shape mismatch");
  T m = T(0);
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<std::size_t>(a.size())) == 0;
}

using Rng = std::mt19937_64;

template <class T>
void fill_normal(TensorT<T>& t, double mean, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(mean, stddev);
  T* p = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) p[i] = static_cast<T>(dist(rng));
}

template <class T>
void fill_uniform(TensorT<T>& t, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  T* p = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) p[i] = static_cast<T>(dist(rng));
}

}  // namespace bgcut
