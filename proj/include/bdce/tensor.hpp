#pragma once

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bdce/error.hpp"

namespace bdce {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Rank-3 tensors are read as planar C x H x W.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape dims, T fill = T(0)) : dims_(std::move(dims)) {
    for (auto d : dims_) require(d > 0, "tensor dims must be positive, got " + shape_str(dims_));
    data_.assign(shape_size(dims_), fill);
  }

  Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    for (auto d : dims_) require(d > 0, "tensor dims must be positive, got " + shape_str(dims_));
    require(shape_size(dims_) == data_.size(),
            "tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                shape_str(dims_));
  }

  static Tensor chw(std::size_t c, std::size_t h, std::size_t w, T fill = T(0)) {
    return Tensor({c, h, w}, fill);
  }

  const Shape& dims() const { return dims_; }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() & { return data_; }
  std::span<const T> data() const& { return data_; }
  // owning copy so `for (v : make().data())` stays valid
  std::vector<T> data() && { return std::move(data_); }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Planar accessors; only meaningful on rank-3 tensors.
  std::size_t channels() const { return dims_.at(0); }
  std::size_t height() const { return dims_.at(1); }
  std::size_t width() const { return dims_.at(2); }
  std::size_t plane() const { return dims_.at(1) * dims_.at(2); }

  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }

  std::span<T> channel(std::size_t c) { return std::span<T>(data_).subspan(c * plane(), plane()); }
  std::span<const T> channel(std::size_t c) const {
    return std::span<const T>(data_).subspan(c * plane(), plane());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(dims_, std::move(out));
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Shape dims_;
  std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  require(a.dims() == b.dims(), std::string(what) + ": shape mismatch " + shape_str(a.dims()) +
                                    " vs " + shape_str(b.dims()));
}

template <typename T>
void require_chw(const Tensor<T>& t, const char* what) {
  require(t.rank() == 3, std::string(what) + ": expected a C x H x W tensor, got " +
                             shape_str(t.dims()));
}

// Elementwise helpers used throughout the pipeline.

template <typename T>
Tensor<T>& operator+=(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "tensor +=");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

template <typename T>
Tensor<T>& operator-=(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "tensor -=");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  a -= b;
  return a;
}

template <typename T>
Tensor<T>& operator*=(Tensor<T>& a, T s) {
  for (auto& v : a.data()) v *= s;
  return a;
}

template <typename T>
Tensor<T> operator*(Tensor<T> a, T s) {
  a *= s;
  return a;
}

namespace detail {

// Fingerprint of the branch taken at each non-smooth point (relu, clamp, max)
// while active. Finite-difference checks use it to spot steps that straddle a kink.
struct BranchTrace {
  bool active = false;
  std::uint64_t hash = 0xcbf29ce484222325ULL;
};

inline BranchTrace& branch_trace() {
  thread_local BranchTrace t;
  return t;
}

inline void note_branch(std::uint64_t b) {
  auto& t = branch_trace();
  t.hash = (t.hash ^ b) * 0x100000001b3ULL;
}

}  // namespace detail

template <typename T>
Tensor<T> clamp(Tensor<T> a, T lo, T hi) {
  const bool trace = detail::branch_trace().active;
  for (auto& v : a.data()) {
    if (trace) detail::note_branch(v < lo ? 1 : v > hi ? 2 : 0);
    v = std::clamp(v, lo, hi);
  }
  return a;
}

template <typename T>
double mean(const Tensor<T>& a) {
  double s = 0.0;
  for (auto v : a.data()) s += static_cast<double>(v);
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

/// Channel concatenation of rank-3 tensors with equal spatial size.
template <typename T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts) {
  std::size_t c = 0, h = 0, w = 0;
  for (const auto* p : parts) {
    require_chw(*p, "concat_channels");
    if (c == 0) {
      h = p->height();
      w = p->width();
    }
    require(p->height() == h && p->width() == w, "concat_channels: spatial size mismatch");
    c += p->channels();
  }
  Tensor<T> out = Tensor<T>::chw(c, h, w);
  auto it = out.vec().begin();
  for (const auto* p : parts) it = std::copy(p->vec().begin(), p->vec().end(), it);
  return out;
}

/// Inverse of concat_channels: the channel slice [begin, begin + count).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  require_chw(t, "slice_channels");
  require(begin + count <= t.channels() && count > 0, "slice_channels: range out of bounds");
  Tensor<T> out = Tensor<T>::chw(count, t.height(), t.width());
  auto first = t.vec().begin() + static_cast<std::ptrdiff_t>(begin * t.plane());
  std::copy(first, first + static_cast<std::ptrdiff_t>(count * t.plane()), out.vec().begin());
  return out;
}

}  // namespace bdce
