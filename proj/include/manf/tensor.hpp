#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace manf {

/// Extents of a 4-D activation in (batch, channels, height, width) order.
struct Shape {
  std::array<std::size_t, 4> dims{0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(std::size_t n, std::size_t c, std::size_t h, std::size_t w) : dims{n, c, h, w} {}

  constexpr std::size_t n() const { return dims[0]; }
  constexpr std::size_t c() const { return dims[1]; }
  constexpr std::size_t h() const { return dims[2]; }
  constexpr std::size_t w() const { return dims[3]; }
  constexpr std::size_t plane() const { return dims[2] * dims[3]; }
  constexpr std::size_t size() const { return dims[0] * dims[1] * dims[2] * dims[3]; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << dims[0] << ',' << dims[1] << ',' << dims[2] << ',' << dims[3] << ')';
    return os.str();
  }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

/// Dense NCHW tensor with row-major storage.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require_shape(data_.size() == shape_.size(), "tensor data length does not match shape " + shape_.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, T v) { return Tensor(s, v); }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c() + c) * shape_.h() + y) * shape_.w() + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[index(n, c, y, x)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  /// Pointer to the (n, c) plane.
  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c() + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c() + c) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& o) {
    require_shape(o.shape_ == shape_, "tensor += shape mismatch " + shape_.str() + " vs " + o.shape_.str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <std::floating_point T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(), "max_abs_diff shape mismatch");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <std::floating_point T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (T v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

/// Sum with a fixed left-to-right order.
template <std::floating_point T>
double sum(const Tensor<T>& t) {
  double s = 0;
  for (T v : t.data()) s += v;
  return s;
}

template <std::floating_point T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(), "dot shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

}  // namespace manf
