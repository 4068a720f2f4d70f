#pragma once

// Minimal dense row-major n-dimensional array. This is deliberately small:
// the basis execution engine only needs contiguous storage, shapes and
// strides, not a full tensor algebra.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "unf/errors.hpp"

namespace unf {

inline std::vector<std::int64_t> row_major_strides(std::span<const std::int64_t> shape) {
  std::vector<std::int64_t> strides(shape.size());
  std::int64_t s = 1;
  for (std::size_t i = shape.size(); i > 0; --i) {
    strides[i - 1] = s;
    s *= shape[i - 1];
  }
  return strides;
}

inline bool shape_equal(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

inline std::int64_t shape_size(std::span<const std::int64_t> shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_to_string(std::span<const std::int64_t> shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

template <class T>
class NdArray {
 public:
  NdArray() = default;

  explicit NdArray(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)) {
    for (auto d : shape_) {
      if (d < 0) throw ShapeError("NdArray: negative extent in " + shape_to_string(shape_));
    }
    data_.assign(static_cast<std::size_t>(shape_size(shape_)), T{0});
  }

  NdArray(std::vector<std::int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_)) {
      throw ShapeError("NdArray: data size does not match shape " + shape_to_string(shape_));
    }
  }

  std::span<const std::int64_t> shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  std::vector<std::int64_t> strides() const { return row_major_strides(shape_); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::int64_t flat) { return data_[static_cast<std::size_t>(flat)]; }
  const T& operator[](std::int64_t flat) const { return data_[static_cast<std::size_t>(flat)]; }

  T& at(std::span<const std::int64_t> idx) { return data_[static_cast<std::size_t>(flat_index(idx))]; }
  const T& at(std::span<const std::int64_t> idx) const {
    return data_[static_cast<std::size_t>(flat_index(idx))];
  }
  T& at(std::initializer_list<std::int64_t> idx) { return at(std::span<const std::int64_t>(idx)); }
  const T& at(std::initializer_list<std::int64_t> idx) const {
    return at(std::span<const std::int64_t>(idx));
  }

  std::int64_t flat_index(std::span<const std::int64_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("NdArray: index rank mismatch");
    std::int64_t flat = 0, stride = 1;
    for (std::size_t i = shape_.size(); i > 0; --i) {
      flat += idx[i - 1] * stride;
      stride *= shape_[i - 1];
    }
    return flat;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const NdArray& other) const { return shape_ == other.shape_; }

  friend bool operator==(const NdArray& a, const NdArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

// y += a * x, elementwise over equally shaped arrays.
template <class T>
void axpy(T a, const NdArray<T>& x, NdArray<T>& y) {
  if (!x.same_shape(y)) throw ShapeError("axpy: shape mismatch");
  const T* xs = x.data();
  T* ys = y.data();
  for (std::int64_t i = 0, n = x.size(); i < n; ++i) ys[i] += a * xs[i];
}

template <class T>
T dot(const NdArray<T>& a, const NdArray<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("dot: shape mismatch");
  T acc{0};
  const T* as = a.data();
  const T* bs = b.data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) acc += as[i] * bs[i];
  return acc;
}

}  // namespace unf
