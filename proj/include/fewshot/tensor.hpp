/*
 * Copyright 2026 The fewshot Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "fewshot/error.hpp"

namespace fewshot {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

enum class DType { f32, f64 };

template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>,
                "Tensor scalars are float or double");
  return std::is_same_v<Scalar, float> ? DType::f32 : DType::f64;
}

inline const char* dtype_name(DType t) { return t == DType::f32 ? "f32" : "f64"; }

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Row-major strides in elements.
inline Shape shape_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (Index i = static_cast<Index>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

// Trailing-axis aligned broadcast of two shapes. A missing or size-1 axis stretches.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const Index eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Strides of `operand` viewed inside `out`, zero on stretched axes.
inline Shape broadcast_strides(const Shape& operand, const Shape& out) {
  const Shape own = shape_strides(operand);
  Shape strides(out.size(), 0);
  const std::size_t offset = out.size() - operand.size();
  for (std::size_t i = 0; i < operand.size(); ++i)
    strides[offset + i] = operand[i] == 1 ? 0 : own[i];
  return strides;
}

// Calls f(out_flat, a_flat, b_flat) for every element of the broadcast shape.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const Index n = shape_numel(out);
  const Index na = shape_numel(a);
  const Index nb = shape_numel(b);
  if (a == b) {
    for (Index i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const auto is_suffix = [](const Shape& small, const Shape& big) {
    return small.size() <= big.size() &&
           std::equal(small.rbegin(), small.rend(), big.rbegin());
  };
  if (na == n && is_suffix(b, a)) {
    for (Index i = 0; i < n; ++i) f(i, i, i % nb);
    return;
  }
  if (nb == n && is_suffix(a, b)) {
    for (Index i = 0; i < n; ++i) f(i, i % na, i);
    return;
  }
  const Shape sa = broadcast_strides(a, out);
  const Shape sb = broadcast_strides(b, out);
  const std::size_t rank = out.size();
  Shape counter(rank, 0);
  Index ia = 0;
  Index ib = 0;
  for (Index i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (Index axis = static_cast<Index>(rank) - 1; axis >= 0; --axis) {
      if (++counter[axis] < out[axis]) {
        ia += sa[axis];
        ib += sb[axis];
        break;
      }
      ia -= sa[axis] * (out[axis] - 1);
      ib -= sb[axis] * (out[axis] - 1);
      counter[axis] = 0;
    }
  }
}

/// Dense row-major array of float or double.
///
/// A default-constructed tensor is undefined (no storage). A tensor of shape
/// {} is a scalar holding one element. Extents are always positive.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  static constexpr DType kDType = dtype_of<Scalar>();

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_ = Vector::Constant(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
    validate_shape();
    if (static_cast<Index>(values.size()) != shape_numel(shape_))
      throw ShapeMismatch(std::to_string(values.size()) + " values for shape " +
                          shape_str(shape_));
    data_ = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  }

  Tensor(Shape shape, Vector values) : shape_(std::move(shape)), data_(std::move(values)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_))
      throw ShapeMismatch(std::to_string(data_.size()) + " values for shape " +
                          shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, Scalar(0)); }

  bool defined() const { return data_.size() > 0; }
  const Shape& shape() const { return shape_; }
  Index dim() const { return static_cast<Index>(shape_.size()); }
  Index numel() const { return data_.size(); }

  Index size(Index axis) const {
    if (axis < 0) axis += dim();
    if (axis < 0 || axis >= dim())
      throw AxisOutOfRange("axis " + std::to_string(axis) + " for shape " + shape_str(shape_));
    return shape_[axis];
  }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> span() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Vector& flat() { return data_; }
  const Vector& flat() const { return data_; }

  // View as (rows, cols) with rows = numel / cols.
  MatrixMap matrix(Index cols) { return MatrixMap(data_.data(), numel() / cols, cols); }
  ConstMatrixMap matrix(Index cols) const {
    return ConstMatrixMap(data_.data(), numel() / cols, cols);
  }
  // View with the last axis as columns.
  MatrixMap matrix() { return matrix(dim() == 0 ? 1 : shape_.back()); }
  ConstMatrixMap matrix() const { return matrix(dim() == 0 ? 1 : shape_.back()); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  Scalar item() const {
    if (numel() != 1) throw NotScalar("item() on shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw ShapeMismatch("reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, typename Tensor<Other>::Vector(data_.template cast<Other>()));
  }

  bool all_finite() const { return data_.allFinite(); }

  // Value equality including shape; exact to the bit for finite values.
  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_.size() == other.data_.size() &&
           (data_.size() == 0 ||
            std::memcmp(data_.data(), other.data_.data(), sizeof(Scalar) * data_.size()) == 0);
  }

 private:
  void validate_shape() const {
    for (Index e : shape_)
      if (e <= 0) throw ShapeMismatch("non-positive extent in " + shape_str(shape_));
  }

  Index offset(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != dim())
      throw AxisOutOfRange(std::to_string(idx.size()) + " indices for shape " +
                           shape_str(shape_));
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[axis])
        throw IndexOutOfRange("index " + std::to_string(i) + " on axis " + std::to_string(axis));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  Vector data_;
};

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.numel() == 0) return Scalar(0);
  return (a.flat() - b.flat()).cwiseAbs().maxCoeff();
}

}  // namespace fewshot
