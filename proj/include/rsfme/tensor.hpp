/*
 * Copyright (c) 2026, The rsfme Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rsfme/errors.hpp"

namespace rsfme {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense n-dimensional array, row-major, backed by an Eigen vector.
///
/// A default-constructed tensor is the rank-0 scalar 0. Every extent of a
/// non-scalar tensor is positive.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() : data_(Vector::Zero(1)) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Vector::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = Vector::Constant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != data_.size()) {
      throw ShapeError("tensor literal has " + std::to_string(values.size()) +
                       " values for shape " + shape_string(shape_));
    }
    std::copy(values.begin(), values.end(), data_.data());
  }

  Tensor(Shape shape, Vector values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                       " values for shape " + shape_string(shape_));
    }
  }

  static Tensor from(Shape shape, std::span<const Scalar> values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.size()) {
      throw ShapeError("tensor data size mismatch for shape " + shape_string(t.shape_));
    }
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor scalar(Scalar value) {
    Tensor t;
    t.data_[0] = value;
    return t;
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, Scalar(0)); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const {
    if (axis < 0) axis += rank();
    return shape_.at(static_cast<std::size_t>(axis));
  }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  template <typename... Idx>
  Scalar& operator()(Idx... idx) {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  Scalar operator()(Idx... idx) const {
    return data_[offset(idx...)];
  }

  /// Row-major matrix view; rank-2 tensors only unless rows/cols are given.
  MatrixMap matrix() { return MatrixMap(data(), dim(0), size() / dim(0)); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data(), dim(0), size() / dim(0)); }
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }

  void reshape(Shape shape) {
    check_shape(shape);
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (Index extent : shape) {
      if (extent < 1) throw ShapeError("non-positive extent in shape " + shape_string(shape));
    }
  }

  void check_view(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " does not cover " + shape_string(shape_));
    }
  }

  template <typename... Idx>
  Index offset(Idx... idx) const {
    const Index indices[] = {static_cast<Index>(idx)...};
    Index flat = 0;
    for (std::size_t i = 0; i < sizeof...(Idx); ++i) flat = flat * shape_[i] + indices[i];
    return flat;
  }

  Shape shape_;
  Vector data_;
};

/// Shape [N, C, H, W] helpers.
struct Nchw {
  Index n, c, h, w;
};

template <typename Scalar>
Nchw nchw(const Tensor<Scalar>& t) {
  if (t.rank() != 4) throw ShapeError("expected NCHW tensor, got " + shape_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

}  // namespace rsfme
