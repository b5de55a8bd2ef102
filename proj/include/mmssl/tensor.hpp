#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmssl/errors.hpp"

namespace mmssl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array with an explicit shape.
///
/// Storage is always a 2-D Eigen matrix: a scalar is 1x1, a vector of n is
/// 1xn, a matrix keeps its extents, and higher ranks fold every trailing axis
/// into the column count. Flat (row-major) order is therefore identical for
/// every rank, which is what reshape relies on.
template <typename Scalar>
class BasicTensor {
 public:
  using Matrix = MatrixX<Scalar>;

  BasicTensor() : data_(Matrix::Zero(1, 1)) {}

  BasicTensor(Shape shape, Matrix data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (Index e : shape_) {
      if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
    }
    const auto [r, c] = storage_extents(shape_);
    if (data_.rows() != r || data_.cols() != c) {
      throw DimensionError("tensor storage " + std::to_string(data_.rows()) + "x" +
                           std::to_string(data_.cols()) + " does not match shape " +
                           shape_string(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) {
    const auto [r, c] = storage_extents(shape);
    return BasicTensor(std::move(shape), Matrix::Zero(r, c));
  }

  static BasicTensor scalar(Scalar v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return BasicTensor({}, std::move(m));
  }

  static BasicTensor vector(std::span<const Scalar> values) {
    Matrix m(1, static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Index>(i)) = values[i];
    return BasicTensor({static_cast<Index>(values.size())}, std::move(m));
  }

  static BasicTensor vector(std::initializer_list<Scalar> values) {
    return vector(std::span<const Scalar>(values.begin(), values.size()));
  }

  static BasicTensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    Matrix m(r, c);
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) throw DimensionError("ragged matrix literal");
      Index j = 0;
      for (Scalar v : row) m(i, j++) = v;
      ++i;
    }
    return BasicTensor({r, c}, std::move(m));
  }

  static BasicTensor from_matrix(Matrix m) {
    Shape s{m.rows(), m.cols()};
    return BasicTensor(std::move(s), std::move(m));
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index size() const noexcept { return data_.size(); }
  Index rows() const noexcept { return data_.rows(); }
  Index cols() const noexcept { return data_.cols(); }

  const Matrix& matrix() const noexcept { return data_; }
  Matrix& matrix() noexcept { return data_; }

  std::span<const Scalar> data() const noexcept {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }
  std::span<Scalar> data() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Scalar operator[](Index flat) const { return data_.data()[flat]; }
  Scalar operator()(Index r, Index c) const { return data_(r, c); }

  Scalar item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return data_(0, 0);
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    const auto [r, c] = storage_extents(shape);
    Matrix m = Eigen::Map<const Matrix>(data_.data(), r, c);
    return BasicTensor(std::move(shape), std::move(m));
  }

  bool all_finite() const { return data_.allFinite(); }

  /// Bitwise equality of shape and values.
  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::pair<Index, Index> storage_extents(const Shape& shape) {
    switch (shape.size()) {
      case 0:
        return {1, 1};
      case 1:
        return {1, shape[0]};
      default: {
        Index c = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return {shape[0], c};
      }
    }
  }

 private:
  Shape shape_;
  Matrix data_;
};

using Tensor = BasicTensor<double>;
using Matrix = MatrixX<double>;

}  // namespace mmssl
