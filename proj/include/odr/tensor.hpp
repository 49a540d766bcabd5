#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "odr/errors.hpp"

namespace odr {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<MatrixR<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const MatrixR<Scalar>>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

// Dense row-major n-dimensional array. Values are always finite: the
// constructors and check_finite() reject NaN/Inf.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_ = Vector<Scalar>::Constant(shape_size(shape_), fill);
    if (!std::isfinite(static_cast<double>(fill))) throw NumericError("tensor fill value is not finite");
  }

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_size(shape_) != data_.size()) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
    }
    check_finite("tensor construction");
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Vector<Scalar>(Eigen::Map<const Vector<Scalar>>(
                                     values.begin(), static_cast<Index>(values.size())))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  const Vector<Scalar>& values() const { return data_; }
  Vector<Scalar>& values() { return data_; }
  const Scalar* data() const { return data_.data(); }
  Scalar* data() { return data_.data(); }

  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& operator[](Index i) { return data_[i]; }

  Scalar at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }
  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }

  // Row-major view collapsing the leading axis against the rest.
  ConstMatrixMap<Scalar> matrix() const { return {data(), shape_.front(), size() / shape_.front()}; }
  MatrixMap<Scalar> matrix() { return {data(), shape_.front(), size() / shape_.front()}; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ConfigError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  void check_finite(std::string_view where) const {
    if (!data_.allFinite()) {
      Index bad = 0;
      while (bad < data_.size() && std::isfinite(static_cast<double>(data_[bad]))) ++bad;
      throw NumericError("non-finite value at flat index " + std::to_string(bad) + " of " +
                         shape_string(shape_) + " tensor in " + std::string(where));
    }
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    for (Index extent : shape_) {
      if (extent < 1) throw ConfigError("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  Index offset(std::initializer_list<Index> idx) const {
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : idx) flat = flat * shape_[axis++] + i;
    return flat;
  }

  Shape shape_;
  Vector<Scalar> data_;
};

// Gradients produced by a layer's backward rule.
template <typename Scalar>
struct LayerGrad {
  Tensor<Scalar> input_grad;
  std::map<std::string, Tensor<Scalar>> param_grads;
};

}  // namespace odr
