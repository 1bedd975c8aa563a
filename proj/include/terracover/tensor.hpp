#pragma once

#include <Eigen/Dense>
#include <numeric>
#include <vector>

#include "terracover/errors.hpp"

namespace terra {

// Dense n-dimensional array in row-major order with an optional same-shape
// gradient buffer. Scalar is float for training, double for gradient checks.
template <typename Scalar>
class Tensor {
public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap = Eigen::Map<
      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  explicit Tensor(std::vector<Eigen::Index> shape) : shape_(std::move(shape)) {
    values_ = Array::Zero(count(shape_));
  }

  static Tensor zeros(std::vector<Eigen::Index> shape) { return Tensor(std::move(shape)); }

  const std::vector<Eigen::Index>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Eigen::Index dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  Eigen::Index size() const { return values_.size(); }

  Array& values() { return values_; }
  const Array& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  bool has_grad() const { return grad_.size() == values_.size() && size() > 0; }
  Array& grad() {
    if (grad_.size() != values_.size()) grad_ = Array::Zero(values_.size());
    return grad_;
  }
  const Array& grad() const { return grad_; }
  void zero_grad() {
    if (grad_.size() == values_.size()) grad_.setZero();
  }

  // 4-D accessor for [B, C, H, W] tensors.
  Scalar& operator()(Eigen::Index b, Eigen::Index c, Eigen::Index h, Eigen::Index w) {
    return values_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar operator()(Eigen::Index b, Eigen::Index c, Eigen::Index h,
                    Eigen::Index w) const {
    return values_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  MatrixMap as_matrix(Eigen::Index rows, Eigen::Index cols) {
    check_view(rows, cols);
    return MatrixMap(values_.data(), rows, cols);
  }
  ConstMatrixMap as_matrix(Eigen::Index rows, Eigen::Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(values_.data(), rows, cols);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.values() = values_.template cast<Other>();
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
  static Eigen::Index count(const std::vector<Eigen::Index>& shape) {
    Eigen::Index n = 1;
    for (Eigen::Index d : shape) {
      if (d <= 0) throw DataError("tensor extents must be positive");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  void check_view(Eigen::Index rows, Eigen::Index cols) const {
    if (rows * cols != values_.size()) {
      throw DataError("matrix view does not cover the tensor");
    }
  }

  std::vector<Eigen::Index> shape_;
  Array values_;
  Array grad_;
};

inline std::string shape_string(const std::vector<Eigen::Index>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace terra
