#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wce/error.hpp"

namespace wce {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

// Dense row-major rank-3 array. The leading axis is the batch axis (paths,
// chaos indices) so that a tensor can be viewed as a (n0 x n1*n2) matrix.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t n0, std::size_t n1, std::size_t n2, double fill = 0.0)
      : dims_{n0, n1, n2}, data_(n0 * n1 * n2, fill) {}

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  [[nodiscard]] std::size_t dim(std::size_t axis) const { return dims_[axis]; }
  [[nodiscard]] const std::array<std::size_t, 3>& dims() const { return dims_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }
  [[nodiscard]] const std::vector<double>& storage() const { return data_; }

  std::span<double> slice(std::size_t i) {
    return {data_.data() + i * dims_[1] * dims_[2], dims_[1] * dims_[2]};
  }
  [[nodiscard]] std::span<const double> slice(std::size_t i) const {
    return {data_.data() + i * dims_[1] * dims_[2], dims_[1] * dims_[2]};
  }

  MatrixMap as_matrix() {
    return {data_.data(), static_cast<Eigen::Index>(dims_[0]),
            static_cast<Eigen::Index>(dims_[1] * dims_[2])};
  }
  [[nodiscard]] ConstMatrixMap as_matrix() const {
    return {data_.data(), static_cast<Eigen::Index>(dims_[0]),
            static_cast<Eigen::Index>(dims_[1] * dims_[2])};
  }

  bool operator==(const Tensor3&) const = default;

 private:
  std::array<std::size_t, 3> dims_{0, 0, 0};
  std::vector<double> data_;
};

inline std::string shape_string(const Tensor3& t) {
  return "(" + std::to_string(t.dim(0)) + ", " + std::to_string(t.dim(1)) + ", " +
         std::to_string(t.dim(2)) + ")";
}

inline void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
  if (a.dims() != b.dims()) {
    throw Error(ErrorKind::shape, std::string(what) + ": shapes " + shape_string(a) + " and " +
                                      shape_string(b) + " differ");
  }
}

}  // namespace wce
