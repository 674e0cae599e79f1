#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "mdir/errors.hpp"

namespace mdir {

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row-major, 64-bit real matrix. The universal numeric carrier: every tensor
// is promoted to this on load and all downstream math runs in f64.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::int64_t rows, std::int64_t cols)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), 0.0) {
    if (rows < 0 || cols < 0) throw ShapeMismatch("negative matrix dimension");
  }
  DenseMatrix(std::int64_t rows, std::int64_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (static_cast<std::size_t>(rows * cols) != data_.size())
      throw ShapeMismatch("data length does not match rows*cols");
  }

  static DenseMatrix identity(std::int64_t n) {
    DenseMatrix m(n, n);
    for (std::int64_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static DenseMatrix from_eigen(const Eigen::Ref<const EigenRowMat>& e) {
    DenseMatrix m(e.rows(), e.cols());
    m.map() = e;
    return m;
  }

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * cols_ + j)];
  }
  double operator()(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * cols_ + j)];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Eigen::Map<EigenRowMat> map() {
    return Eigen::Map<EigenRowMat>(data_.data(), rows_, cols_);
  }
  Eigen::Map<const EigenRowMat> map() const {
    return Eigen::Map<const EigenRowMat>(data_.data(), rows_, cols_);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  DenseMatrix transposed() const {
    DenseMatrix t(cols_, rows_);
    t.map() = map().transpose();
    return t;
  }

  bool operator==(const DenseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace mdir
