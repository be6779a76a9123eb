#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "more/error.hpp"

namespace more {

/// Dense row-major matrix of doubles, sized at run time.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw InvalidArgument("matrix: data size does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// y = A x
inline void matvec(const Matrix& a, std::span<const double> x, std::span<double> y) {
  assert(x.size() == a.cols() && y.size() == a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    const auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

// y += A^T x
inline void matvec_transposed_add(const Matrix& a, std::span<const double> x, std::span<double> y) {
  assert(x.size() == a.rows() && y.size() == a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += row[c] * x[r];
  }
}

// A += scale * x y^T
inline void add_outer(Matrix& a, std::span<const double> x, std::span<const double> y, double scale = 1.0) {
  assert(x.size() == a.rows() && y.size() == a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    const double xr = scale * x[r];
    for (std::size_t c = 0; c < a.cols(); ++c) row[c] += xr * y[c];
  }
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace more
