#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sparc/errors.hpp"

namespace sparc {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out = x · W, with x a row vector of length W.rows().
inline void vec_mat(std::span<const double> x, const Matrix& w, std::span<double> out) {
  if (x.size() != w.rows() || out.size() != w.cols()) {
    throw ShapeError("vec_mat: dimension mismatch");
  }
  for (std::size_t c = 0; c < w.cols(); ++c) out[c] = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double xr = x[r];
    const auto wr = w.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) out[c] += xr * wr[c];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace sparc
