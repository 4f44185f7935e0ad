#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "sgn/core.hpp"

namespace sgn {

/// Dense row-major matrix of doubles.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require_same_size(data_.size(), rows * cols, "Matrix data");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      require_same_size(row.size(), cols_, "Matrix row");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix& operator*=(double s) noexcept {
    for (auto& x : data_) x *= s;
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  require_same_size(a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

/// y = A x
inline Vector matvec(const Matrix& a, std::span<const double> x) {
  require_same_size(a.cols(), x.size(), "matvec");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = Aᵀ x
inline Vector matvec_t(const Matrix& a, std::span<const double> x) {
  require_same_size(a.rows(), x.size(), "matvec_t");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) y[j] += r[j] * xi;
  }
  return y;
}

/// A += s · u vᵀ
inline void add_outer(Matrix& a, double s, std::span<const double> u, std::span<const double> v) {
  require_same_size(a.rows(), u.size(), "add_outer rows");
  require_same_size(a.cols(), v.size(), "add_outer cols");
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double ui = s * u[i];
    if (ui == 0.0) continue;
    for (std::size_t j = 0; j < v.size(); ++j) a(i, j) += ui * v[j];
  }
}

/// Determinant by LU factorization with partial pivoting. Each row swap flips the sign.
inline double lu_det(Matrix m) {
  if (m.rows() != m.cols()) throw DimensionError("lu_det: matrix is not square");
  const std::size_t n = m.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(m(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(m(i, k)) > best) {
        best = std::abs(m(i, k));
        piv = i;
      }
    }
    if (best == 0.0) return 0.0;
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
      det = -det;
    }
    const double pivot = m(k, k);
    det *= pivot;
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m(i, k) / pivot;
      if (f == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) m(i, j) -= f * m(k, j);
    }
  }
  return det;
}

/// Canonical symplectic matrix J = [[0, I], [-I, 0]] of size 2d.
inline Matrix canonical_j(std::size_t d) {
  Matrix j(2 * d, 2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    j(i, d + i) = 1.0;
    j(d + i, i) = -1.0;
  }
  return j;
}

inline double max_abs(const Matrix& m) {
  double r = 0.0;
  for (double x : m.data()) r = std::max(r, std::abs(x));
  return r;
}

}  // namespace sgn
