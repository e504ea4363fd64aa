// SPDX-License-Identifier: Apache-2.0
//
// Small dense linear algebra: a row-major Matrix, a cyclic Jacobi
// eigensolver for symmetric matrices, and a one-sided Jacobi SVD backing
// minimum-norm least squares and the spectral norm. Sizes here are at most a
// few hundred per side, so O(n^3) sweeps are fine.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ticketlab::numerics {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double> col(std::size_t c) const;

  std::span<const double> entries() const { return data_; }
  std::span<double> entries() { return data_; }

  Matrix transpose() const;
  double frobenius_norm() const;
  double trace() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
std::vector<double> operator*(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

/// a * a^T for a (rows x cols) matrix; the T x T Gram matrix of its rows.
Matrix gram_rows(const Matrix& a);

struct SymEig {
  std::vector<double> values;  ///< descending
  Matrix vectors;              ///< column i pairs with values[i]
};

/// Cyclic Jacobi. Throws ContractViolation unless `a` is square and symmetric
/// to 1e-9 relative.
SymEig sym_eig(const Matrix& a);

struct Svd {
  Matrix u;                     ///< rows x n, orthonormal columns where s > 0
  std::vector<double> s;        ///< descending, length n = min(rows, cols)
  Matrix v;                     ///< cols x n
};

/// Thin SVD by one-sided (Hestenes) Jacobi.
Svd svd(const Matrix& a);

/// Minimum-norm minimizer of ||a x - b||_2.
std::vector<double> least_squares(const Matrix& a, std::span<const double> b);

/// Largest singular value.
double spectral_norm(const Matrix& a);

}  // namespace ticketlab::numerics
