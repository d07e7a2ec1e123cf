// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace shortcut {

/// Dense row-major matrix of doubles.
///
/// Representation batches are stored one vector per row (n × d_h), while
/// learned maps and model weights are stored as operators acting on column
/// vectors (y = W · x), matching the usual `A · h` notation.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix transpose(const Matrix& m);
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ. Row i of the result depends only on row i of `a`.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
std::vector<double> matvec(const Matrix& m, std::span<const double> x);
double frobenius_norm(const Matrix& m);
/// max_i Σ_j |m_ij|
double infinity_norm(const Matrix& m);
Matrix subtract(const Matrix& a, const Matrix& b);

bool all_finite(std::span<const double> xs) noexcept;
void require_finite(const Matrix& m, const char* what);

/// Sum with a fixed pairwise association order, so results depend only on
/// the sequence of values and not on how a caller chunked them.
double pairwise_sum(std::span<const double> xs) noexcept;

enum class SolverRoute { kCholesky, kOrthogonal };

struct LeastSquaresOptions {
  double ridge = 0.0;
  /// Fit y ≈ A·x + b instead of y ≈ A·x. Off by default.
  bool fit_intercept = false;
  /// Gram condition numbers above this switch to the orthogonal route.
  double condition_limit = 1e12;
};

struct LeastSquaresSolution {
  Matrix coefficients;            // d′ × d
  std::vector<double> intercept;  // d′ entries, empty unless fit_intercept
  SolverRoute route = SolverRoute::kCholesky;
  double condition_estimate = 0.0;
};

/// Minimizes Σᵢ‖A·xᵢ (+ b) − yᵢ‖² + ridge·‖A‖²_F over the rows of
/// `sources` (n × d) and `targets` (n × d′). With ridge = 0 and a
/// rank-deficient design the minimum-norm minimizer is returned.
LeastSquaresSolution solve_least_squares(const Matrix& sources, const Matrix& targets,
                                         const LeastSquaresOptions& options);

inline Matrix solve_least_squares(const Matrix& sources, const Matrix& targets,
                                  double ridge = 0.0) {
  return solve_least_squares(sources, targets, LeastSquaresOptions{.ridge = ridge})
      .coefficients;
}

struct R2Score {
  double value = 0.0;
  std::size_t used_coordinates = 0;
  /// Target columns with zero variance, left out of the average.
  std::size_t skipped_coordinates = 0;
};

/// Per-coordinate coefficient of determination, averaged uniformly over
/// coordinates. Rows are samples.
R2Score r2_coordinate_averaged(const Matrix& predictions, const Matrix& targets);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace shortcut
