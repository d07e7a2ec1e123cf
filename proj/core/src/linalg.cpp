// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "shortcut/linalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "shortcut/errors.hpp"

namespace shortcut {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

ConstView view(const Matrix& m) {
  return ConstView(m.values().data(), static_cast<Eigen::Index>(m.rows()),
                   static_cast<Eigen::Index>(m.cols()));
}

View view(Matrix& m) {
  return View(m.values().data(), static_cast<Eigen::Index>(m.rows()),
              static_cast<Eigen::Index>(m.cols()));
}

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

const char* to_string(FormatError::Kind kind) noexcept {
  switch (kind) {
    case FormatError::Kind::kBadMagic: return "bad magic";
    case FormatError::Kind::kVersionMismatch: return "version mismatch";
    case FormatError::Kind::kTruncated: return "truncated";
    case FormatError::Kind::kMalformed: return "malformed";
    case FormatError::Kind::kIo: return "io";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape(a) + " * " + shape(b));
  }
  Matrix out(a.rows(), b.cols());
  view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_transposed: " + shape(a) + " * (" + shape(b) + ")^T");
  }
  // Row-by-row so that each output row is a function of one input row only;
  // blocked GEMM kernels may otherwise change rounding with the batch size.
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto x = a.row(i);
    auto y = out.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto w = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * x[k];
      y[j] = acc;
    }
  }
  return out;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) {
    throw DimensionError("matvec: " + shape(m) + " * vector of length " +
                         std::to_string(x.size()));
  }
  std::vector<double> y(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto w = m.row(r);
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * x[k];
    y[r] = acc;
  }
  return y;
}

double frobenius_norm(const Matrix& m) { return view(m).norm(); }

double infinity_norm(const Matrix& m) {
  double best = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += std::abs(v);
    best = std::max(best, s);
  }
  return best;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("subtract: " + shape(a) + " - " + shape(b));
  }
  Matrix out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return out;
}

bool all_finite(std::span<const double> xs) noexcept {
  return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m.values())) {
    throw NonFiniteError(std::string(what) + ": contains non-finite entries");
  }
}

double pairwise_sum(std::span<const double> xs) noexcept {
  constexpr std::size_t kLeaf = 8;
  if (xs.size() <= kLeaf) {
    double s = 0.0;
    for (double v : xs) s += v;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

LeastSquaresSolution solve_least_squares(const Matrix& sources, const Matrix& targets,
                                         const LeastSquaresOptions& options) {
  if (sources.rows() != targets.rows()) {
    throw DimensionError("solve_least_squares: " + std::to_string(sources.rows()) +
                         " source rows vs " + std::to_string(targets.rows()) +
                         " target rows");
  }
  if (sources.rows() == 0 || sources.cols() == 0 || targets.cols() == 0) {
    throw DimensionError("solve_least_squares: empty system");
  }
  if (!(options.ridge >= 0.0) || !std::isfinite(options.ridge)) {
    throw std::invalid_argument("solve_least_squares: ridge must be finite and >= 0");
  }
  require_finite(sources, "solve_least_squares sources");
  require_finite(targets, "solve_least_squares targets");

  const Eigen::Index n = static_cast<Eigen::Index>(sources.rows());
  const Eigen::Index d = static_cast<Eigen::Index>(sources.cols());
  const Eigen::Index p = d + (options.fit_intercept ? 1 : 0);

  Eigen::MatrixXd design(n, p);
  design.leftCols(d) = view(sources);
  if (options.fit_intercept) design.col(d).setOnes();
  const Eigen::MatrixXd y = view(targets);

  // The intercept column is never penalized.
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, options.ridge);
  if (options.fit_intercept) penalty(d) = 0.0;

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(design.transpose());
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  gram.diagonal() += penalty;
  const Eigen::MatrixXd rhs = design.transpose() * y;

  LeastSquaresSolution out;
  Eigen::MatrixXd solution;  // p × d′

  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
  out.condition_estimate =
      rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();

  if (llt.info() == Eigen::Success && out.condition_estimate <= options.condition_limit) {
    out.route = SolverRoute::kCholesky;
    solution = llt.solve(rhs);
  } else {
    // Stack sqrt(penalty) rows under the design so the orthogonal route solves
    // the same penalized objective; with zero penalty this is the plain
    // minimum-norm least-squares problem.
    out.route = SolverRoute::kOrthogonal;
    Eigen::Index extra = 0;
    for (Eigen::Index j = 0; j < p; ++j) extra += penalty(j) > 0.0 ? 1 : 0;
    Eigen::MatrixXd stacked_x = Eigen::MatrixXd::Zero(n + extra, p);
    Eigen::MatrixXd stacked_y = Eigen::MatrixXd::Zero(n + extra, y.cols());
    stacked_x.topRows(n) = design;
    stacked_y.topRows(n) = y;
    Eigen::Index row = n;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (penalty(j) > 0.0) stacked_x(row++, j) = std::sqrt(penalty(j));
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(stacked_x);
    solution = cod.solve(stacked_y);
  }

  const Eigen::Index dp = y.cols();
  out.coefficients = Matrix(static_cast<std::size_t>(dp), static_cast<std::size_t>(d));
  view(out.coefficients) = solution.topRows(d).transpose();
  if (options.fit_intercept) {
    out.intercept.resize(static_cast<std::size_t>(dp));
    for (Eigen::Index j = 0; j < dp; ++j) out.intercept[static_cast<std::size_t>(j)] = solution(d, j);
  }
  require_finite(out.coefficients, "solve_least_squares result");
  return out;
}

R2Score r2_coordinate_averaged(const Matrix& predictions, const Matrix& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw DimensionError("r2_coordinate_averaged: " + shape(predictions) + " vs " +
                         shape(targets));
  }
  if (targets.rows() < 2) {
    throw std::invalid_argument("r2_coordinate_averaged: need at least 2 samples");
  }
  const std::size_t n = targets.rows();
  const std::size_t d = targets.cols();
  R2Score score;
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += targets(i, j);
    mean /= static_cast<double>(n);
    double sst = 0.0;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = targets(i, j);
      sst += (t - mean) * (t - mean);
      const double e = predictions(i, j) - t;
      sse += e * e;
    }
    if (sst == 0.0) {
      ++score.skipped_coordinates;
      continue;
    }
    total += 1.0 - sse / sst;
    ++score.used_coordinates;
  }
  if (score.used_coordinates == 0) {
    throw std::invalid_argument("r2_coordinate_averaged: every target coordinate is constant");
  }
  score.value = total / static_cast<double>(score.used_coordinates);
  return score;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  if (!all_finite(logits)) throw NonFiniteError("softmax: non-finite logit");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace shortcut
