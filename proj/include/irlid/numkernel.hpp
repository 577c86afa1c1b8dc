#pragma once

// Dense real kernel: SVD-based numerical rank, minimum-norm least squares
// and block assembly. Storage and products go through Eigen; the
// decompositions are delegated to LAPACK (dgesdd / dgelsd), which is several
// times faster than Eigen's own SVD at the sizes the experiments reach.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <lapacke.h>

#include "irlid/errors.hpp"

namespace irlid {

using DenseMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Singular spectrum of a matrix plus the rank decision made on it.
struct RankReport {
  std::vector<double> singular_values;  // descending, all >= 0
  std::size_t effective_rank = 0;
  double tolerance_used = 0.0;
  double sigma2 = 0.0;  // second smallest singular value
};

/// max(rows, cols) * eps * 1e3. The stacked identifiability matrices mix
/// blocks scaled by gamma close to 1, hence the generous factor.
inline double default_rel_tol(std::size_t rows, std::size_t cols) {
  return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * 1e3;
}

namespace detail {

inline void require_nonempty_finite(const DenseMatrix& m, const char* what) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw ValidationError(std::string(what) + ": matrix is empty");
  }
  if (!m.allFinite()) {
    throw ValidationError(std::string(what) + ": matrix has non-finite entries");
  }
}

inline lapack_int to_lapack(Eigen::Index n) { return static_cast<lapack_int>(n); }

}  // namespace detail

/// Builds the report from an already computed spectrum (descending order).
inline RankReport make_rank_report(std::vector<double> singular_values, std::size_t rows,
                                   std::size_t cols, std::optional<double> rel_tol = std::nullopt) {
  RankReport report;
  std::sort(singular_values.begin(), singular_values.end(), std::greater<>());
  for (double& s : singular_values) s = std::max(s, 0.0);
  const double rel = rel_tol.value_or(default_rel_tol(rows, cols));
  const double sigma_max = singular_values.empty() ? 0.0 : singular_values.front();
  report.tolerance_used = rel * sigma_max;
  report.effective_rank = static_cast<std::size_t>(
      std::count_if(singular_values.begin(), singular_values.end(),
                    [&](double s) { return s > report.tolerance_used; }));
  const std::size_t n = singular_values.size();
  report.sigma2 = n >= 2 ? singular_values[n - 2] : 0.0;
  report.singular_values = std::move(singular_values);
  return report;
}

/// All min(rows, cols) singular values, descending.
inline std::vector<double> singular_values(const DenseMatrix& m) {
  detail::require_nonempty_finite(m, "singular_values");
  DenseMatrix work = m;
  const lapack_int rows = detail::to_lapack(m.rows());
  const lapack_int cols = detail::to_lapack(m.cols());
  std::vector<double> s(static_cast<std::size_t>(std::min(rows, cols)));
  const lapack_int info = LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'N', rows, cols, work.data(), rows,
                                         s.data(), nullptr, 1, nullptr, 1);
  if (info != 0) {
    throw NumericalError("dgesdd failed (info = " + std::to_string(info) + ")");
  }
  return s;
}

inline RankReport svd_rank(const DenseMatrix& m, std::optional<double> rel_tol = std::nullopt) {
  auto s = singular_values(m);
  return make_rank_report(std::move(s), static_cast<std::size_t>(m.rows()),
                          static_cast<std::size_t>(m.cols()), rel_tol);
}

inline double spectral_norm(const DenseMatrix& m) {
  if (m.size() == 0) return 0.0;
  return singular_values(m).front();
}

struct MinNormSolution {
  Vector x;
  RankReport report;  // rank decision the solve was made with
};

/// Minimum-norm minimiser of ||A x - b||_2. Singular values at or below
/// rel_tol * sigma_max are treated as zero, consistent with svd_rank.
inline MinNormSolution solve_min_norm(const DenseMatrix& a, const Vector& b,
                                      std::optional<double> rel_tol = std::nullopt) {
  detail::require_nonempty_finite(a, "least_squares_min_norm");
  if (b.size() != a.rows()) {
    throw ValidationError("least_squares_min_norm: A has " + std::to_string(a.rows()) +
                          " rows but b has length " + std::to_string(b.size()));
  }
  if (!b.allFinite()) throw ValidationError("least_squares_min_norm: b has non-finite entries");

  const lapack_int rows = detail::to_lapack(a.rows());
  const lapack_int cols = detail::to_lapack(a.cols());
  const lapack_int ldb = std::max(rows, cols);
  const double rel = rel_tol.value_or(default_rel_tol(a.rows(), a.cols()));

  DenseMatrix work = a;
  Vector rhs = Vector::Zero(ldb);
  rhs.head(rows) = b;
  std::vector<double> s(static_cast<std::size_t>(std::min(rows, cols)));
  lapack_int rank = 0;
  const lapack_int info = LAPACKE_dgelsd(LAPACK_COL_MAJOR, rows, cols, 1, work.data(), rows,
                                         rhs.data(), ldb, s.data(), rel, &rank);
  if (info != 0) {
    throw NumericalError("dgelsd failed (info = " + std::to_string(info) + ")");
  }
  MinNormSolution out;
  out.x = rhs.head(cols);
  out.report = make_rank_report(std::move(s), a.rows(), a.cols(), rel);
  return out;
}

inline Vector least_squares_min_norm(const DenseMatrix& a, const Vector& b,
                                     std::optional<double> rel_tol = std::nullopt) {
  return solve_min_norm(a, b, rel_tol).x;
}

/// Orthonormal basis (as columns) of the numerical null space of m.
inline DenseMatrix kernel_basis(const DenseMatrix& m, std::optional<double> rel_tol = std::nullopt) {
  detail::require_nonempty_finite(m, "kernel_basis");
  const Eigen::Index n = m.cols();
  // Pad short-wide inputs with zero rows so the thin SVD yields a full V.
  DenseMatrix work = DenseMatrix::Zero(std::max(m.rows(), n), n);
  work.topRows(m.rows()) = m;
  const lapack_int rows = detail::to_lapack(work.rows());
  const lapack_int cols = detail::to_lapack(n);
  std::vector<double> s(static_cast<std::size_t>(n));
  DenseMatrix u(work.rows(), n);
  DenseMatrix vt(n, n);
  const lapack_int info = LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'S', rows, cols, work.data(), rows,
                                         s.data(), u.data(), rows, vt.data(), cols);
  if (info != 0) {
    throw NumericalError("dgesdd failed (info = " + std::to_string(info) + ")");
  }
  const double tau = rel_tol.value_or(default_rel_tol(m.rows(), m.cols())) * s.front();
  std::vector<Eigen::Index> null_rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(s[static_cast<std::size_t>(i)] > tau)) null_rows.push_back(i);
  }
  DenseMatrix basis(n, static_cast<Eigen::Index>(null_rows.size()));
  for (std::size_t k = 0; k < null_rows.size(); ++k) {
    basis.col(static_cast<Eigen::Index>(k)) = vt.row(null_rows[k]).transpose();
  }
  return basis;
}

/// Grid of optional blocks; nullptr stands for a zero block whose shape is
/// inferred from the other blocks in its block row and block column.
using BlockGrid = std::vector<std::vector<const DenseMatrix*>>;

inline DenseMatrix stack_blocks(const BlockGrid& layout) {
  if (layout.empty() || layout.front().empty()) {
    throw ValidationError("stack_blocks: empty layout");
  }
  const std::size_t grid_rows = layout.size();
  const std::size_t grid_cols = layout.front().size();
  std::vector<Eigen::Index> heights(grid_rows, -1);
  std::vector<Eigen::Index> widths(grid_cols, -1);

  for (std::size_t i = 0; i < grid_rows; ++i) {
    if (layout[i].size() != grid_cols) {
      throw ValidationError("stack_blocks: ragged layout at block row " + std::to_string(i));
    }
    for (std::size_t j = 0; j < grid_cols; ++j) {
      const DenseMatrix* block = layout[i][j];
      if (block == nullptr) continue;
      if (heights[i] >= 0 && heights[i] != block->rows()) {
        throw ValidationError("stack_blocks: inconsistent height in block row " + std::to_string(i));
      }
      if (widths[j] >= 0 && widths[j] != block->cols()) {
        throw ValidationError("stack_blocks: inconsistent width in block column " +
                              std::to_string(j));
      }
      heights[i] = block->rows();
      widths[j] = block->cols();
    }
  }
  for (std::size_t i = 0; i < grid_rows; ++i) {
    if (heights[i] < 0) {
      throw ValidationError("stack_blocks: block row " + std::to_string(i) + " has no blocks");
    }
  }
  for (std::size_t j = 0; j < grid_cols; ++j) {
    if (widths[j] < 0) {
      throw ValidationError("stack_blocks: block column " + std::to_string(j) + " has no blocks");
    }
  }

  Eigen::Index total_rows = 0;
  Eigen::Index total_cols = 0;
  for (auto h : heights) total_rows += h;
  for (auto w : widths) total_cols += w;

  DenseMatrix out = DenseMatrix::Zero(total_rows, total_cols);
  Eigen::Index r0 = 0;
  for (std::size_t i = 0; i < grid_rows; ++i) {
    Eigen::Index c0 = 0;
    for (std::size_t j = 0; j < grid_cols; ++j) {
      if (const DenseMatrix* block = layout[i][j]) {
        out.block(r0, c0, heights[i], widths[j]) = *block;
      }
      c0 += widths[j];
    }
    r0 += heights[i];
  }
  return out;
}

}  // namespace irlid
