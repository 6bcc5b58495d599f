#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bagcal/error.hpp"

namespace bagcal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr std::string_view kMatrixOps = "matrixops";

/// N x q auxiliary matrix (row = unit, column = variable) plus the moments
/// used to standardize it. When `standardized` is set, `values` holds
/// (raw - col_means) / col_sds and the moments refer to the original units.
struct DataMatrix {
  Matrix values;
  std::vector<std::string> column_names;
  bool standardized = false;
  Vector col_means;
  Vector col_sds;

  Index rows() const noexcept { return values.rows(); }
  Index cols() const noexcept { return values.cols(); }
};

struct SymEigen {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column j pairs with eigenvalue j
  int sweeps = 0;
};

namespace detail {

inline bool is_constant(double mean, double variance) {
  const double scale = 1e-12 * std::max(1.0, std::abs(mean));
  return !(variance > scale * scale);
}

inline std::vector<std::string> default_names(Index q, std::string_view prefix) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(q));
  for (Index j = 0; j < q; ++j) names.push_back(std::string(prefix) + std::to_string(j));
  return names;
}

}  // namespace detail

/// Centers and scales every column (variance divisor N). Constant columns are
/// rejected rather than dropped so column indices stay stable for callers.
inline DataMatrix standardize_columns(const Matrix& raw, std::vector<std::string> names) {
  const Index n = raw.rows();
  const Index q = raw.cols();
  if (static_cast<Index>(names.size()) != q) {
    throw Error(kMatrixOps, Errc::DimensionMismatch,
                "expected " + std::to_string(q) + " column names, got " + std::to_string(names.size()));
  }
  if (n < 2) throw Error(kMatrixOps, Errc::DimensionMismatch, "need at least two rows to standardize");

  DataMatrix out;
  out.values.resize(n, q);
  out.col_means.resize(q);
  out.col_sds.resize(q);
  for (Index j = 0; j < q; ++j) {
    const double mean = raw.col(j).mean();
    const double var = (raw.col(j).array() - mean).square().sum() / static_cast<double>(n);
    if (detail::is_constant(mean, var)) {
      throw Error(kMatrixOps, Errc::ZeroVarianceColumn,
                  "column " + std::to_string(j) + " (" + names[static_cast<std::size_t>(j)] + ") is constant");
    }
    const double sd = std::sqrt(var);
    out.col_means(j) = mean;
    out.col_sds(j) = sd;
    out.values.col(j) = (raw.col(j).array() - mean) / sd;
  }
  out.column_names = std::move(names);
  out.standardized = true;
  return out;
}

inline DataMatrix standardize_columns(const Matrix& raw) {
  return standardize_columns(raw, detail::default_names(raw.cols(), "x"));
}

/// Applies stored standardization moments to rows in original units.
inline Matrix apply_standardization(const Matrix& rows, const Vector& means, const Vector& sds) {
  if (rows.cols() != means.size() || rows.cols() != sds.size()) {
    throw Error(kMatrixOps, Errc::DimensionMismatch, "row width does not match standardization metadata");
  }
  return (rows.rowwise() - means.transpose()).array().rowwise() / sds.transpose().array();
}

/// Weighted covariance sum_k w_k (x_k - xbar_w)(x_k - xbar_w)^T / sum_k w_k.
/// Unit weights give the population covariance with divisor N.
inline Matrix weighted_covariance(const Matrix& x, const Vector& weights) {
  if (weights.size() != x.rows()) {
    throw Error(kMatrixOps, Errc::DimensionMismatch,
                "weights length " + std::to_string(weights.size()) + " != rows " + std::to_string(x.rows()));
  }
  Index positive = 0;
  for (Index k = 0; k < weights.size(); ++k) {
    if (!(weights(k) >= 0.0)) throw Error(kMatrixOps, Errc::DegenerateWeights, "weights must be nonnegative");
    if (weights(k) > 0.0) ++positive;
  }
  if (positive < 2) throw Error(kMatrixOps, Errc::DegenerateWeights, "need at least two positive weights");

  const double total = weights.sum();
  const Vector mean = (x.transpose() * weights) / total;
  const Matrix centered = x.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * weights.asDiagonal() * centered / total;
  // exact symmetry
  return (cov + cov.transpose()) * 0.5;
}

inline Matrix weighted_covariance(const DataMatrix& x, const Vector& weights) {
  return weighted_covariance(x.values, weights);
}

struct JacobiOptions {
  double symmetry_tolerance = 1e-10;
  double convergence = 1e-12;
  int max_sweeps = 100;
  double clamp_below = 1e-8;  // eigenvalues in (-clamp_below, 0) become 0
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back in descending order (ties keep input order), and
/// each eigenvector is signed so that its largest-magnitude entry is
/// positive, first index winning ties. The sweep order is fixed, so the
/// output is bit-reproducible for a given input.
inline SymEigen sym_eigen(const Matrix& input, const JacobiOptions& opts = {}) {
  const Index q = input.rows();
  if (input.cols() != q) throw Error(kMatrixOps, Errc::DimensionMismatch, "matrix is not square");
  const double asym = q == 0 ? 0.0 : (input - input.transpose()).cwiseAbs().maxCoeff();
  if (asym > opts.symmetry_tolerance) {
    throw Error(kMatrixOps, Errc::NotSymmetric, "max |A - A^T| = " + std::to_string(asym));
  }

  Matrix a = (input + input.transpose()) * 0.5;
  Matrix v = Matrix::Identity(q, q);
  const double scale = std::max(std::abs(a.trace()), a.norm());
  const double target = opts.convergence * scale;

  auto off_norm = [&]() {
    double s = 0.0;
    for (Index j = 0; j < q; ++j)
      for (Index i = j + 1; i < q; ++i) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };

  int sweep = 0;
  if (scale > 0.0) {
    while (off_norm() > target) {
      if (sweep == opts.max_sweeps) {
        throw Error(kMatrixOps, Errc::NoConvergence,
                    "Jacobi did not converge within " + std::to_string(opts.max_sweeps) + " sweeps");
      }
      ++sweep;
      for (Index p = 0; p < q - 1; ++p) {
        for (Index r = p + 1; r < q; ++r) {
          const double apr = a(p, r);
          if (apr == 0.0) continue;
          const double theta = (a(r, r) - a(p, p)) / (2.0 * apr);
          const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(1.0, theta));
          const double c = 1.0 / std::sqrt(t * t + 1.0);
          const double s = t * c;

          for (Index k = 0; k < q; ++k) {
            if (k == p || k == r) continue;
            const double akp = a(k, p);
            const double akr = a(k, r);
            const double nkp = c * akp - s * akr;
            const double nkr = s * akp + c * akr;
            a(k, p) = nkp;
            a(p, k) = nkp;
            a(k, r) = nkr;
            a(r, k) = nkr;
          }
          a(p, p) -= t * apr;
          a(r, r) += t * apr;
          a(p, r) = 0.0;
          a(r, p) = 0.0;

          for (Index k = 0; k < q; ++k) {
            const double vkp = v(k, p);
            const double vkr = v(k, r);
            v(k, p) = c * vkp - s * vkr;
            v(k, r) = s * vkp + c * vkr;
          }
        }
      }
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(q));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return a(i, i) > a(j, j); });

  SymEigen out;
  out.sweeps = sweep;
  out.eigenvalues.resize(q);
  out.eigenvectors.resize(q, q);
  for (Index j = 0; j < q; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    double lambda = a(src, src);
    if (lambda < 0.0 && lambda > -opts.clamp_below) lambda = 0.0;
    out.eigenvalues(j) = lambda;

    Vector col = v.col(src);
    Index lead = 0;
    for (Index k = 1; k < q; ++k) {
      if (std::abs(col(k)) > std::abs(col(lead))) lead = k;
    }
    if (col(lead) < 0.0) col = -col;
    out.eigenvectors.col(j) = col;
  }
  return out;
}

/// Least-squares fit of targets on [1 | predictors]. Coefficients have p + 1
/// rows, the first being the intercept. Rank-deficient designs get the
/// minimum-norm solution.
struct LeastSquaresFit {
  Matrix coefficients;
  Matrix residuals;
  Index rank = 0;
};

inline Matrix with_intercept(const Matrix& predictors) {
  Matrix design(predictors.rows(), predictors.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(predictors.cols()) = predictors;
  return design;
}

inline LeastSquaresFit least_squares(const Matrix& targets, const Matrix& predictors) {
  if (targets.rows() != predictors.rows()) {
    throw Error(kMatrixOps, Errc::DimensionMismatch,
                "targets have " + std::to_string(targets.rows()) + " rows, predictors " +
                    std::to_string(predictors.rows()));
  }
  const Matrix design = with_intercept(predictors);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
  cod.setThreshold(1e-10);
  cod.compute(design);
  LeastSquaresFit fit;
  fit.coefficients = cod.solve(targets);
  fit.residuals = targets - design * fit.coefficients;
  fit.rank = cod.rank();
  return fit;
}

/// targets minus their least-squares projection on [1 | predictors].
inline Matrix regress_residuals(const Matrix& targets, const Matrix& predictors) {
  return least_squares(targets, predictors).residuals;
}

}  // namespace bagcal
