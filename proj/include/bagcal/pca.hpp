#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bagcal/matrixops.hpp"

namespace bagcal {

inline constexpr std::string_view kPca = "pca";

enum class PcaSource { population, design_weighted_sample };

/// Principal-component model: orthonormal loadings (columns) with
/// descending, nonnegative eigenvalues, plus the standardization moments of
/// the data it was fitted on.
struct PcaModel {
  Matrix loadings;
  Vector eigenvalues;
  Vector col_means;
  Vector col_sds;
  PcaSource source = PcaSource::population;
  std::vector<std::string> column_names;

  Index dim() const noexcept { return eigenvalues.size(); }
};

struct Standardization {
  Vector means;
  Vector sds;
};

namespace detail {

inline PcaModel model_from_covariance(const Matrix& cov, Vector means, Vector sds, PcaSource source,
                                      std::vector<std::string> names) {
  SymEigen eig = sym_eigen(cov);
  // Covariance eigenvalues are nonnegative; anything left below zero is
  // round-off that escaped the solver's clamp window.
  for (Index j = 0; j < eig.eigenvalues.size(); ++j) eig.eigenvalues(j) = std::max(0.0, eig.eigenvalues(j));
  PcaModel model;
  model.loadings = std::move(eig.eigenvectors);
  model.eigenvalues = std::move(eig.eigenvalues);
  model.col_means = std::move(means);
  model.col_sds = std::move(sds);
  model.source = source;
  model.column_names = std::move(names);
  return model;
}

}  // namespace detail

/// PCA of a standardized population matrix (unit-weight covariance).
inline PcaModel fit_pca(const DataMatrix& x) {
  if (!x.standardized) throw Error(kPca, Errc::InvalidConfig, "fit_pca expects a standardized DataMatrix");
  if (x.rows() < 2) throw Error(kPca, Errc::DimensionMismatch, "need at least two rows");
  const Matrix cov = weighted_covariance(x.values, Vector::Ones(x.rows()));
  return detail::model_from_covariance(cov, x.col_means, x.col_sds, PcaSource::population, x.column_names);
}

/// Design-weighted moments of sample rows (divisor sum of weights).
inline Standardization design_weighted_moments(const Matrix& sample_rows, const Vector& design_weights) {
  if (design_weights.size() != sample_rows.rows()) {
    throw Error(kPca, Errc::DimensionMismatch, "design weights do not match sample rows");
  }
  const double total = design_weights.sum();
  if (!(total > 0.0)) throw Error(kPca, Errc::DegenerateWeights, "design weights must sum to a positive value");
  Standardization s;
  s.means = (sample_rows.transpose() * design_weights) / total;
  s.sds.resize(sample_rows.cols());
  for (Index j = 0; j < sample_rows.cols(); ++j) {
    const double var =
        ((sample_rows.col(j).array() - s.means(j)).square() * design_weights.array()).sum() / total;
    if (detail::is_constant(s.means(j), var)) {
      throw Error(kPca, Errc::ZeroVarianceColumn, "column " + std::to_string(j) + " is constant in the sample");
    }
    s.sds(j) = std::sqrt(var);
  }
  return s;
}

/// PCA estimated from sample rows in original units. Without explicit
/// standardization the design-weighted sample moments are used.
inline PcaModel fit_pca_from_sample(const Matrix& sample_rows, const Vector& design_weights,
                                    const std::optional<Standardization>& standardization = std::nullopt,
                                    std::vector<std::string> names = {}) {
  if (sample_rows.rows() < 2) throw Error(kPca, Errc::DimensionMismatch, "need at least two sampled rows");
  if (design_weights.size() != sample_rows.rows()) {
    throw Error(kPca, Errc::DimensionMismatch, "design weights do not match sample rows");
  }
  Standardization s = standardization ? *standardization : design_weighted_moments(sample_rows, design_weights);
  const Matrix z = apply_standardization(sample_rows, s.means, s.sds);
  const Matrix cov = weighted_covariance(z, design_weights);
  if (names.empty()) names = detail::default_names(sample_rows.cols(), "x");
  return detail::model_from_covariance(cov, std::move(s.means), std::move(s.sds), PcaSource::design_weighted_sample,
                                       std::move(names));
}

/// Component scores of rows given in original units: row k is z_k, column j
/// is Z_j.
inline Matrix scores(const PcaModel& model, const Matrix& rows) {
  if (rows.cols() != model.loadings.rows()) {
    throw Error(kPca, Errc::DimensionMismatch,
                "rows have " + std::to_string(rows.cols()) + " columns, model expects " +
                    std::to_string(model.loadings.rows()));
  }
  return apply_standardization(rows, model.col_means, model.col_sds) * model.loadings;
}

/// Scores of rows that are already standardized with the model's moments.
inline Matrix scores_standardized(const PcaModel& model, const Matrix& standardized_rows) {
  if (standardized_rows.cols() != model.loadings.rows()) {
    throw Error(kPca, Errc::DimensionMismatch, "row width does not match model");
  }
  return standardized_rows * model.loadings;
}

inline double explained_variance(const PcaModel& model, Index c) {
  if (c < 1 || c > model.dim()) {
    throw Error(kPca, Errc::OutOfRange, "c = " + std::to_string(c) + " outside [1, " + std::to_string(model.dim()) + "]");
  }
  const double total = model.eigenvalues.sum();
  if (!(total > 0.0)) throw Error(kPca, Errc::OutOfRange, "model has zero total variance");
  if (c == model.dim()) return 1.0;
  return model.eigenvalues.head(c).sum() / total;
}

/// Smallest c whose leading components explain at least `fraction`.
inline Index components_for_fraction(const PcaModel& model, double fraction) {
  for (Index c = 1; c <= model.dim(); ++c) {
    if (explained_variance(model, c) >= fraction) return c;
  }
  return model.dim();
}

/// Population totals of the components, V^T applied to the standardized
/// totals sum_k (x_k - mean) / sd, for workflows where only raw totals and N
/// are known.
inline Vector component_totals(const PcaModel& model, const Vector& raw_totals, double population_size) {
  if (raw_totals.size() != model.loadings.rows()) {
    throw Error(kPca, Errc::DimensionMismatch, "totals length does not match model");
  }
  const Vector standardized =
      (raw_totals - population_size * model.col_means).array() / model.col_sds.array();
  return model.loadings.transpose() * standardized;
}

/// Residual PCA for exact calibration on a block of important variables:
/// the remaining standardized columns are regressed (with intercept) on the
/// important ones, and PCA is fitted on the unscaled residuals.
struct ResidualPca {
  std::vector<Index> important;
  std::vector<Index> remaining;
  Matrix important_block;  // N x c1 standardized important columns
  Matrix coefficients;     // (1 + c1) x (q - c1), intercept first
  PcaModel model;          // over the q - c1 residual variables

  /// Residual rows for standardized rows of the full auxiliary matrix.
  Matrix residuals(const Matrix& standardized_rows) const {
    Matrix imp(standardized_rows.rows(), static_cast<Index>(important.size()));
    Matrix rem(standardized_rows.rows(), static_cast<Index>(remaining.size()));
    for (std::size_t j = 0; j < important.size(); ++j) imp.col(static_cast<Index>(j)) = standardized_rows.col(important[j]);
    for (std::size_t j = 0; j < remaining.size(); ++j) rem.col(static_cast<Index>(j)) = standardized_rows.col(remaining[j]);
    return rem - with_intercept(imp) * coefficients;
  }

  Matrix residual_scores(const Matrix& standardized_rows) const {
    return residuals(standardized_rows) * model.loadings;
  }
};

inline ResidualPca residual_pca(const DataMatrix& x, std::span<const Index> important) {
  if (!x.standardized) throw Error(kPca, Errc::InvalidConfig, "residual_pca expects a standardized DataMatrix");
  const Index q = x.cols();
  const auto c1 = static_cast<Index>(important.size());
  if (c1 < 1 || c1 >= q) {
    throw Error(kPca, Errc::OutOfRange, "need 0 < c1 < q, got c1 = " + std::to_string(c1));
  }
  std::vector<bool> is_important(static_cast<std::size_t>(q), false);
  for (Index j : important) {
    if (j < 0 || j >= q) throw Error(kPca, Errc::OutOfRange, "important index " + std::to_string(j) + " out of range");
    if (is_important[static_cast<std::size_t>(j)]) {
      throw Error(kPca, Errc::OutOfRange, "important index " + std::to_string(j) + " repeated");
    }
    is_important[static_cast<std::size_t>(j)] = true;
  }

  ResidualPca out;
  out.important.assign(important.begin(), important.end());
  for (Index j = 0; j < q; ++j) {
    if (!is_important[static_cast<std::size_t>(j)]) out.remaining.push_back(j);
  }
  out.important_block.resize(x.rows(), c1);
  Matrix rem(x.rows(), q - c1);
  std::vector<std::string> names;
  for (Index j = 0; j < c1; ++j) out.important_block.col(j) = x.values.col(out.important[static_cast<std::size_t>(j)]);
  for (Index j = 0; j < q - c1; ++j) {
    const Index src = out.remaining[static_cast<std::size_t>(j)];
    rem.col(j) = x.values.col(src);
    names.push_back("resid_" + (x.column_names.empty() ? std::to_string(src) : x.column_names[static_cast<std::size_t>(src)]));
  }

  LeastSquaresFit fit = least_squares(rem, out.important_block);
  out.coefficients = std::move(fit.coefficients);
  const Matrix cov = weighted_covariance(fit.residuals, Vector::Ones(x.rows()));
  out.model = detail::model_from_covariance(cov, Vector::Zero(q - c1), Vector::Ones(q - c1), PcaSource::population,
                                            std::move(names));
  return out;
}

}  // namespace bagcal
