#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bagcal/error.hpp"
#include "bagcal/matrixops.hpp"

namespace bagcal {

inline constexpr std::string_view kCalibration = "calibration";

enum class SingularityPolicy { error, pseudo_inverse };

/// Linear (chi-square distance) calibration settings. unit_scale holds the
/// q_k of the distance sum (w_k - d_k)^2 / (q_k d_k); empty means q_k = 1.
struct CalibrationSpec {
  Vector unit_scale;
  bool include_intercept = true;
  SingularityPolicy singularity = SingularityPolicy::pseudo_inverse;
  double pivot_tolerance = 1e-10;
};

struct Provenance {
  std::string estimator = "CAL";
  Index B = 0;
  Index c = 0;
  double alpha = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
  std::vector<std::string> calibrated_exactly_on;
  Index rank_deficient = 0;  // calibrations solved by pseudo-inverse
  Index failed = 0;          // calibrations skipped under SingularityPolicy::error
};

/// Final weights w_k = d_k g_k for the sampled units.
struct WeightSystem {
  std::vector<Index> units;
  Vector d;
  Vector g;
  Vector w;
  Provenance provenance;

  Index size() const noexcept { return d.size(); }
};

/// Raw outcome of one chi-square calibration: g-weights and the Lagrange
/// multipliers, so g = 1 + q_k z_k^T multipliers.
struct Chi2Solution {
  Vector g;
  Vector multipliers;
  Index rank = 0;
  bool rank_deficient = false;
};

namespace detail {

inline Matrix augment_intercept(const Matrix& z) {
  Matrix out(z.rows(), z.cols() + 1);
  out.leftCols(z.cols()) = z;
  out.col(z.cols()).setOnes();
  return out;
}

inline Vector augment_total(const Vector& totals, double population_size) {
  Vector out(totals.size() + 1);
  out.head(totals.size()) = totals;
  out(totals.size()) = population_size;
  return out;
}

inline void check_inputs(const Matrix& z, const Vector& d, const Vector& totals, const CalibrationSpec& spec) {
  if (d.size() != z.rows()) {
    throw Error(kCalibration, Errc::DimensionMismatch,
                "design weights length " + std::to_string(d.size()) + " != rows " + std::to_string(z.rows()));
  }
  if (totals.size() != z.cols()) {
    throw Error(kCalibration, Errc::DimensionMismatch,
                "totals length " + std::to_string(totals.size()) + " != columns " + std::to_string(z.cols()));
  }
  if (spec.unit_scale.size() != 0) {
    if (spec.unit_scale.size() != z.rows()) {
      throw Error(kCalibration, Errc::DimensionMismatch, "unit_scale length does not match rows");
    }
    if (!(spec.unit_scale.array() > 0.0).all()) {
      throw Error(kCalibration, Errc::InvalidConfig, "unit_scale entries must be positive");
    }
  }
  if (!(d.array() > 0.0).all()) throw Error(kCalibration, Errc::DegenerateWeights, "design weights must be positive");
}

}  // namespace detail

/// Solves the calibration system on an already-assembled constraint matrix
/// (no intercept handling):
///   T = sum d_k q_k z_k z_k^T,  T lambda = totals - sum d_k z_k,
///   g_k = 1 + q_k z_k^T lambda.
inline Chi2Solution solve_chi2(const Matrix& z, const Vector& d, const Vector& totals, const CalibrationSpec& spec) {
  const Vector dq = spec.unit_scale.size() == 0 ? d : Vector(d.cwiseProduct(spec.unit_scale));
  const Matrix t_matrix = z.transpose() * dq.asDiagonal() * z;
  const Vector gap = totals - z.transpose() * d;

  Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
  cod.setThreshold(spec.pivot_tolerance);
  cod.compute(t_matrix);

  Chi2Solution sol;
  sol.rank = cod.rank();
  sol.rank_deficient = sol.rank < z.cols();
  if (sol.rank_deficient && spec.singularity == SingularityPolicy::error) {
    throw Error(kCalibration, Errc::SingularSystem,
                "calibration matrix has rank " + std::to_string(sol.rank) + " < " + std::to_string(z.cols()));
  }
  sol.multipliers = cod.solve(gap);
  Vector g = z * sol.multipliers;
  if (spec.unit_scale.size() != 0) g.array() *= spec.unit_scale.array();
  sol.g = g.array() + 1.0;
  return sol;
}

/// Chi-square calibration of design weights d so that sum_S w_k z_k matches
/// totals. With include_intercept, a column of ones with total
/// population_size is appended (the caller must not add its own).
inline WeightSystem chi2_calibrate(const Matrix& z, const Vector& d, const Vector& totals, double population_size,
                                   const CalibrationSpec& spec = {}) {
  detail::check_inputs(z, d, totals, spec);
  const Index p = z.cols() + (spec.include_intercept ? 1 : 0);
  if (p > z.rows()) {
    if (spec.singularity == SingularityPolicy::error) {
      throw Error(kCalibration, Errc::SingularSystem,
                  std::to_string(p) + " constraints exceed " + std::to_string(z.rows()) + " sampled units");
    }
  }
  const Chi2Solution sol = spec.include_intercept
                               ? solve_chi2(detail::augment_intercept(z), d,
                                            detail::augment_total(totals, population_size), spec)
                               : solve_chi2(z, d, totals, spec);
  WeightSystem ws;
  ws.units.resize(static_cast<std::size_t>(z.rows()));
  std::iota(ws.units.begin(), ws.units.end(), Index{0});
  ws.d = d;
  ws.g = sol.g;
  ws.w = d.cwiseProduct(sol.g);
  ws.provenance.estimator = "CAL";
  ws.provenance.c = z.cols();
  ws.provenance.rank_deficient = sol.rank_deficient ? 1 : 0;
  return ws;
}

/// max_j |sum_k w_k z_kj - total_j| / max(1, |total_j|).
inline double calibration_residual(const Matrix& z, const Vector& w, const Vector& totals) {
  if (w.size() != z.rows() || totals.size() != z.cols()) {
    throw Error(kCalibration, Errc::DimensionMismatch, "calibration_residual: inconsistent dimensions");
  }
  const Vector achieved = z.transpose() * w;
  double worst = 0.0;
  for (Index j = 0; j < totals.size(); ++j) {
    worst = std::max(worst, std::abs(achieved(j) - totals(j)) / std::max(1.0, std::abs(totals(j))));
  }
  return worst;
}

/// Coefficient of variation of g-weights: sample sd (divisor n - 1) / mean.
inline double weight_cv(const Vector& g) {
  if (g.size() < 2) throw Error(kCalibration, Errc::DimensionMismatch, "weight_cv needs at least two weights");
  const double mean = g.mean();
  if (mean == 0.0) throw Error(kCalibration, Errc::ZeroMean, "g-weights have zero mean");
  const double ss = (g.array() - mean).square().sum();
  return std::sqrt(ss / static_cast<double>(g.size() - 1)) / mean;
}

}  // namespace bagcal
