#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "bagcal/error.hpp"
#include "bagcal/matrixops.hpp"

namespace bagcal::testing {

// Random instances come from the standard library engine, not the library's
// own stream, so test data never shares code with the code under test.
class Rand {
 public:
  explicit Rand(unsigned long long seed) : eng_(seed) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }

  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  Vector uniform_vector(Index n, double lo, double hi) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = uniform(lo, hi);
    return v;
  }

  /// Correlated data: Gaussian factors mixed through a random loading matrix.
  Matrix correlated(Index rows, Index cols, Index factors) {
    const Matrix f = normal_matrix(rows, factors);
    const Matrix load = normal_matrix(factors, cols);
    return f * load + 0.5 * normal_matrix(rows, cols);
  }

  /// Random correlation matrix of size q.
  Matrix correlation(Index q) {
    const Matrix x = correlated(3 * q, q, std::max<Index>(1, q / 4));
    Matrix c = Matrix::Zero(q, q);
    const Matrix xc = x.rowwise() - x.colwise().mean();
    c = xc.transpose() * xc;
    const Vector s = c.diagonal().cwiseSqrt();
    c = s.cwiseInverse().asDiagonal() * c * s.cwiseInverse().asDiagonal();
    return (c + c.transpose()) * 0.5;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

/// Code of the bagcal::Error thrown by fn, or nullopt when nothing is thrown.
inline std::optional<Errc> error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Covariance by explicit double loops over units (weighted, divisor sum w).
inline Matrix brute_force_covariance(const Matrix& x, const Vector& w) {
  const Index n = x.rows(), q = x.cols();
  double total = 0.0;
  for (Index k = 0; k < n; ++k) total += w(k);
  std::vector<double> mean(static_cast<std::size_t>(q), 0.0);
  for (Index j = 0; j < q; ++j) {
    for (Index k = 0; k < n; ++k) mean[static_cast<std::size_t>(j)] += w(k) * x(k, j);
    mean[static_cast<std::size_t>(j)] /= total;
  }
  Matrix c(q, q);
  for (Index a = 0; a < q; ++a) {
    for (Index b = 0; b < q; ++b) {
      double s = 0.0;
      for (Index k = 0; k < n; ++k) {
        s += w(k) * (x(k, a) - mean[static_cast<std::size_t>(a)]) * (x(k, b) - mean[static_cast<std::size_t>(b)]);
      }
      c(a, b) = s / total;
    }
  }
  return c;
}

/// Calibration by solving the full KKT system of
///   min sum (w_k - d_k)^2 / (q_k d_k)  s.t.  Z^T w = t
/// in the unknowns (w, lambda) with a full-pivot LU, independent of the
/// closed-form g path.
inline Vector kkt_weights(const Matrix& z, const Vector& d, const Vector& t, const Vector& qk) {
  const Index n = z.rows(), p = z.cols();
  Matrix kkt = Matrix::Zero(n + p, n + p);
  Vector rhs = Vector::Zero(n + p);
  for (Index k = 0; k < n; ++k) {
    kkt(k, k) = 1.0 / (qk(k) * d(k));
    rhs(k) = 1.0 / qk(k);
  }
  kkt.topRightCorner(n, p) = -z;
  kkt.bottomLeftCorner(p, n) = z.transpose();
  rhs.tail(p) = t;
  const Vector sol = Eigen::FullPivLU<Matrix>(kkt).solve(rhs);
  return sol.head(n);
}

/// Explicit inverse of a 3x3 matrix through cofactors.
inline Eigen::Matrix3d cofactor_inverse(const Eigen::Matrix3d& a) {
  Eigen::Matrix3d cof;
  cof(0, 0) = a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  cof(0, 1) = -(a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0));
  cof(0, 2) = a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0);
  cof(1, 0) = -(a(0, 1) * a(2, 2) - a(0, 2) * a(2, 1));
  cof(1, 1) = a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0);
  cof(1, 2) = -(a(0, 0) * a(2, 1) - a(0, 1) * a(2, 0));
  cof(2, 0) = a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1);
  cof(2, 1) = -(a(0, 0) * a(1, 2) - a(0, 2) * a(1, 0));
  cof(2, 2) = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  const double det = a(0, 0) * cof(0, 0) + a(0, 1) * cof(0, 1) + a(0, 2) * cof(0, 2);
  return cof.transpose() / det;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace bagcal::testing
