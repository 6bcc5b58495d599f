#include <gtest/gtest.h>

#include "bagcal/matrixops.hpp"
#include "test_support.hpp"

using namespace bagcal;
using bagcal::testing::max_abs;
using bagcal::testing::Rand;
using bagcal::testing::error_code;

namespace {

void expect_eigen_invariants(const Matrix& a, const SymEigen& e) {
  const Index q = a.rows();
  EXPECT_LE(max_abs(e.eigenvectors.transpose() * e.eigenvectors - Matrix::Identity(q, q)), 1e-8);
  for (Index j = 0; j < q; ++j) {
    const Vector r = a * e.eigenvectors.col(j) - e.eigenvalues(j) * e.eigenvectors.col(j);
    EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, std::abs(e.eigenvalues(j))));
  }
  for (Index j = 1; j < q; ++j) EXPECT_GE(e.eigenvalues(j - 1), e.eigenvalues(j));
  const Matrix recon = e.eigenvectors * e.eigenvalues.asDiagonal() * e.eigenvectors.transpose();
  EXPECT_LE(max_abs(recon - a), 1e-8);
  EXPECT_NEAR(e.eigenvalues.sum(), a.trace(), 1e-8);
}

}  // namespace

TEST(Standardize, ThreePointColumn) {
  Matrix raw(3, 1);
  raw << 1, 2, 3;
  const DataMatrix x = standardize_columns(raw, {"a"});
  EXPECT_TRUE(x.standardized);
  EXPECT_DOUBLE_EQ(x.col_means(0), 2.0);
  EXPECT_NEAR(x.col_sds(0), std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(x.values(0, 0), -1.2247, 5e-5);
  EXPECT_NEAR(x.values(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(x.values(2, 0), 1.2247, 5e-5);
}

TEST(Standardize, FixedPointOnStandardizedData) {
  Rand rng(1);
  const DataMatrix once = standardize_columns(rng.normal_matrix(30, 4));
  const DataMatrix twice = standardize_columns(once.values);
  EXPECT_LE(max_abs(twice.values - once.values), 1e-12);
  EXPECT_LE(twice.col_means.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((twice.col_sds.array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Standardize, MomentInvariants) {
  Rand rng(2);
  const DataMatrix x = standardize_columns(rng.correlated(57, 9, 3) * 100.0);
  for (Index j = 0; j < x.cols(); ++j) {
    EXPECT_LE(std::abs(x.values.col(j).mean()), 1e-10);
    EXPECT_NEAR(x.values.col(j).squaredNorm() / 57.0, 1.0, 1e-8);
    EXPECT_GT(x.col_sds(j), 0.0);
  }
}

TEST(Standardize, Errors) {
  Matrix raw(3, 2);
  raw << 5, 1, 5, 2, 5, 3;
  EXPECT_EQ(error_code([&] { standardize_columns(raw, {"a", "b"}); }), Errc::ZeroVarianceColumn);
  EXPECT_EQ(error_code([&] { standardize_columns(raw, {"a"}); }), Errc::DimensionMismatch);
}

TEST(WeightedCovariance, UnitWeightsGiveCorrelationOnStandardizedData) {
  Rand rng(3);
  const DataMatrix x = standardize_columns(rng.correlated(40, 6, 2));
  const Matrix c = weighted_covariance(x, Vector::Ones(40));
  EXPECT_LE((c.diagonal().array() - 1.0).abs().maxCoeff(), 1e-8);
  EXPECT_EQ(c, c.transpose());
}

TEST(WeightedCovariance, DuplicatedColumnPairIsPerfectlyCorrelated) {
  Rand rng(4);
  Matrix raw = rng.normal_matrix(20, 2);
  raw.col(1) = raw.col(0);
  const DataMatrix x = standardize_columns(raw);
  const Matrix c = weighted_covariance(x, Vector::Ones(20));
  EXPECT_NEAR(c(0, 1), 1.0, 1e-12);
}

TEST(WeightedCovariance, MatchesBruteForceDoubleLoop) {
  Rand rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix x = rng.normal_matrix(6, 3);
    const Vector w = rng.uniform_vector(6, 0.1, 3.0);
    EXPECT_LE(max_abs(weighted_covariance(x, w) - bagcal::testing::brute_force_covariance(x, w)), 1e-10);
  }
}

TEST(WeightedCovariance, DegenerateWeights) {
  const Matrix x = Matrix::Random(4, 2);
  Vector w(4);
  w << 0, 0, 1, 0;
  EXPECT_EQ(error_code([&] { weighted_covariance(x, w); }), Errc::DegenerateWeights);
  w << 1, -1, 1, 1;
  EXPECT_EQ(error_code([&] { weighted_covariance(x, w); }), Errc::DegenerateWeights);
  EXPECT_EQ(error_code([&] { weighted_covariance(x, Vector::Ones(3)); }), Errc::DimensionMismatch);
}

TEST(SymEigen, TwoByTwo) {
  Matrix a(2, 2);
  a << 1, 0.5, 0.5, 1;
  const SymEigen e = sym_eigen(a);
  EXPECT_NEAR(e.eigenvalues(0), 1.5, 1e-14);
  EXPECT_NEAR(e.eigenvalues(1), 0.5, 1e-14);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(e.eigenvectors(0, 0), r, 1e-14);
  EXPECT_NEAR(e.eigenvectors(1, 0), r, 1e-14);
  // Tie on magnitude: the first index carries the positive entry.
  EXPECT_NEAR(e.eigenvectors(0, 1), r, 1e-14);
  EXPECT_NEAR(e.eigenvectors(1, 1), -r, 1e-14);
}

TEST(SymEigen, IdentityAndDiagonal) {
  const SymEigen id = sym_eigen(Matrix::Identity(4, 4));
  EXPECT_LE((id.eigenvalues.array() - 1.0).abs().maxCoeff(), 1e-15);
  EXPECT_LE(max_abs(id.eigenvectors.transpose() * id.eigenvectors - Matrix::Identity(4, 4)), 1e-15);

  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1, 3, 2;
  const SymEigen e = sym_eigen(d);
  EXPECT_EQ(e.eigenvalues, Vector((Vector(3) << 3, 2, 1).finished()));
  Matrix perm = Matrix::Zero(3, 3);
  perm(1, 0) = perm(2, 1) = perm(0, 2) = 1.0;
  EXPECT_EQ(e.eigenvectors, perm);
}

TEST(SymEigen, RandomCorrelationInvariants) {
  Rand rng(6);
  for (Index q : {5, 20, 60}) {
    const Matrix a = rng.correlation(q);
    expect_eigen_invariants(a, sym_eigen(a));
  }
}

TEST(SymEigen, IndefiniteMatrix) {
  Rand rng(7);
  Matrix a = rng.normal_matrix(8, 8);
  a = (a + a.transpose()).eval();
  expect_eigen_invariants(a, sym_eigen(a));
}

TEST(SymEigen, SignConvention) {
  Rand rng(8);
  const SymEigen e = sym_eigen(rng.correlation(12));
  for (Index j = 0; j < 12; ++j) {
    Index arg = 0;
    const double m = e.eigenvectors.col(j).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(e.eigenvectors(arg, j), 0.0);
    EXPECT_EQ(std::abs(e.eigenvectors(arg, j)), m);
  }
}

TEST(SymEigen, ClampsTinyNegativeEigenvalues) {
  Rand rng(9);
  Matrix raw = rng.normal_matrix(30, 4);
  raw.col(3) = raw.col(0) + raw.col(1);
  const DataMatrix x = standardize_columns(raw);
  const SymEigen e = sym_eigen(weighted_covariance(x, Vector::Ones(30)));
  EXPECT_GE(e.eigenvalues.minCoeff(), 0.0);
  EXPECT_LE(e.eigenvalues(3), 1e-8);
  EXPECT_NEAR(e.eigenvalues.sum(), 4.0, 1e-8);
}

TEST(SymEigen, Deterministic) {
  Rand rng(10);
  const Matrix a = rng.correlation(30);
  const SymEigen e1 = sym_eigen(a);
  const SymEigen e2 = sym_eigen(a);
  EXPECT_EQ(e1.eigenvalues, e2.eigenvalues);
  EXPECT_EQ(e1.eigenvectors, e2.eigenvectors);
}

TEST(SymEigen, Errors) {
  Matrix a(2, 2);
  a << 1, 0.5, 0.4, 1;
  EXPECT_EQ(error_code([&] { sym_eigen(a); }), Errc::NotSymmetric);
  JacobiOptions tight;
  tight.max_sweeps = 1;
  Rand rng(11);
  EXPECT_EQ(error_code([&] { sym_eigen(rng.correlation(20), tight); }), Errc::NoConvergence);
}

TEST(RegressResiduals, ExactLinearDependence) {
  Rand rng(12);
  const Matrix p = rng.normal_matrix(15, 1);
  EXPECT_LE(max_abs(regress_residuals(2.0 * p, p)), 1e-12);
}

TEST(RegressResiduals, OrthogonalTargetIsUnchanged) {
  Matrix p(4, 1), t(4, 1);
  p << -1, 1, -1, 1;
  t << 1, 1, -1, -1;
  EXPECT_LE(max_abs(regress_residuals(t, p) - t), 1e-14);
}

TEST(RegressResiduals, NormalEquationsOracle) {
  Rand rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix t = rng.normal_matrix(10, 2);
    const Matrix p = rng.normal_matrix(10, 2);
    Matrix design(10, 3);
    design.col(0).setOnes();
    design.rightCols(2) = p;
    const Eigen::Matrix3d xtx = design.transpose() * design;
    const Matrix beta = bagcal::testing::cofactor_inverse(xtx) * (design.transpose() * t);
    EXPECT_LE(max_abs(regress_residuals(t, p) - (t - design * beta)), 1e-8);
  }
}

TEST(RegressResiduals, ResidualsOrthogonalToPredictors) {
  Rand rng(14);
  const Matrix p = rng.correlated(50, 5, 2);
  const Matrix t = rng.normal_matrix(50, 3) + p * rng.normal_matrix(5, 3);
  const Matrix r = regress_residuals(t, p);
  const Matrix design = with_intercept(p);
  for (Index a = 0; a < design.cols(); ++a) {
    for (Index b = 0; b < r.cols(); ++b) {
      EXPECT_LE(std::abs(design.col(a).dot(r.col(b))) / (design.col(a).norm() * std::max(1.0, t.col(b).norm())), 1e-6);
    }
  }
}

TEST(RegressResiduals, RankDeficientPredictors) {
  Rand rng(15);
  Matrix p = rng.normal_matrix(20, 3);
  p.col(2) = p.col(0) - p.col(1);
  const Matrix t = rng.normal_matrix(20, 1);
  const LeastSquaresFit fit = least_squares(t, p);
  EXPECT_EQ(fit.rank, 3);
  EXPECT_LE(max_abs(with_intercept(p).transpose() * fit.residuals), 1e-8);
}

TEST(RegressResiduals, DimensionMismatch) {
  EXPECT_EQ(error_code([] { regress_residuals(Matrix::Zero(3, 1), Matrix::Zero(4, 1)); }), Errc::DimensionMismatch);
}
