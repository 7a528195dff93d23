#include "eki/linalg.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace eki {
namespace {

TEST(InverseProblem, ValidatesShapesAndConsistency) {
  InverseProblem p;
  p.A = Matrix::Identity(2, 2);
  p.Gamma = Matrix::Identity(2, 2);
  p.y = Vector::Zero(2);
  EXPECT_NO_THROW(p.validate());

  InverseProblem bad_gamma = p;
  bad_gamma.Gamma = Matrix::Identity(3, 3);
  EXPECT_THROW(bad_gamma.validate(), std::invalid_argument);

  InverseProblem indefinite = p;
  indefinite.Gamma << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  EXPECT_THROW(indefinite.validate(), std::invalid_argument);

  InverseProblem bad_y = p;
  bad_y.y = Vector::Zero(3);
  EXPECT_THROW(bad_y.validate(), std::invalid_argument);

  InverseProblem inconsistent = p;
  inconsistent.u_truth = Vector::Ones(2);
  inconsistent.eps = Vector::Ones(2);  // y != A u_truth + eps
  EXPECT_THROW(inconsistent.validate(), std::invalid_argument);

  InverseProblem consistent = p;
  consistent.u_truth = Vector::Ones(2);
  consistent.eps = Vector::Constant(2, -1.0);
  EXPECT_NO_THROW(consistent.validate());
}

TEST(InverseProblem, NormalMatrixMatchesDenseAssembly) {
  std::mt19937 gen(11);
  const auto tp = oracle::random_problem(gen, 4, 3);
  const Matrix expected = tp.prob.A.transpose() *
                          tp.prob.Gamma.inverse() * tp.prob.A;
  EXPECT_LT((tp.prob.normal_matrix() - expected).norm(), 1e-12);
  EXPECT_LT((tp.prob.normal_matrix() - tp.prob.normal_matrix().transpose()).norm(),
            1e-14);
}

TEST(InverseProblem, RealizedNoiseUsesStoredOrDerivedValue) {
  std::mt19937 gen(12);
  auto tp = oracle::random_problem(gen, 3, 3);
  ASSERT_TRUE(tp.prob.realized_noise().has_value());
  EXPECT_LT((*tp.prob.realized_noise() - *tp.prob.eps).norm(), 1e-14);

  InverseProblem derived = tp.prob;
  derived.eps.reset();
  ASSERT_TRUE(derived.realized_noise().has_value());
  EXPECT_LT((*derived.realized_noise() - (derived.y - derived.A * *derived.u_truth))
                .norm(),
            1e-14);

  InverseProblem blind = tp.prob;
  blind.u_truth.reset();
  blind.eps.reset();
  EXPECT_FALSE(blind.realized_noise().has_value());
}

TEST(WeightedNorm, InnerProductUsesInverseWeight) {
  std::mt19937 gen(13);
  const Matrix h = oracle::random_spd(gen, 4);
  const Vector x = oracle::random_gaussian(gen, 4, 1).col(0);
  const Vector y = oracle::random_gaussian(gen, 4, 1).col(0);
  const WeightedNorm w(h);
  EXPECT_NEAR(w.inner(x, y), x.dot(h.inverse() * y), 1e-12);
  EXPECT_NEAR(w.squared_norm(x), x.dot(h.inverse() * x), 1e-12);
  EXPECT_NEAR(w.norm(x), std::sqrt(x.dot(h.inverse() * x)), 1e-12);
  EXPECT_NEAR(weighted_inner(x, y, w), w.inner(x, y), 0.0);

  const WeightedNorm identity(Matrix::Identity(4, 4));
  EXPECT_NEAR(identity.inner(x, y), x.dot(y), 1e-14);
  EXPECT_THROW(WeightedNorm(Matrix::Zero(2, 2)), std::invalid_argument);
}

TEST(SpdSqrt, SquaresBackAndRejectsIndefinite) {
  std::mt19937 gen(14);
  const Matrix m = oracle::random_spd(gen, 5);
  const Matrix root = spd_sqrt(m);
  EXPECT_LT((root * root - m).norm(), 1e-12);
  EXPECT_LT((root - root.transpose()).norm(), 1e-13);

  Matrix indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(spd_sqrt(indefinite), std::invalid_argument);
}

TEST(DiagonalizeProduct, TwoParameterExampleSpectrum) {
  // A = diag(4,1), Gamma = I, C0 = [[2,-1],[-1,2]]: C0 B has trace 34 and
  // determinant 48, so the eigenvalues are 17 +- sqrt(241).
  const auto tp = oracle::fig_setup();
  const SpectralData spec = diagonalize_product(tp.c0, tp.prob.normal_matrix());
  EXPECT_NEAR(spec.mu(0), 17.0 + std::sqrt(241.0), 1e-10);
  EXPECT_NEAR(spec.mu(1), 17.0 - std::sqrt(241.0), 1e-10);
  EXPECT_EQ(spec.rank_k, 2);
}

TEST(DiagonalizeProduct, RankOneExampleSpectrum) {
  const auto tp = oracle::rank_one_setup();
  const SpectralData spec = diagonalize_product(tp.c0, tp.prob.normal_matrix());
  EXPECT_NEAR(spec.mu(0), 1.0, 1e-12);
  EXPECT_EQ(spec.mu(1), 0.0);  // clamped exactly
  EXPECT_EQ(spec.rank_k, 1);
}

TEST(DiagonalizeProduct, ReconstructsProductAndInverse) {
  std::mt19937 gen(15);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::Index n = 3 + rep % 3;
    const Eigen::Index m = (rep % 2 == 0) ? n : n - 1;
    const auto tp = oracle::random_problem(gen, n, m);
    const Matrix b = tp.prob.normal_matrix();
    const SpectralData spec = diagonalize_product(tp.c0, b);
    EXPECT_LT((spec.S * spec.mu.asDiagonal() * spec.S_inv - tp.c0 * b).norm(),
              1e-9 * std::max(1.0, (tp.c0 * b).norm()));
    EXPECT_LT((spec.S * spec.S_inv - Matrix::Identity(n, n)).norm(), 1e-10);
    EXPECT_EQ(spec.rank_k, std::min(n, m));  // generic A has full rank
    for (Eigen::Index c = 0; c < n; ++c) {
      EXPECT_NEAR(spec.S.col(c).norm(), 1.0, 1e-12);
      for (Eigen::Index r = 0; r < n; ++r) {
        if (std::abs(spec.S(r, c)) > 1e-12) {
          EXPECT_GT(spec.S(r, c), 0.0);  // first nonzero entry positive
          break;
        }
      }
    }
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      EXPECT_GE(spec.mu(i), spec.mu(i + 1));  // descending
    }
  }
}

TEST(DiagonalizeProduct, RejectsIndefiniteNormalMatrix) {
  EXPECT_THROW(diagonalize_product(Matrix::Identity(2, 2),
                                   -Matrix::Identity(2, 2)),
               std::invalid_argument);
}

TEST(Resolvent, MatchesDenseInverse) {
  std::mt19937 gen(16);
  const auto tp = oracle::random_problem(gen, 4, 4);
  const Matrix b = tp.prob.normal_matrix();
  const SpectralData spec = diagonalize_product(tp.c0, b);
  EXPECT_LT((resolvent(spec, 0.0) - Matrix::Identity(4, 4)).norm(), 1e-12);
  for (double t : {0.3, 1.0, 7.5}) {
    const Matrix expected =
        (Matrix::Identity(4, 4) + t * tp.c0 * b).inverse();
    EXPECT_LT((resolvent(spec, t) - expected).norm(), 1e-9);
  }
}

TEST(PrecondCovPower, PowerOneMatchesDenseAndRescalesExactly) {
  std::mt19937 gen(17);
  const auto tp = oracle::random_problem(gen, 3, 3);
  const Matrix b = tp.prob.normal_matrix();
  const SpectralData spec = diagonalize_product(tp.c0, b);
  const double t = 0.8;
  const Matrix dense =
      tp.c0 * (Matrix::Identity(3, 3) + 2.0 * t * b * tp.c0).inverse() *
      tp.c0.inverse();
  EXPECT_LT((precond_cov_power(spec, t, 2.0, 1.0) - dense).norm(), 1e-9);

  // alpha and t only enter through the product alpha*t, bit for bit.
  const Matrix left = precond_cov_power(spec, t, 2.0, 0.5);
  const Matrix right = precond_cov_power(spec, 2.0 * t, 1.0, 0.5);
  EXPECT_EQ((left - right).norm(), 0.0);
}

TEST(PseudoInverseGamma, SatisfiesBothProductIdentities) {
  std::mt19937 gen(18);
  for (int rep = 0; rep < 4; ++rep) {
    const Eigen::Index n = 4;
    const Eigen::Index m = (rep % 2 == 0) ? 4 : 2;  // half rank deficient
    const auto tp = oracle::random_problem(gen, n, m);
    const Matrix b = tp.prob.normal_matrix();
    const SpectralData spec = diagonalize_product(tp.c0, b);
    const Matrix pinv = pseudo_inverse_gamma(spec, tp.c0);
    const double scale = std::max(1.0, b.norm());
    EXPECT_LT((pinv * b * pinv - pinv).norm(), 1e-9 * scale);
    EXPECT_LT((b * pinv * b - b).norm(), 1e-9 * scale);
  }
}

TEST(GammaProjection, ResidualIsGammaOrthogonalToRange) {
  std::mt19937 gen(19);
  const auto tp = oracle::random_problem(gen, 5, 3);
  const Vector proj = gamma_projection(tp.prob.y, tp.prob.A, tp.prob.Gamma);
  // Normal equations of the weighted least squares problem.
  EXPECT_LT((tp.prob.A.transpose() * tp.prob.Gamma.inverse() * (tp.prob.y - proj))
                .norm(),
            1e-10);
  // The projection lies in ran(A).
  const Vector coeffs = tp.prob.A.completeOrthogonalDecomposition().solve(proj);
  EXPECT_LT((tp.prob.A * coeffs - proj).norm(), 1e-10);

  const Vector reachable = tp.prob.A * oracle::random_gaussian(gen, 5, 1).col(0);
  EXPECT_LT((gamma_projection(reachable, tp.prob.A, tp.prob.Gamma) - reachable)
                .norm(),
            1e-10);
}

TEST(SpectralNorm, MatchesEigenvalueOfGram) {
  std::mt19937 gen(20);
  const Matrix m = oracle::random_gaussian(gen, 4, 6);
  const double expected = std::sqrt(
      Eigen::SelfAdjointEigenSolver<Matrix>(m * m.transpose()).eigenvalues()
          .maxCoeff());
  EXPECT_NEAR(spectral_norm(m), expected, 1e-10);
}

}  // namespace
}  // namespace eki
