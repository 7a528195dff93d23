#include "eki/mean_flow.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "eki/bayes.hpp"
#include "oracles.hpp"

namespace eki {
namespace {

TEST(MeanAt, StartsAtInitialConditionAndMatchesRk4Oracle) {
  std::mt19937 gen(31);
  const double alphas[3] = {1.0, 1.25, 2.0};
  for (int rep = 0; rep < 3; ++rep) {
    const Eigen::Index n = 3 + rep;
    const auto tp = oracle::random_problem(gen, n, n);
    const double alpha = alphas[rep];
    const FlowConfig cfg = make_flow_config(alpha, tp.c0, tp.m0, tp.prob);
    EXPECT_LT((mean_at(cfg, tp.prob, tp.m0, 0.0) - tp.m0).norm(), 1e-13);
    const auto ref = oracle::integrate_moments(tp.prob.A, tp.prob.Gamma, tp.prob.y,
                                               tp.c0, tp.m0, alpha, 1.0, 1e-4);
    EXPECT_LT((mean_at(cfg, tp.prob, tp.m0, 1.0) - ref.m).norm() / ref.m.norm(),
              1e-6);
  }
}

TEST(MeanAt, MeanFieldRecoversPosteriorAtUnitTime) {
  const auto tp = oracle::fig_setup();
  const FlowConfig cfg = make_flow_config(1.0, tp.c0, tp.m0, tp.prob);
  const auto [post_mean, post_cov] = oracle::posterior_information(
      tp.c0, tp.m0, tp.prob.A, tp.prob.Gamma, tp.prob.y);
  EXPECT_LT((mean_at(cfg, tp.prob, tp.m0, 1.0) - post_mean).norm(), 1e-9);

  // The deterministic flow misses the posterior mean at t = 1.
  const FlowConfig det = make_flow_config(2.0, tp.c0, tp.m0, tp.prob);
  EXPECT_GT((mean_at(det, tp.prob, tp.m0, 1.0) - post_mean).norm(), 1e-3);
}

TEST(MeanAt, UnaffectedByDataOrthogonalToTheRange) {
  std::mt19937 gen(32);
  auto tp = oracle::random_problem(gen, 3, 5);  // tall A: ran(A) is a strict subspace
  tp.prob.u_truth.reset();
  tp.prob.eps.reset();
  const InverseProblem stripped = strip_orthogonal_data(tp.prob);
  EXPECT_GT((tp.prob.y - stripped.y).norm(), 1e-6);  // there was an orthogonal part
  const FlowConfig cfg = make_flow_config(2.0, tp.c0, tp.m0, tp.prob);
  for (double t : {0.3, 1.0, 20.0}) {
    EXPECT_LT((mean_at(cfg, tp.prob, tp.m0, t) -
               mean_at(cfg, stripped, tp.m0, t))
                  .norm(),
              1e-9);
  }
}

TEST(SolutionWithTruth, AgreesWithMeanAt) {
  std::mt19937 gen(33);
  for (bool clean : {true, false}) {
    const auto tp = oracle::random_problem(gen, 4, 3, clean);
    const FlowConfig cfg = make_flow_config(2.0, tp.c0, tp.m0, tp.prob);
    for (double t : {0.5, 2.0, 50.0}) {
      const Vector direct = mean_at(cfg, tp.prob, tp.m0, t);
      const Vector split = solution_with_truth(cfg, tp.prob, tp.m0, t);
      EXPECT_LT((direct - split).norm(), 1e-10 * std::max(1.0, direct.norm()));
    }
  }
}

TEST(AsymptoticLimit, SplitsIntoProjectionAndNoiseShift) {
  std::mt19937 gen(34);
  const auto tp = oracle::random_problem(gen, 4, 3, false);
  const FlowConfig cfg = make_flow_config(2.0, tp.c0, tp.m0, tp.prob);
  const AsymptoticMean lim = asymptotic_limit(cfg, tp.prob, tp.m0);

  // x_dagger observes like the truth, and the flow converges to x_infinity.
  EXPECT_LT((tp.prob.A * lim.x_dagger - tp.prob.A * *tp.prob.u_truth).norm(),
            1e-9);
  EXPECT_LT((lim.x_infinity - lim.x_dagger - lim.noise_shift).norm(), 1e-12);
  // Noisy data converges only like t^{-1/alpha}, so the gap shrinks with the
  // square root of time here.
  const double gap_far = (mean_at(cfg, tp.prob, tp.m0, 1e8) - lim.x_infinity).norm();
  const double gap_farther =
      (mean_at(cfg, tp.prob, tp.m0, 1e10) - lim.x_infinity).norm();
  EXPECT_LT(gap_far, 1e-2);
  EXPECT_LT(gap_farther, 0.15 * gap_far);
}

TEST(AsymptoticLimit, FallbackWithoutTruthUsesProjectedData) {
  std::mt19937 gen(35);
  auto tp = oracle::random_problem(gen, 3, 5);
  tp.prob.u_truth.reset();
  tp.prob.eps.reset();
  const FlowConfig cfg = make_flow_config(1.0, tp.c0, tp.m0, tp.prob);
  const AsymptoticMean lim = asymptotic_limit(cfg, tp.prob, tp.m0);
  EXPECT_EQ(lim.noise_shift.norm(), 0.0);
  EXPECT_LT((lim.x_dagger - lim.x_infinity).norm(), 1e-14);

  const Vector projected =
      gamma_projection(tp.prob.y, tp.prob.A, tp.prob.Gamma);
  const Vector expected =
      oracle::min_norm_svd(tp.c0, tp.m0, tp.prob.A, projected);
  EXPECT_LT((lim.x_infinity - expected).norm(), 1e-8);
}

TEST(MinimalNormSolution, MatchesSvdOracle) {
  std::mt19937 gen(36);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::Index n = 4 + rep % 2;
    const Eigen::Index m = 2 + rep % 3;  // wide: many solutions exist
    const auto tp = oracle::random_problem(gen, n, m);
    const Vector target = tp.prob.A * oracle::random_gaussian(gen, n, 1).col(0);
    const Vector x = minimal_norm_solution(tp.c0, tp.m0, tp.prob.A,
                                           tp.prob.Gamma, target);
    EXPECT_LT((tp.prob.A * x - target).norm(), 1e-9);
    const Vector expected = oracle::min_norm_svd(tp.c0, tp.m0, tp.prob.A, target);
    EXPECT_LT((x - expected).norm(), 1e-8);
  }
}

TEST(MinimalNormSolution, RejectsUnreachableTargets) {
  std::mt19937 gen(37);
  const auto tp = oracle::random_problem(gen, 2, 4);  // tall: strict range
  Vector off = oracle::random_gaussian(gen, 4, 1).col(0);
  off = 10.0 * (off - gamma_projection(off, tp.prob.A, tp.prob.Gamma)) +
        gamma_projection(off, tp.prob.A, tp.prob.Gamma);
  EXPECT_THROW(
      minimal_norm_solution(tp.c0, tp.m0, tp.prob.A, tp.prob.Gamma, off),
      std::invalid_argument);
}

TEST(RateCertificates, BoundsHoldOnCleanProblems) {
  std::mt19937 gen(38);
  for (int rep = 0; rep < 4; ++rep) {
    const Eigen::Index n = 3 + rep % 2;
    const auto tp = oracle::random_problem(gen, n, n, true);
    const double alpha = (rep % 2 == 0) ? 1.0 : 2.0;
    const FlowConfig cfg = make_flow_config(alpha, tp.c0, tp.m0, tp.prob);
    const AsymptoticMean lim = asymptotic_limit(cfg, tp.prob, tp.m0);
    const WeightedNorm gamma_norm(tp.prob.Gamma);
    for (double t : {1.0, 10.0, 1e3, 1e6}) {
      const RateBounds rb = rate_certificates(cfg, tp.prob, tp.m0, t);
      const Vector m = mean_at(cfg, tp.prob, tp.m0, t);
      EXPECT_LE((m - lim.x_infinity).norm(), rb.bound_param * (1.0 + 1e-9));
      EXPECT_LE(gamma_norm.norm(tp.prob.A * m - tp.prob.y),
                rb.bound_obs * (1.0 + 1e-9));
    }
  }
  const auto tp = oracle::random_problem(gen, 3, 3, true);
  const FlowConfig cfg = make_flow_config(2.0, tp.c0, tp.m0, tp.prob);
  EXPECT_THROW(rate_certificates(cfg, tp.prob, tp.m0, 0.0),
               std::invalid_argument);
}

TEST(MapEstimator, UnitTimeMatchesPosteriorMeanAndMeanField) {
  const auto tp = oracle::fig_setup();
  const auto [post_mean, post_cov] = oracle::posterior_information(
      tp.c0, tp.m0, tp.prob.A, tp.prob.Gamma, tp.prob.y);
  const Vector map1 = map_estimator(tp.c0, tp.m0, tp.prob, 1.0);
  EXPECT_LT((map1 - post_mean).norm(), 1e-9);

  const FlowConfig mf = make_flow_config(1.0, tp.c0, tp.m0, tp.prob);
  EXPECT_LT((map1 - mean_at(mf, tp.prob, tp.m0, 1.0)).norm(), 1e-9);
  EXPECT_LT((map_estimator(tp.c0, tp.m0, tp.prob, 0.0) - tp.m0).norm(), 1e-14);
}

TEST(MapEstimator, MatchesDenseVariationalFormula) {
  std::mt19937 gen(39);
  const auto tp = oracle::random_problem(gen, 4, 3);
  for (double t : {0.5, 1.0, 8.0}) {
    // Minimizer of t/2 |A u - y|^2_Gamma + 1/2 |u - m0|^2_C0, dense normal
    // equations route.
    const Matrix gi = tp.prob.Gamma.inverse();
    const Matrix h = t * tp.prob.A.transpose() * gi * tp.prob.A +
                     tp.c0.inverse();
    const Vector rhs = t * tp.prob.A.transpose() * (gi * tp.prob.y) +
                       tp.c0.inverse() * tp.m0;
    const Vector expected = h.ldlt().solve(rhs);
    EXPECT_LT((map_estimator(tp.c0, tp.m0, tp.prob, t) - expected).norm(),
              1e-9);
  }
}

TEST(StripOrthogonalData, ProjectsDataAndAdjustsNoise) {
  std::mt19937 gen(40);
  const auto tp = oracle::random_problem(gen, 3, 5, false);
  const InverseProblem stripped = strip_orthogonal_data(tp.prob);
  const Vector expected =
      gamma_projection(tp.prob.y, tp.prob.A, tp.prob.Gamma);
  EXPECT_LT((stripped.y - expected).norm(), 1e-10);
  ASSERT_TRUE(stripped.eps.has_value());
  EXPECT_NO_THROW(stripped.validate());  // triple still consistent
  // Projecting twice changes nothing.
  const InverseProblem twice = strip_orthogonal_data(stripped);
  EXPECT_LT((twice.y - stripped.y).norm(), 1e-10);
}

}  // namespace
}  // namespace eki
