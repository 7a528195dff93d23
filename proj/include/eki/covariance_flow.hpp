#pragma once

#include "eki/linalg.hpp"

namespace eki {

// Inputs of the closed-form moment flow: prior pair (m0, C0), interpolation
// parameter alpha in [1, 2], and the spectrum of C0 B with B = A^T Gamma^{-1} A.
// alpha = 2 is the deterministic dynamic, alpha = 1 the mean-field limit of the
// stochastic one; alpha = (J+1)/J matches J-particle averages to leading order.
struct FlowConfig {
  double alpha = 2.0;
  Matrix C0;
  Vector m0;
  SpectralData spec;
};

FlowConfig make_flow_config(double alpha, Matrix c0, Vector m0,
                            const InverseProblem& prob);

// Quadratic operator A(C) = alpha C B C driving the covariance: dC/dt = -A(C).
struct CovOperatorA {
  double alpha = 2.0;
  Matrix B;
};

Matrix apply_operator_A(const CovOperatorA& op, const Matrix& c);

// C(t) = C0 (I + alpha t B C0)^{-1}, evaluated through the spectrum of C0 B
// and symmetrized. Monotonically decreasing in the quadratic-form order.
Matrix covariance_at(const FlowConfig& cfg, double t);

// Limit of C(t) for t -> infinity: the prior with the observable directions
// (positive mu_i) removed. A singular matrix whenever rank_k > 0.
Matrix covariance_limit(const FlowConfig& cfg);

// First-order profile C_hat of the approach to the limit:
// t (C(t) - C_limit) -> C_hat, and C_hat is a fixed point of A.
Matrix asymptotic_profile(const FlowConfig& cfg);

// Exact flow started from a matrix satisfying C_hat B C_hat = lambda C_hat:
// the shape is preserved and only the amplitude decays, C_hat/(1 + alpha lambda t).
// The profile from asymptotic_profile has lambda = 1/alpha.
Matrix self_similar_evolution(const CovOperatorA& op, const Matrix& c_hat,
                              double lambda, double t);

}  // namespace eki
