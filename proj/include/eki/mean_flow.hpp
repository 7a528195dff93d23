#pragma once

#include "eki/covariance_flow.hpp"
#include "eki/linalg.hpp"

namespace eki {

// Limit of the mean flow split into the data-explained part and the shift
// caused by noise inside ran(A). Without ground truth the split is not
// identifiable; then x_dagger = x_infinity and noise_shift = 0.
struct AsymptoticMean {
  Vector x_infinity;
  Vector x_dagger;
  Vector noise_shift;
};

// Certified upper bounds on the parameter-space and observation-space errors
// at time t; both decay like t^{-1/alpha}.
struct RateBounds {
  double bound_param = 0.0;
  double bound_obs = 0.0;
};

// Mean flow started at x0 (not necessarily cfg.m0): the solution of
// dx/dt = -C(t) A^T Gamma^{-1} (A x - y) in closed form. The data integral
// collapses to scalar coefficients per spectral mode, no quadrature involved.
Vector mean_at(const FlowConfig& cfg, const InverseProblem& prob, const Vector& x0,
               double t);

// Same trajectory written against the ground truth: x0 plus the recovered
// fraction of (u_truth - x0) plus the accumulated noise term. Requires
// prob.u_truth. Agrees with mean_at to rounding.
Vector solution_with_truth(const FlowConfig& cfg, const InverseProblem& prob,
                           const Vector& x0, double t);

// t -> infinity limit of the mean flow.
AsymptoticMean asymptotic_limit(const FlowConfig& cfg, const InverseProblem& prob,
                                const Vector& x0);

// argmin { |x - x0|_{C0} : A x = y_target } for y_target in ran(A).
Vector minimal_norm_solution(const Matrix& c0, const Vector& x0, const Matrix& a,
                             const Matrix& gamma, const Vector& y_target);

// Convergence-rate certificates for noise-free data (y in ran(A)), t > 0.
RateBounds rate_certificates(const FlowConfig& cfg, const InverseProblem& prob,
                             const Vector& x0, double t);

// Tikhonov-type estimator m0 + t C0 (I + t A^T Gamma^{-1} A C0)^{-1} A^T
// Gamma^{-1} (y - A m0); stationary point of the regularized least squares
// functional with data weight t. Coincides with the alpha = 1 mean at t = 1.
Vector map_estimator(const Matrix& c0, const Vector& m0, const InverseProblem& prob,
                     double t);

// Replaces y by its Gamma-projection onto ran(A); the component the dynamics
// can never see is removed. eps is adjusted by the same amount.
InverseProblem strip_orthogonal_data(const InverseProblem& prob);

}  // namespace eki
