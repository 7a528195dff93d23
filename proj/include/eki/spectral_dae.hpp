#pragma once

#include <vector>

#include "eki/covariance_flow.hpp"
#include "eki/linalg.hpp"

namespace eki {

// Eigenpairs of the covariance at one instant. Columns of vectors are
// orthonormal; lambdas start in descending order at t = 0 and afterwards
// follow their own trajectories (no re-sorting when curves approach).
struct EigenState {
  double t = 0.0;
  Vector lambdas;
  Matrix vectors;
};

struct DaeDerivative {
  Vector lambda_dot;
  Matrix vector_dot;
};

// Two eigenvalue curves entered the degenerate band |l_i - l_j| <= tol.
struct CrossingEvent {
  double t = 0.0;
  Eigen::Index i = 0;
  Eigen::Index j = 0;
};

struct DaeTrajectory {
  std::vector<EigenState> states;
  std::vector<CrossingEvent> crossings;
  double tol_degenerate = 0.0;
};

// Right-hand side of the coupled eigenvalue / eigenvector system driven by
// the covariance flow. Couplings between eigenvalues closer than
// tol_degenerate are excluded; for such pairs the dynamics instead demands
// lambda_i^2 <Av_i, Av_j>_Gamma = 0, which integrate_dae verifies.
DaeDerivative dae_rhs(const EigenState& state, const Matrix& a, const Matrix& gamma,
                      double alpha, double tol_degenerate);

// Fixed-step RK4 integration of the eigen-system starting from the
// eigendecomposition of cfg.C0, re-orthonormalizing the vectors after every
// step. Near-crossings are recorded as events, not treated as failures.
DaeTrajectory integrate_dae(const FlowConfig& cfg, const Matrix& a,
                            const Matrix& gamma, double t_end, double dt,
                            int record_stride = 1);

// Riccati comparison bounds evaluated at time t from the initial state:
// a lower bound for every eigenvalue through the operator norm of A, a
// sharper lower bound for the largest one and an upper bound for the
// smallest one through their own initial Rayleigh quotients.
struct EigenvalueBounds {
  Vector lower_all;
  double lower_first = 0.0;
  double upper_last = 0.0;
};

EigenvalueBounds eigenvalue_bounds(const EigenState& initial, const Matrix& a,
                                   const Matrix& gamma, double alpha, double t);

// True when the sampled largest-eigenvalue curve has nonnegative second
// differences (up to rounding), i.e. looks convex on a uniform grid.
bool convexity_check(const std::vector<double>& lambda1_on_uniform_grid);

}  // namespace eki
