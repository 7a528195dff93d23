#pragma once

#include <vector>

#include "eki/covariance_flow.hpp"
#include "eki/ensemble.hpp"
#include "eki/linalg.hpp"

namespace eki {

// Ensemble spread quantities at one instant, all with the 1/(2J) factor:
// v_e about the ensemble mean, v_r about the reference point, and their
// forward-space (Gamma-weighted, mapped through A) counterparts.
struct SpreadRecord {
  double t = 0.0;
  double v_e = 0.0;
  double v_r = 0.0;
  double fwd_v_e = 0.0;
  double fwd_v_r = 0.0;
  double mean_residual_norm = 0.0;  // |mean - u_ref|
  double lyapunov = 0.0;
};

// u_ref must satisfy A u_ref = y for the residual identities to close
// (clean or projected data); canonical_reference provides such a point.
SpreadRecord compute_spreads(const Ensemble& ens, const InverseProblem& prob,
                             const Vector& u_ref, const FlowConfig& cfg, double t);

// Canonical reference: the C0-minimal-norm least squares solution seen from
// the initial ensemble mean.
Vector canonical_reference(const FlowConfig& cfg, const InverseProblem& prob,
                           const Ensemble& ens0);

// Comparison-principle bound for the forward spread along the deterministic
// dynamics: fwd_v_e(t) <= 1 / ((4/J) t + 1/fwd_v_e(0)).
double fwd_spread_bound(double fwd_v_e0, Eigen::Index j, double t);

// 1/2 |S^{-1}(m - xi)|^2, decreasing along the mean flow; xi is a least
// squares preimage of the clean data.
double lyapunov_value(const Vector& m, const Vector& xi, const Matrix& s);

// Least squares preimage of y used as the Lyapunov anchor.
Vector lyapunov_anchor(const InverseProblem& prob);

struct MonotonicityEntry {
  bool monotone = true;
  double t_from = 0.0;  // earliest interval with an increase, when any
  double t_to = 0.0;
};

struct MonotonicityReport {
  MonotonicityEntry v_e;
  MonotonicityEntry v_r;
  MonotonicityEntry fwd_v_e;
  MonotonicityEntry fwd_v_r;
  MonotonicityEntry mean_residual;
  MonotonicityEntry lyapunov;
};

// Flags any increase beyond 1e-9 between consecutive records, per quantity.
MonotonicityReport monotonicity_report(const std::vector<SpreadRecord>& records);

}  // namespace eki
