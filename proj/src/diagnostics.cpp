#include "eki/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

#include "eki/mean_flow.hpp"

namespace eki {

SpreadRecord compute_spreads(const Ensemble& ens, const InverseProblem& prob,
                             const Vector& u_ref, const FlowConfig& cfg, double t) {
  if (u_ref.size() != ens.dim()) {
    throw std::invalid_argument("u_ref size does not match the ensemble");
  }
  Eigen::LLT<Matrix> gamma_llt(symmetrized(prob.Gamma));
  if (gamma_llt.info() != Eigen::Success) {
    throw std::invalid_argument("Gamma is not positive definite");
  }
  const double j = static_cast<double>(ens.size());
  const Vector mean = ens.particles.rowwise().mean();
  const Matrix centered = ens.particles.colwise() - mean;
  const Matrix shifted = ens.particles.colwise() - u_ref;
  const Matrix fwd_centered = prob.A * centered;
  const Matrix fwd_shifted = (prob.A * ens.particles).colwise() - prob.y;

  SpreadRecord rec;
  rec.t = t;
  rec.v_e = centered.squaredNorm() / (2.0 * j);
  rec.v_r = shifted.squaredNorm() / (2.0 * j);
  rec.fwd_v_e =
      (fwd_centered.array() * gamma_llt.solve(fwd_centered).array()).sum() /
      (2.0 * j);
  rec.fwd_v_r =
      (fwd_shifted.array() * gamma_llt.solve(fwd_shifted).array()).sum() /
      (2.0 * j);
  rec.mean_residual_norm = (mean - u_ref).norm();
  rec.lyapunov = lyapunov_value(mean, lyapunov_anchor(prob), cfg.spec.S);
  return rec;
}

Vector canonical_reference(const FlowConfig& cfg, const InverseProblem& prob,
                           const Ensemble& ens0) {
  const Vector mean0 = ens0.particles.rowwise().mean();
  const Vector target = gamma_projection(prob.y, prob.A, prob.Gamma);
  return minimal_norm_solution(cfg.C0, mean0, prob.A, prob.Gamma, target);
}

double fwd_spread_bound(double fwd_v_e0, Eigen::Index j, double t) {
  if (!(fwd_v_e0 > 0.0)) throw std::invalid_argument("initial spread must be positive");
  if (j < 2) throw std::invalid_argument("spread bound needs J >= 2");
  if (!(t >= 0.0)) throw std::invalid_argument("spread bound needs t >= 0");
  return 1.0 / ((4.0 / static_cast<double>(j)) * t + 1.0 / fwd_v_e0);
}

double lyapunov_value(const Vector& m, const Vector& xi, const Matrix& s) {
  return 0.5 * s.partialPivLu().solve(m - xi).squaredNorm();
}

Vector lyapunov_anchor(const InverseProblem& prob) {
  Eigen::LLT<Matrix> llt(symmetrized(prob.Gamma));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("Gamma is not positive definite");
  }
  const auto l = llt.matrixL();
  const Matrix wa = l.solve(prob.A);
  return wa.completeOrthogonalDecomposition().solve(l.solve(prob.y));
}

namespace {

void update_entry(MonotonicityEntry& entry, double prev, double next, double t_prev,
                  double t_next) {
  if (entry.monotone && next > prev + 1e-9) {
    entry.monotone = false;
    entry.t_from = t_prev;
    entry.t_to = t_next;
  }
}

}  // namespace

MonotonicityReport monotonicity_report(const std::vector<SpreadRecord>& records) {
  if (records.size() < 2) {
    throw std::invalid_argument("monotonicity_report needs at least two records");
  }
  MonotonicityReport report;
  for (size_t i = 1; i < records.size(); ++i) {
    const SpreadRecord& a = records[i - 1];
    const SpreadRecord& b = records[i];
    update_entry(report.v_e, a.v_e, b.v_e, a.t, b.t);
    update_entry(report.v_r, a.v_r, b.v_r, a.t, b.t);
    update_entry(report.fwd_v_e, a.fwd_v_e, b.fwd_v_e, a.t, b.t);
    update_entry(report.fwd_v_r, a.fwd_v_r, b.fwd_v_r, a.t, b.t);
    update_entry(report.mean_residual, a.mean_residual_norm, b.mean_residual_norm,
                 a.t, b.t);
    update_entry(report.lyapunov, a.lyapunov, b.lyapunov, a.t, b.t);
  }
  return report;
}

}  // namespace eki
