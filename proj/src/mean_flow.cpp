#include "eki/mean_flow.hpp"

#include <cmath>
#include <stdexcept>

namespace eki {

namespace {

// Per-mode coefficient of the data term: the closed form of
// integral_0^t (1 + alpha s mu)^{-1} ds propagated to time t, which is
// (1 - (1 + alpha t mu)^{-1/alpha}) / mu for mu > 0 and t on the kernel.
Vector data_coefficients(const SpectralData& spec, double t, double alpha) {
  Vector g(spec.mu.size());
  const double at = alpha * t;
  for (Eigen::Index i = 0; i < spec.mu.size(); ++i) {
    if (i < spec.rank_k) {
      g(i) = -std::expm1(-std::log1p(at * spec.mu(i)) / alpha) / spec.mu(i);
    } else {
      g(i) = t;
    }
  }
  return g;
}

Vector whitened_rhs(const InverseProblem& prob, const Vector& v) {
  Eigen::LLT<Matrix> llt(symmetrized(prob.Gamma));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("Gamma is not positive definite");
  }
  return prob.A.transpose() * llt.solve(v);
}

void check_shapes(const FlowConfig& cfg, const InverseProblem& prob,
                  const Vector& x0) {
  if (x0.size() != cfg.C0.rows() || prob.A.cols() != cfg.C0.rows()) {
    throw std::invalid_argument("state size does not match the flow configuration");
  }
}

}  // namespace

Vector mean_at(const FlowConfig& cfg, const InverseProblem& prob, const Vector& x0,
               double t) {
  check_shapes(cfg, prob, x0);
  if (!(t >= 0.0)) throw std::invalid_argument("mean_at needs t >= 0");
  const Matrix p = precond_cov_power(cfg.spec, t, cfg.alpha, 1.0 / cfg.alpha);
  const Vector g = data_coefficients(cfg.spec, t, cfg.alpha);
  const Vector data = cfg.C0 * whitened_rhs(prob, prob.y);
  return p * x0 + cfg.spec.S * g.asDiagonal() * cfg.spec.S_inv * data;
}

Vector solution_with_truth(const FlowConfig& cfg, const InverseProblem& prob,
                           const Vector& x0, double t) {
  check_shapes(cfg, prob, x0);
  if (!prob.u_truth) {
    throw std::invalid_argument("solution_with_truth requires u_truth");
  }
  if (!(t >= 0.0)) throw std::invalid_argument("solution_with_truth needs t >= 0");
  const Matrix p = precond_cov_power(cfg.spec, t, cfg.alpha, 1.0 / cfg.alpha);
  const Vector g = data_coefficients(cfg.spec, t, cfg.alpha);
  const Vector noise = *prob.realized_noise();
  const Vector noise_data = cfg.C0 * whitened_rhs(prob, noise);
  return x0 + (*prob.u_truth - x0) - p * (*prob.u_truth - x0) +
         cfg.spec.S * g.asDiagonal() * cfg.spec.S_inv * noise_data;
}

AsymptoticMean asymptotic_limit(const FlowConfig& cfg, const InverseProblem& prob,
                                const Vector& x0) {
  check_shapes(cfg, prob, x0);
  AsymptoticMean out;
  if (prob.u_truth) {
    // Recovered part: x0 plus the observable component of (u_truth - x0).
    Vector observable = Vector::Zero(cfg.spec.mu.size());
    observable.head(cfg.spec.rank_k).setOnes();
    out.x_dagger = x0 + cfg.spec.S * observable.asDiagonal() * cfg.spec.S_inv *
                            (*prob.u_truth - x0);
    out.noise_shift = pseudo_inverse_gamma(cfg.spec, cfg.C0) *
                      whitened_rhs(prob, *prob.realized_noise());
    out.x_infinity = out.x_dagger + out.noise_shift;
  } else {
    // No ground truth: the limit is still the C0-closest point to x0 among
    // the least squares solutions, but the noise split is not identifiable.
    const Vector target = gamma_projection(prob.y, prob.A, prob.Gamma);
    out.x_infinity = minimal_norm_solution(cfg.C0, x0, prob.A, prob.Gamma, target);
    out.x_dagger = out.x_infinity;
    out.noise_shift = Vector::Zero(x0.size());
  }
  return out;
}

Vector minimal_norm_solution(const Matrix& c0, const Vector& x0, const Matrix& a,
                             const Matrix& gamma, const Vector& y_target) {
  const Vector reachable = gamma_projection(y_target, a, gamma);
  if ((y_target - reachable).norm() > 1e-8 * (1.0 + y_target.norm())) {
    throw std::invalid_argument("y_target is not in the range of A");
  }
  // Stationarity gives x = x0 + C0 A^T lambda with A C0 A^T lambda = y - A x0;
  // the Gram matrix may be singular when rows of A are dependent, so invert it
  // on its range only.
  const Matrix gram = symmetrized(a * c0 * a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  const double cutoff = 1e-12 * std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  Vector inv = Vector::Zero(gram.rows());
  for (Eigen::Index i = 0; i < gram.rows(); ++i) {
    if (es.eigenvalues()(i) > cutoff) inv(i) = 1.0 / es.eigenvalues()(i);
  }
  const Vector lambda = es.eigenvectors() * inv.asDiagonal() *
                        es.eigenvectors().transpose() * (reachable - a * x0);
  return x0 + c0 * a.transpose() * lambda;
}

RateBounds rate_certificates(const FlowConfig& cfg, const InverseProblem& prob,
                             const Vector& x0, double t) {
  check_shapes(cfg, prob, x0);
  if (!(t > 0.0)) throw std::invalid_argument("rate_certificates needs t > 0");
  const Vector reachable = gamma_projection(prob.y, prob.A, prob.Gamma);
  if ((prob.y - reachable).norm() > 1e-8 * (1.0 + prob.y.norm())) {
    throw std::invalid_argument("rate certificates need noise-free data in ran(A)");
  }
  RateBounds out;
  if (cfg.spec.rank_k == 0) return out;  // constant flow, zero error

  // Least squares preimage of the data; the bound constant measures how far
  // x0 starts from it in the eigenbasis.
  Eigen::LLT<Matrix> llt(symmetrized(prob.Gamma));
  const auto l = llt.matrixL();
  const Matrix wa = l.solve(prob.A);
  const Vector xi = wa.completeOrthogonalDecomposition().solve(l.solve(prob.y));

  const double mu_1 = cfg.spec.mu(0);
  const double mu_k = cfg.spec.mu(cfg.spec.rank_k - 1);
  const double k1 = spectral_norm(cfg.spec.S) * (cfg.spec.S_inv * (x0 - xi)).norm();
  out.bound_param = k1 * std::pow(1.0 / (mu_k * t), 1.0 / cfg.alpha);
  out.bound_obs = spectral_norm(wa) * k1 * std::pow(mu_1 * mu_k, -1.0 / cfg.alpha) *
                  std::pow(mu_1 / t, 1.0 / cfg.alpha);
  return out;
}

Vector map_estimator(const Matrix& c0, const Vector& m0, const InverseProblem& prob,
                     double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("map_estimator needs t >= 0");
  if (m0.size() != prob.A.cols() || c0.rows() != prob.A.cols()) {
    throw std::invalid_argument("prior shape does not match the columns of A");
  }
  const Vector rhs = whitened_rhs(prob, prob.y - prob.A * m0);
  const Matrix system = Matrix::Identity(c0.rows(), c0.rows()) +
                        t * prob.normal_matrix() * c0;
  return m0 + t * c0 * system.partialPivLu().solve(rhs);
}

InverseProblem strip_orthogonal_data(const InverseProblem& prob) {
  prob.validate();
  InverseProblem out = prob;
  out.y = gamma_projection(prob.y, prob.A, prob.Gamma);
  if (prob.eps) {
    out.eps = *prob.eps - (prob.y - out.y);
  }
  return out;
}

}  // namespace eki
