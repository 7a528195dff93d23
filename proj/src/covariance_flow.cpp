#include "eki/covariance_flow.hpp"

#include <stdexcept>

namespace eki {

FlowConfig make_flow_config(double alpha, Matrix c0, Vector m0,
                            const InverseProblem& prob) {
  if (!(alpha >= 1.0)) {
    throw std::invalid_argument("alpha must be >= 1");
  }
  prob.validate();
  if (c0.rows() != prob.A.cols() || m0.size() != prob.A.cols()) {
    throw std::invalid_argument("prior shape does not match the columns of A");
  }
  FlowConfig cfg;
  cfg.alpha = alpha;
  cfg.spec = diagonalize_product(c0, prob.normal_matrix());
  cfg.C0 = std::move(c0);
  cfg.m0 = std::move(m0);
  return cfg;
}

Matrix apply_operator_A(const CovOperatorA& op, const Matrix& c) {
  return op.alpha * c * op.B * c;
}

Matrix covariance_at(const FlowConfig& cfg, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("covariance_at needs t >= 0");
  const double at = cfg.alpha * t;
  const Eigen::ArrayXd factors = 1.0 / (1.0 + at * cfg.spec.mu.array());
  return symmetrized(cfg.spec.S * factors.matrix().asDiagonal() * cfg.spec.S_inv *
                     cfg.C0);
}

Matrix covariance_limit(const FlowConfig& cfg) {
  Vector factors = Vector::Ones(cfg.spec.mu.size());
  factors.head(cfg.spec.rank_k).setZero();
  return symmetrized(cfg.spec.S * factors.asDiagonal() * cfg.spec.S_inv * cfg.C0);
}

Matrix asymptotic_profile(const FlowConfig& cfg) {
  Vector factors = Vector::Zero(cfg.spec.mu.size());
  for (Eigen::Index i = 0; i < cfg.spec.rank_k; ++i) {
    factors(i) = 1.0 / (cfg.alpha * cfg.spec.mu(i));
  }
  return symmetrized(cfg.spec.S * factors.asDiagonal() * cfg.spec.S_inv * cfg.C0);
}

Matrix self_similar_evolution(const CovOperatorA& op, const Matrix& c_hat,
                              double lambda, double t) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(t >= 0.0)) throw std::invalid_argument("self_similar_evolution needs t >= 0");
  // Eigen-equation C_hat B C_hat = lambda C_hat; note no alpha factor here, so
  // the full fixed point A(C_hat) = C_hat corresponds to lambda = 1/alpha.
  const double residual = (c_hat * op.B * c_hat - lambda * c_hat).norm();
  if (residual > 1e-8 * std::max(c_hat.norm(), 1e-300)) {
    throw std::invalid_argument(
        "c_hat does not satisfy the eigen-equation of the covariance operator");
  }
  return c_hat / (1.0 + op.alpha * lambda * t);
}

}  // namespace eki
