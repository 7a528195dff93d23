#include "eki/bayes.hpp"

#include <stdexcept>

#include "eki/mean_flow.hpp"

namespace eki {

namespace {

void check_prior(const GaussianMeasure& prior, const InverseProblem& prob) {
  prob.validate();
  if (prior.mean.size() != prob.A.cols() || prior.cov.rows() != prob.A.cols()) {
    throw std::invalid_argument("prior shape does not match the columns of A");
  }
  Eigen::LLT<Matrix> llt(symmetrized(prior.cov));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("prior covariance is not positive definite");
  }
}

Vector information_vector(const GaussianMeasure& prior, const InverseProblem& prob) {
  Eigen::LLT<Matrix> gamma(symmetrized(prob.Gamma));
  Eigen::LLT<Matrix> c0(symmetrized(prior.cov));
  return c0.solve(prior.mean) + prob.A.transpose() * gamma.solve(prob.y);
}

}  // namespace

GaussianMeasure exact_posterior(const GaussianMeasure& prior,
                                const InverseProblem& prob) {
  check_prior(prior, prob);
  const Eigen::Index n = prior.cov.rows();
  const Matrix system = Matrix::Identity(n, n) + prob.normal_matrix() * prior.cov;
  // C0 (I + B C0)^{-1} = ((I + B C0)^T)^{-1} applied from the left to C0.
  const Matrix cov = symmetrized(
      system.transpose().partialPivLu().solve(prior.cov));
  GaussianMeasure post;
  post.cov = cov;
  post.mean = cov * information_vector(prior, prob);
  return post;
}

GaussianMeasure exact_posterior_information(const GaussianMeasure& prior,
                                            const InverseProblem& prob) {
  check_prior(prior, prob);
  Eigen::LLT<Matrix> c0(symmetrized(prior.cov));
  const Eigen::Index n = prior.cov.rows();
  const Matrix precision =
      symmetrized(c0.solve(Matrix::Identity(n, n))) + prob.normal_matrix();
  Eigen::LLT<Matrix> post_llt(symmetrized(precision));
  if (post_llt.info() != Eigen::Success) {
    throw std::runtime_error("posterior precision is not positive definite");
  }
  GaussianMeasure post;
  post.cov = symmetrized(post_llt.solve(Matrix::Identity(n, n)));
  post.mean = post_llt.solve(information_vector(prior, prob));
  return post;
}

PosteriorGap posterior_gap(const FlowConfig& cfg, const InverseProblem& prob,
                           double t) {
  GaussianMeasure prior{cfg.m0, cfg.C0};
  const GaussianMeasure post = exact_posterior(prior, prob);
  PosteriorGap gap;
  gap.mean_gap = (mean_at(cfg, prob, cfg.m0, t) - post.mean).norm();
  gap.cov_gap = (covariance_at(cfg, t) - post.cov).norm();
  return gap;
}

}  // namespace eki
