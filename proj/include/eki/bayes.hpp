#pragma once

#include "eki/covariance_flow.hpp"
#include "eki/linalg.hpp"

namespace eki {

struct GaussianMeasure {
  Vector mean;
  Matrix cov;
};

// Exact Gaussian posterior of the linear model under the prior N(mean, cov),
// computed through the resolvent: cov_post = C0 (I + A^T Gamma^{-1} A C0)^{-1}.
GaussianMeasure exact_posterior(const GaussianMeasure& prior,
                                const InverseProblem& prob);

// Same posterior through the information (precision) form
// cov_post = (C0^{-1} + A^T Gamma^{-1} A)^{-1}. Algebraically identical to
// exact_posterior; kept as an independent route so the two can be compared.
GaussianMeasure exact_posterior_information(const GaussianMeasure& prior,
                                            const InverseProblem& prob);

// Distance of the flow moments at time t from the exact posterior:
// (|mean gap|, |cov gap|_F). Zero at t = 1 only for the mean-field flow.
struct PosteriorGap {
  double mean_gap = 0.0;
  double cov_gap = 0.0;
};

PosteriorGap posterior_gap(const FlowConfig& cfg, const InverseProblem& prob,
                           double t);

}  // namespace eki
