#pragma once

#include <cstdint>
#include <vector>

#include "eki/linalg.hpp"

namespace eki {

// Particle system, one column per particle.
struct Ensemble {
  Matrix particles;
  uint64_t rng_seed = 0;
  uint64_t rng_stream = 0;  // base stream; particle j draws from rng_stream + j

  Eigen::Index dim() const { return particles.rows(); }
  Eigen::Index size() const { return particles.cols(); }
};

enum class SigmaMode { kDeterministic, kStochastic };  // Sigma = 0 or Sigma = Gamma
enum class Scheme { kRk4, kEulerMaruyama };

struct SimConfig {
  SigmaMode sigma_mode = SigmaMode::kDeterministic;
  double dt = 1e-3;
  double t_end = 1.0;
  Scheme scheme = Scheme::kRk4;
  double sigma_scale = 1.0;  // scales the noise amplitude; 1 means Sigma = Gamma
  int record_stride = 1;     // snapshots kept every this many steps

  void validate() const;  // deterministic -> rk4, stochastic -> euler_maruyama
};

struct EnsembleMoments {
  Vector mean;
  Matrix cov;  // divisor J, not J-1
};

struct EnsembleTrajectory {
  std::vector<double> times;
  std::vector<Matrix> states;
};

// J iid draws from N(m0, C0), one counter stream per particle.
Ensemble init_from_prior(const Vector& m0, const Matrix& c0, Eigen::Index j,
                         uint64_t seed);

// Affine correction making the empirical moments equal (m0, C0) exactly.
// Needs the sample covariance to be nonsingular, so J > dim.
Ensemble moment_matched(Ensemble ens, const Vector& m0, const Matrix& c0);

EnsembleMoments empirical_moments(const Ensemble& ens);

// Coupled particle ODE du_j/dt = -C_emp A^T Gamma^{-1} (A u_j - y) with the
// empirical covariance recomputed inside every RK4 stage.
EnsembleTrajectory run_deterministic(const Ensemble& ens, const InverseProblem& prob,
                                     const SimConfig& sim);

// Euler-Maruyama for the interacting SDE system with noise C_emp A^T
// Gamma^{-1} sqrt(Sigma) dW_j, Sigma = sigma_scale^2 * Gamma. Separate Wiener
// streams per (replicate, particle).
EnsembleTrajectory run_stochastic(const Ensemble& ens, const InverseProblem& prob,
                                  const SimConfig& sim, uint64_t noise_seed,
                                  uint64_t replicate = 0);

// One step of the discrete iteration
// u_j <- u_j - C A^T (A C A^T + tau^{-1} Gamma)^{-1} (A u_j - y_j~), tau in (0,1],
// with y_j~ = y (deterministic) or y + noise, noise ~ N(0, tau^{-1} Gamma).
Ensemble discrete_step(const Ensemble& ens, const InverseProblem& prob, double tau,
                       SigmaMode mode, uint64_t seed, uint64_t step_index = 0);

// Minimizer of tau/2 |A u - y|_Gamma^2 + 1/2 |u - u_base|_cov^2 over the
// affine span u_base + range(cov); off that span the penalty is infinite.
Vector tikhonov_minimizer(const Matrix& cov, const InverseProblem& prob, double tau,
                          const Vector& u_base);

// Each deterministic discrete step also solves a Tikhonov problem in the
// ensemble-covariance norm, restricted to the span of the ensemble spread.
// Returns the largest distance between the two solutions over the particles.
double variational_equivalence_check(const Ensemble& ens, const InverseProblem& prob,
                                     double tau);

// Largest distance of any particle at any recorded time from the affine span
// of the initial ensemble.
double subspace_check(const EnsembleTrajectory& traj);
std::vector<double> subspace_distances(const EnsembleTrajectory& traj);

// Final-time moments averaged over independent-noise replicates of the same
// initial ensemble, computed on up to max_threads workers with a fixed
// reduction order (thread count never changes the result).
EnsembleMoments replicate_averaged_moments(const Ensemble& ens,
                                           const InverseProblem& prob,
                                           const SimConfig& sim, uint64_t seed,
                                           int replicates, int max_threads);

}  // namespace eki
