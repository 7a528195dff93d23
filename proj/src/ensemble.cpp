#include "eki/ensemble.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "eki/rk4.hpp"
#include "eki/rng.hpp"

namespace eki {

namespace {

Eigen::LLT<Matrix> gamma_factor(const InverseProblem& prob) {
  Eigen::LLT<Matrix> llt(symmetrized(prob.Gamma));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("Gamma is not positive definite");
  }
  return llt;
}

EnsembleMoments moments_of(const Matrix& particles) {
  EnsembleMoments mom;
  mom.mean = particles.rowwise().mean();
  const Matrix centered = particles.colwise() - mom.mean;
  mom.cov = symmetrized(centered * centered.transpose() /
                        static_cast<double>(particles.cols()));
  return mom;
}

void record_state(EnsembleTrajectory& traj, double t, const Matrix& u) {
  traj.times.push_back(t);
  traj.states.push_back(u);
}

}  // namespace

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("sim.dt must be positive");
  if (!(t_end >= 0.0)) throw std::invalid_argument("sim.t_end must be >= 0");
  if (record_stride < 1) throw std::invalid_argument("sim.record_stride must be >= 1");
  if (!(sigma_scale >= 0.0)) throw std::invalid_argument("sim.sigma_scale must be >= 0");
  if (sigma_mode == SigmaMode::kDeterministic && scheme != Scheme::kRk4) {
    throw std::invalid_argument("deterministic dynamics uses the rk4 scheme");
  }
  if (sigma_mode == SigmaMode::kStochastic && scheme != Scheme::kEulerMaruyama) {
    throw std::invalid_argument("stochastic dynamics uses the euler_maruyama scheme");
  }
}

Ensemble init_from_prior(const Vector& m0, const Matrix& c0, Eigen::Index j,
                         uint64_t seed) {
  if (j < 1) throw std::invalid_argument("ensemble size must be >= 1");
  if (c0.rows() != m0.size()) throw std::invalid_argument("m0 and C0 sizes differ");
  Eigen::LLT<Matrix> llt(symmetrized(c0));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("C0 is not positive definite");
  }
  const Matrix l = llt.matrixL();
  Ensemble ens;
  ens.rng_seed = seed;
  ens.rng_stream = 0;
  ens.particles.resize(m0.size(), j);
  for (Eigen::Index p = 0; p < j; ++p) {
    CounterRng rng(seed, ens.rng_stream + static_cast<uint64_t>(p));
    Vector z(m0.size());
    for (Eigen::Index i = 0; i < m0.size(); ++i) z(i) = rng.normal();
    ens.particles.col(p) = m0 + l * z;
  }
  return ens;
}

Ensemble moment_matched(Ensemble ens, const Vector& m0, const Matrix& c0) {
  const EnsembleMoments mom = moments_of(ens.particles);
  Eigen::LLT<Matrix> sample_llt(mom.cov);
  if (sample_llt.info() != Eigen::Success) {
    throw std::invalid_argument(
        "moment matching needs a nonsingular sample covariance (J > dim)");
  }
  Eigen::LLT<Matrix> target_llt(symmetrized(c0));
  if (target_llt.info() != Eigen::Success) {
    throw std::invalid_argument("C0 is not positive definite");
  }
  const Eigen::Index n = ens.dim();
  const Matrix sample_root_inv =
      Matrix(sample_llt.matrixL()).triangularView<Eigen::Lower>().solve(
          Matrix::Identity(n, n));
  const Matrix transform = Matrix(target_llt.matrixL()) * sample_root_inv;
  ens.particles = (transform * (ens.particles.colwise() - mom.mean)).colwise() + m0;
  return ens;
}

EnsembleMoments empirical_moments(const Ensemble& ens) {
  if (ens.size() < 1) throw std::invalid_argument("empty ensemble");
  return moments_of(ens.particles);
}

EnsembleTrajectory run_deterministic(const Ensemble& ens, const InverseProblem& prob,
                                     const SimConfig& sim) {
  sim.validate();
  if (sim.sigma_mode != SigmaMode::kDeterministic) {
    throw std::invalid_argument("run_deterministic needs sigma_mode deterministic");
  }
  prob.validate();
  const auto gamma_llt = gamma_factor(prob);
  const double inv_j = 1.0 / static_cast<double>(ens.size());
  const auto rhs = [&](double, const Matrix& u) {
    const Vector m = u.rowwise().mean();
    const Matrix centered = u.colwise() - m;
    const Matrix residual = (prob.A * u).colwise() - prob.y;
    return Matrix(-(centered * centered.transpose() * inv_j) *
                  (prob.A.transpose() * gamma_llt.solve(residual)));
  };

  EnsembleTrajectory traj;
  Matrix u = ens.particles;
  record_state(traj, 0.0, u);
  double t = 0.0;
  long step = 0;
  const double end_slack = 1e-12 * std::max(1.0, sim.t_end);
  while (t < sim.t_end - end_slack) {
    const double h = std::min(sim.dt, sim.t_end - t);
    rk4_step(u, t, h, rhs);
    t += h;
    ++step;
    if (step % sim.record_stride == 0 || !(t < sim.t_end - end_slack)) {
      record_state(traj, t, u);
    }
  }
  return traj;
}

EnsembleTrajectory run_stochastic(const Ensemble& ens, const InverseProblem& prob,
                                  const SimConfig& sim, uint64_t noise_seed,
                                  uint64_t replicate) {
  sim.validate();
  if (sim.sigma_mode != SigmaMode::kStochastic) {
    throw std::invalid_argument("run_stochastic needs sigma_mode stochastic");
  }
  prob.validate();
  const auto gamma_llt = gamma_factor(prob);
  const Eigen::Index m_dim = prob.A.rows();
  const Eigen::Index j = ens.size();
  // Noise enters through C A^T Gamma^{-1} sqrt(Sigma) with Sigma = Gamma.
  const Matrix noise_premap =
      prob.A.transpose() * gamma_llt.solve(spd_sqrt(prob.Gamma));
  std::vector<CounterRng> streams;
  streams.reserve(static_cast<size_t>(j));
  for (Eigen::Index p = 0; p < j; ++p) {
    streams.emplace_back(noise_seed,
                         stream_id(1, replicate, static_cast<uint64_t>(p)));
  }

  EnsembleTrajectory traj;
  Matrix u = ens.particles;
  record_state(traj, 0.0, u);
  const double inv_j = 1.0 / static_cast<double>(j);
  Matrix z(m_dim, j);
  double t = 0.0;
  long step = 0;
  const double end_slack = 1e-12 * std::max(1.0, sim.t_end);
  while (t < sim.t_end - end_slack) {
    const double h = std::min(sim.dt, sim.t_end - t);
    const Vector mean = u.rowwise().mean();
    const Matrix centered = u.colwise() - mean;
    const Matrix cov = centered * centered.transpose() * inv_j;
    const Matrix residual = (prob.A * u).colwise() - prob.y;
    for (Eigen::Index p = 0; p < j; ++p) {
      for (Eigen::Index i = 0; i < m_dim; ++i) z(i, p) = streams[p].normal();
    }
    u += -h * cov * (prob.A.transpose() * gamma_llt.solve(residual)) +
         (std::sqrt(h) * sim.sigma_scale) * cov * (noise_premap * z);
    t += h;
    ++step;
    if (step % sim.record_stride == 0 || !(t < sim.t_end - end_slack)) {
      record_state(traj, t, u);
    }
  }
  return traj;
}

Ensemble discrete_step(const Ensemble& ens, const InverseProblem& prob, double tau,
                       SigmaMode mode, uint64_t seed, uint64_t step_index) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("tau must be in (0, 1]");
  }
  prob.validate();
  const EnsembleMoments mom = moments_of(ens.particles);
  const Matrix gram =
      symmetrized(prob.A * mom.cov * prob.A.transpose() + prob.Gamma / tau);
  Eigen::LLT<Matrix> gram_llt(gram);
  if (gram_llt.info() != Eigen::Success) {
    throw std::runtime_error("discrete step system is not positive definite");
  }

  Matrix targets = prob.y.replicate(1, ens.size());
  if (mode == SigmaMode::kStochastic) {
    const Matrix root = spd_sqrt(prob.Gamma) / std::sqrt(tau);
    for (Eigen::Index p = 0; p < ens.size(); ++p) {
      CounterRng rng(seed, stream_id(2, step_index, static_cast<uint64_t>(p)));
      Vector z(prob.A.rows());
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
      targets.col(p) += root * z;
    }
  }

  Ensemble next = ens;
  const Matrix residual = prob.A * ens.particles - targets;
  next.particles =
      ens.particles - mom.cov * prob.A.transpose() * gram_llt.solve(residual);
  return next;
}

Vector tikhonov_minimizer(const Matrix& cov, const InverseProblem& prob, double tau,
                          const Vector& u_base) {
  prob.validate();
  if (cov.rows() != u_base.size()) {
    throw std::invalid_argument("cov and u_base sizes differ");
  }
  const auto gamma_llt = gamma_factor(prob);

  // Basis of range(cov); the penalty term is infinite off this span.
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(cov));
  const double cutoff = 1e-12 * std::max(es.eigenvalues().maxCoeff(), 0.0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    if (es.eigenvalues()(i) > cutoff) keep.push_back(i);
  }
  const Eigen::Index r = static_cast<Eigen::Index>(keep.size());
  if (r == 0) return u_base;  // degenerate penalty pins the point in place

  Matrix q(cov.rows(), r);
  Vector spectrum(r);
  for (Eigen::Index c = 0; c < r; ++c) {
    q.col(c) = es.eigenvectors().col(keep[static_cast<size_t>(c)]);
    spectrum(c) = es.eigenvalues()(keep[static_cast<size_t>(c)]);
  }
  const Matrix aq = prob.A * q;
  Matrix system = tau * aq.transpose() * gamma_llt.solve(aq);
  system += spectrum.cwiseInverse().asDiagonal();
  const Vector rhs =
      tau * aq.transpose() * gamma_llt.solve(prob.y - prob.A * u_base);
  return u_base + q * system.ldlt().solve(rhs);
}

double variational_equivalence_check(const Ensemble& ens, const InverseProblem& prob,
                                     double tau) {
  const Ensemble stepped =
      discrete_step(ens, prob, tau, SigmaMode::kDeterministic, 0);
  const EnsembleMoments mom = moments_of(ens.particles);
  double worst = 0.0;
  for (Eigen::Index p = 0; p < ens.size(); ++p) {
    const Vector minimizer =
        tikhonov_minimizer(mom.cov, prob, tau, Vector(ens.particles.col(p)));
    worst = std::max(worst, (minimizer - stepped.particles.col(p)).norm());
  }
  return worst;
}

std::vector<double> subspace_distances(const EnsembleTrajectory& traj) {
  if (traj.states.empty()) throw std::invalid_argument("empty trajectory");
  const Matrix& u0 = traj.states.front();
  const Vector base = u0.rowwise().mean();
  const Matrix centered = u0.colwise() - base;
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  Eigen::Index rank = 0;
  if (svd.singularValues().size() > 0 && svd.singularValues()(0) > 0.0) {
    const double cutoff = 1e-12 * svd.singularValues()(0);
    rank = (svd.singularValues().array() > cutoff).count();
  }
  const Matrix q = svd.matrixU().leftCols(rank);

  std::vector<double> distances;
  distances.reserve(traj.states.size());
  for (const Matrix& u : traj.states) {
    const Matrix rel = u.colwise() - base;
    const Matrix off_span = rel - q * (q.transpose() * rel);
    distances.push_back(off_span.colwise().norm().maxCoeff());
  }
  return distances;
}

double subspace_check(const EnsembleTrajectory& traj) {
  const std::vector<double> d = subspace_distances(traj);
  double worst = 0.0;
  for (double v : d) worst = std::max(worst, v);
  return worst;
}

EnsembleMoments replicate_averaged_moments(const Ensemble& ens,
                                           const InverseProblem& prob,
                                           const SimConfig& sim, uint64_t seed,
                                           int replicates, int max_threads) {
  if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
  SimConfig final_only = sim;
  final_only.record_stride = std::numeric_limits<int>::max();

  std::vector<EnsembleMoments> results(static_cast<size_t>(replicates));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int r = next.fetch_add(1); r < replicates; r = next.fetch_add(1)) {
      const EnsembleTrajectory traj = run_stochastic(
          ens, prob, final_only, seed, static_cast<uint64_t>(r));
      Ensemble final_ens = ens;
      final_ens.particles = traj.states.back();
      results[static_cast<size_t>(r)] = empirical_moments(final_ens);
    }
  };

  int threads = std::max(1, max_threads);
  threads = std::min<int>(threads, replicates);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Fixed-order reduction so the thread count cannot change the result.
  EnsembleMoments avg;
  avg.mean = Vector::Zero(ens.dim());
  avg.cov = Matrix::Zero(ens.dim(), ens.dim());
  for (const auto& mom : results) {
    avg.mean += mom.mean;
    avg.cov += mom.cov;
  }
  avg.mean /= static_cast<double>(replicates);
  avg.cov /= static_cast<double>(replicates);
  return avg;
}

}  // namespace eki
