#include "eki/spectral_dae.hpp"

#include <cmath>
#include <stdexcept>

namespace eki {

namespace {

Matrix rayleigh_matrix(const Matrix& b, const Matrix& vectors) {
  return symmetrized(vectors.transpose() * b * vectors);
}

void check_orthonormal(const Matrix& v, double tol) {
  const Eigen::Index n = v.cols();
  if ((v.transpose() * v - Matrix::Identity(n, n)).norm() > tol) {
    throw std::invalid_argument("eigenvector columns are not orthonormal");
  }
}

// Derivative shared by dae_rhs and the integrator; b is A^T Gamma^{-1} A.
DaeDerivative derivative(const Vector& lambdas, const Matrix& vectors,
                         const Matrix& b, double alpha, double tol_degenerate) {
  const Eigen::Index n = lambdas.size();
  const Matrix g = rayleigh_matrix(b, vectors);
  DaeDerivative d;
  d.lambda_dot.resize(n);
  d.vector_dot = Matrix::Zero(vectors.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.lambda_dot(i) = -alpha * lambdas(i) * lambdas(i) * g(i, i);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double gap = lambdas(j) - lambdas(i);
      if (std::abs(gap) <= tol_degenerate) continue;
      d.vector_dot.col(i) +=
          (alpha * lambdas(i) * lambdas(j) / gap) * g(i, j) * vectors.col(j);
    }
  }
  return d;
}

void modified_gram_schmidt(Matrix& v) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      v.col(j) -= v.col(i).dot(v.col(j)) * v.col(i);
    }
    const double norm = v.col(j).norm();
    if (norm == 0.0) throw std::runtime_error("eigenvector collapsed to zero");
    v.col(j) /= norm;
  }
}

// Degenerate pairs must carry no coupling: lambda_i^2 <Av_i, Av_j>_Gamma = 0
// up to a tolerance scaled by the Rayleigh quotients.
void check_degenerate_constraint(const Vector& lambdas, const Matrix& vectors,
                                 const Matrix& b, double tol_degenerate) {
  const Matrix g = rayleigh_matrix(b, vectors);
  const Eigen::Index n = lambdas.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (std::abs(lambdas(i) - lambdas(j)) > tol_degenerate) continue;
      const double scale = 1.0 + lambdas(i) * lambdas(i) *
                                     std::sqrt(std::abs(g(i, i) * g(j, j)));
      if (std::abs(lambdas(i) * lambdas(i) * g(i, j)) > 1e-6 * scale) {
        throw std::invalid_argument(
            "degenerate eigenvalue pair is not A-orthogonal");
      }
    }
  }
}

}  // namespace

DaeDerivative dae_rhs(const EigenState& state, const Matrix& a, const Matrix& gamma,
                      double alpha, double tol_degenerate) {
  check_orthonormal(state.vectors, 1e-8);
  InverseProblem prob{a, gamma, Vector::Zero(a.rows()), {}, {}};
  const Matrix b = prob.normal_matrix();
  return derivative(state.lambdas, state.vectors, b, alpha, tol_degenerate);
}

DaeTrajectory integrate_dae(const FlowConfig& cfg, const Matrix& a,
                            const Matrix& gamma, double t_end, double dt,
                            int record_stride) {
  if (!(dt > 0.0) || !(t_end >= 0.0)) {
    throw std::invalid_argument("integrate_dae needs dt > 0 and t_end >= 0");
  }
  if (record_stride < 1) throw std::invalid_argument("record_stride must be >= 1");
  InverseProblem prob{a, gamma, Vector::Zero(a.rows()), {}, {}};
  const Matrix b = prob.normal_matrix();

  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(cfg.C0));
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
    throw std::invalid_argument("C0 is not positive definite");
  }
  const Eigen::Index n = cfg.C0.rows();
  Vector lambdas(n);
  Matrix vectors(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {  // descending start
    lambdas(i) = es.eigenvalues()(n - 1 - i);
    vectors.col(i) = es.eigenvectors().col(n - 1 - i);
  }

  DaeTrajectory out;
  out.tol_degenerate = 1e-8 * lambdas(0);
  check_degenerate_constraint(lambdas, vectors, b, out.tol_degenerate);

  std::vector<bool> degenerate(static_cast<size_t>(n * n), false);
  auto scan_crossings = [&](double t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const bool close =
            std::abs(lambdas(i) - lambdas(j)) <= out.tol_degenerate;
        const size_t idx = static_cast<size_t>(i * n + j);
        if (close && !degenerate[idx]) out.crossings.push_back({t, i, j});
        degenerate[idx] = close;
      }
    }
  };

  out.states.push_back({0.0, lambdas, vectors});
  scan_crossings(0.0);

  double t = 0.0;
  long step = 0;
  const double end_slack = 1e-12 * std::max(1.0, t_end);
  while (t < t_end - end_slack) {
    const double h = std::min(dt, t_end - t);
    const auto k1 = derivative(lambdas, vectors, b, cfg.alpha, out.tol_degenerate);
    const auto k2 = derivative(lambdas + 0.5 * h * k1.lambda_dot,
                               vectors + 0.5 * h * k1.vector_dot, b, cfg.alpha,
                               out.tol_degenerate);
    const auto k3 = derivative(lambdas + 0.5 * h * k2.lambda_dot,
                               vectors + 0.5 * h * k2.vector_dot, b, cfg.alpha,
                               out.tol_degenerate);
    const auto k4 = derivative(lambdas + h * k3.lambda_dot,
                               vectors + h * k3.vector_dot, b, cfg.alpha,
                               out.tol_degenerate);
    lambdas += (h / 6.0) * (k1.lambda_dot + 2.0 * k2.lambda_dot +
                            2.0 * k3.lambda_dot + k4.lambda_dot);
    vectors += (h / 6.0) * (k1.vector_dot + 2.0 * k2.vector_dot +
                            2.0 * k3.vector_dot + k4.vector_dot);
    modified_gram_schmidt(vectors);
    t += h;
    ++step;
    scan_crossings(t);
    if (step % record_stride == 0 || !(t < t_end - end_slack)) {
      out.states.push_back({t, lambdas, vectors});
    }
  }
  return out;
}

EigenvalueBounds eigenvalue_bounds(const EigenState& initial, const Matrix& a,
                                   const Matrix& gamma, double alpha, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("eigenvalue_bounds needs t >= 0");
  check_orthonormal(initial.vectors, 1e-8);
  InverseProblem prob{a, gamma, Vector::Zero(a.rows()), {}, {}};
  const Matrix b = prob.normal_matrix();
  const double op_sq = Eigen::SelfAdjointEigenSolver<Matrix>(b)
                           .eigenvalues()
                           .maxCoeff();  // |Gamma^{-1/2} A|^2

  const Eigen::Index n = initial.lambdas.size();
  EigenvalueBounds out;
  out.lower_all.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double l0 = initial.lambdas(i);
    out.lower_all(i) = l0 / (alpha * op_sq * t * l0 + 1.0);
  }
  const auto rayleigh = [&](Eigen::Index i) {
    return initial.vectors.col(i).dot(b * initial.vectors.col(i));
  };
  const double l1 = initial.lambdas(0);
  const double ln = initial.lambdas(n - 1);
  out.lower_first = l1 / (alpha * rayleigh(0) * t * l1 + 1.0);
  out.upper_last = ln / (alpha * rayleigh(n - 1) * t * ln + 1.0);
  return out;
}

bool convexity_check(const std::vector<double>& lambda1_on_uniform_grid) {
  if (lambda1_on_uniform_grid.size() < 3) {
    throw std::invalid_argument("convexity_check needs at least three samples");
  }
  double scale = 0.0;
  for (double v : lambda1_on_uniform_grid) scale = std::max(scale, std::abs(v));
  for (size_t i = 1; i + 1 < lambda1_on_uniform_grid.size(); ++i) {
    const double second = lambda1_on_uniform_grid[i - 1] -
                          2.0 * lambda1_on_uniform_grid[i] +
                          lambda1_on_uniform_grid[i + 1];
    if (second < -1e-8 * scale) return false;
  }
  return true;
}

}  // namespace eki
