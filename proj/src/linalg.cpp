#include "eki/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace eki {

namespace {

constexpr double kSymTol = 1e-12;   // relative asymmetry allowed in SPD inputs
constexpr double kRankTol = 1e-10;  // relative eigenvalue cutoff for rank decisions

void require_symmetric(const Matrix& m, const char* name) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(name) + " is not square");
  }
  const double scale = m.norm();
  if ((m - m.transpose()).norm() > kSymTol * std::max(scale, 1e-300)) {
    throw std::invalid_argument(std::string(name) + " is not symmetric");
  }
}

// Eigendecomposition of an SPD matrix; throws if any eigenvalue is <= 0.
Eigen::SelfAdjointEigenSolver<Matrix> spd_eigen(const Matrix& m, const char* name) {
  require_symmetric(m, name);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m));
  if (es.info() != Eigen::Success) {
    throw std::runtime_error(std::string("eigendecomposition failed for ") + name);
  }
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw std::invalid_argument(std::string(name) + " is not positive definite");
  }
  return es;
}

}  // namespace

void InverseProblem::validate() const {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  if (Gamma.rows() != m || Gamma.cols() != m) {
    throw std::invalid_argument("Gamma shape does not match the rows of A");
  }
  if (y.size() != m) {
    throw std::invalid_argument("y length does not match the rows of A");
  }
  spd_eigen(Gamma, "Gamma");
  if (u_truth && u_truth->size() != n) {
    throw std::invalid_argument("u_truth length does not match the columns of A");
  }
  if (eps && eps->size() != m) {
    throw std::invalid_argument("eps length does not match the rows of A");
  }
  if (u_truth && eps) {
    const double drift = (y - A * (*u_truth) - *eps).norm();
    if (drift > 1e-10 * (1.0 + y.norm())) {
      throw std::invalid_argument("y, u_truth and eps are inconsistent");
    }
  }
}

Matrix InverseProblem::normal_matrix() const {
  Eigen::LLT<Matrix> llt(symmetrized(Gamma));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("Gamma is not positive definite");
  }
  return symmetrized(A.transpose() * llt.solve(A));
}

std::optional<Vector> InverseProblem::realized_noise() const {
  if (eps) return eps;
  if (u_truth) return y - A * (*u_truth);
  return std::nullopt;
}

WeightedNorm::WeightedNorm(Matrix weight) : weight_(std::move(weight)) {
  require_symmetric(weight_, "weight");
  llt_.compute(symmetrized(weight_));
  if (llt_.info() != Eigen::Success) {
    throw std::invalid_argument("weight is not positive definite");
  }
}

double WeightedNorm::inner(const Vector& x, const Vector& y) const {
  return x.dot(llt_.solve(y));
}

double WeightedNorm::norm(const Vector& x) const {
  return std::sqrt(std::max(squared_norm(x), 0.0));
}

double weighted_inner(const Vector& x, const Vector& y, const WeightedNorm& w) {
  return w.inner(x, y);
}

Matrix spd_sqrt(const Matrix& m) {
  auto es = spd_eigen(m, "spd_sqrt input");
  return symmetrized(es.eigenvectors() *
                     es.eigenvalues().cwiseSqrt().asDiagonal() *
                     es.eigenvectors().transpose());
}

SpectralData diagonalize_product(const Matrix& c0, const Matrix& b) {
  require_symmetric(b, "B");
  if (b.rows() != c0.rows()) {
    throw std::invalid_argument("C0 and B sizes differ");
  }
  auto c0_es = spd_eigen(c0, "C0");
  const Matrix root = c0_es.eigenvectors() *
                      c0_es.eigenvalues().cwiseSqrt().asDiagonal() *
                      c0_es.eigenvectors().transpose();
  const Matrix root_inv = c0_es.eigenvectors() *
                          c0_es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                          c0_es.eigenvectors().transpose();

  // C0 B is similar to the symmetric PSD matrix C0^{1/2} B C0^{1/2}; its real
  // eigenvalues and a full eigenbasis come from that similarity.
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(root * b * root));
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("eigendecomposition of C0^{1/2} B C0^{1/2} failed");
  }

  const Eigen::Index n = c0.rows();
  SpectralData spec;
  spec.mu.resize(n);
  Matrix w(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {  // Eigen sorts ascending; flip to descending
    spec.mu(i) = es.eigenvalues()(n - 1 - i);
    w.col(i) = es.eigenvectors().col(n - 1 - i);
  }

  const double mu_max = spec.mu(0);
  const double neg_floor = -kRankTol * std::max(mu_max, 0.0) - 1e-300;
  if (spec.mu(n - 1) < neg_floor) {
    throw std::invalid_argument("B is not positive semidefinite");
  }
  if (mu_max > 0.0) {
    const double cutoff = kRankTol * mu_max;
    spec.rank_k = (spec.mu.array() > cutoff).count();
  } else {
    spec.rank_k = 0;
  }
  for (Eigen::Index i = spec.rank_k; i < n; ++i) spec.mu(i) = 0.0;

  spec.S = root * w;
  spec.S_inv = w.transpose() * root_inv;
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = 1.0 / spec.S.col(j).norm();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = spec.S(i, j);
      if (std::abs(e) > 1e-12 * spec.S.col(j).norm()) {
        if (e < 0.0) d = -d;
        break;
      }
    }
    spec.S.col(j) *= d;
    spec.S_inv.row(j) /= d;
  }
  return spec;
}

Matrix resolvent(const SpectralData& spec, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("resolvent needs t >= 0");
  const Eigen::ArrayXd factors = 1.0 / (1.0 + t * spec.mu.array());
  return spec.S * factors.matrix().asDiagonal() * spec.S_inv;
}

Matrix precond_cov_power(const SpectralData& spec, double t, double alpha, double p) {
  if (!(t >= 0.0)) throw std::invalid_argument("precond_cov_power needs t >= 0");
  if (!(alpha >= 1.0)) throw std::invalid_argument("precond_cov_power needs alpha >= 1");
  const double at = alpha * t;
  Vector factors(spec.mu.size());
  for (Eigen::Index i = 0; i < spec.mu.size(); ++i) {
    // (1 + at mu)^{-p} via log1p to keep accuracy when at*mu is tiny
    factors(i) = std::exp(-p * std::log1p(at * spec.mu(i)));
  }
  return spec.S * factors.asDiagonal() * spec.S_inv;
}

Matrix pseudo_inverse_gamma(const SpectralData& spec, const Matrix& c0) {
  Vector dplus = Vector::Zero(spec.mu.size());
  for (Eigen::Index i = 0; i < spec.rank_k; ++i) dplus(i) = 1.0 / spec.mu(i);
  return spec.S * dplus.asDiagonal() * spec.S_inv * c0;
}

Vector gamma_projection(const Vector& y, const Matrix& a, const Matrix& gamma) {
  if (a.rows() != y.size() || gamma.rows() != y.size()) {
    throw std::invalid_argument("gamma_projection shape mismatch");
  }
  Eigen::LLT<Matrix> llt(symmetrized(gamma));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("Gamma is not positive definite");
  }
  // Whiten with Gamma = L L^T, then the problem is a plain least squares fit.
  const auto l = llt.matrixL();
  const Matrix wa = l.solve(a);
  const Vector wy = l.solve(y);
  const Vector x = wa.completeOrthogonalDecomposition().solve(wy);
  return a * x;
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
}

}  // namespace eki
