#pragma once

#include <Eigen/Dense>
#include <optional>

namespace eki {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Linear observation model y = A u + noise with noise covariance Gamma (SPD).
// u_truth and eps are optional bookkeeping for synthetic problems; when both
// are present they must reproduce y exactly.
struct InverseProblem {
  Matrix A;
  Matrix Gamma;
  Vector y;
  std::optional<Vector> u_truth;
  std::optional<Vector> eps;

  // Throws std::invalid_argument on shape mismatch, non-SPD Gamma, or an
  // inconsistent (u_truth, eps, y) triple.
  void validate() const;

  // A^T Gamma^{-1} A, symmetrized.
  Matrix normal_matrix() const;

  // Realized noise: eps if stored, else y - A u_truth. Empty optional when
  // the problem carries no ground truth.
  std::optional<Vector> realized_noise() const;
};

// Inner product <x, y>_H := <x, H^{-1} y> induced by an SPD weight H.
// Note the inverse: the weight is a covariance, not a metric tensor.
class WeightedNorm {
 public:
  explicit WeightedNorm(Matrix weight);

  const Matrix& weight() const { return weight_; }
  Vector apply_inverse(const Vector& x) const { return llt_.solve(x); }
  Matrix apply_inverse(const Matrix& x) const { return llt_.solve(x); }
  double inner(const Vector& x, const Vector& y) const;
  double squared_norm(const Vector& x) const { return inner(x, x); }
  double norm(const Vector& x) const;

 private:
  Matrix weight_;
  Eigen::LLT<Matrix> llt_;
};

double weighted_inner(const Vector& x, const Vector& y, const WeightedNorm& w);

// Eigenstructure of the product C0 * B for SPD C0 and symmetric PSD B.
// The spectrum is real and nonnegative; mu is sorted descending and exactly
// zero from index rank_k on. Columns of S are unit-norm eigenvectors with
// their first nonzero entry positive.
struct SpectralData {
  Matrix S;
  Matrix S_inv;
  Vector mu;
  Eigen::Index rank_k = 0;
};

// Symmetric positive definite square root via eigendecomposition.
Matrix spd_sqrt(const Matrix& m);

// Diagonalizes C0 * B through the symmetric similarity C0^{1/2} B C0^{1/2}.
// Eigenvalues below 1e-10 * mu_max are clamped to exactly zero; anything
// below -1e-10 * mu_max means B was not PSD and raises.
SpectralData diagonalize_product(const Matrix& c0, const Matrix& b);

// (I + t C0 B)^{-1} = S diag(1/(1 + t mu_i)) S^{-1}, t >= 0.
Matrix resolvent(const SpectralData& spec, double t);

// p-th power of C(t) C0^{-1}: S diag((1 + alpha t mu_i)^{-p}) S^{-1}.
Matrix precond_cov_power(const SpectralData& spec, double t, double alpha, double p);

// One-sided pseudo-inverse of M = A^T Gamma^{-1} A adapted to the C0
// geometry: S D+ S^{-1} C0 with D+ = diag(1/mu_i on the positive part).
// Satisfies M- M M- = M- and M M- M = M but is not symmetric in general,
// so it is not the Moore-Penrose inverse.
Matrix pseudo_inverse_gamma(const SpectralData& spec, const Matrix& c0);

// Gamma-orthogonal projection of y onto ran(A): the closest point of ran(A)
// in the Gamma-weighted norm. Residual satisfies A^T Gamma^{-1}(y - proj) = 0.
Vector gamma_projection(const Vector& y, const Matrix& a, const Matrix& gamma);

// Largest singular value.
double spectral_norm(const Matrix& m);

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace eki
