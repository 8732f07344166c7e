#ifndef KFCOV_SYMPLECTIC_HPP
#define KFCOV_SYMPLECTIC_HPP

#include "kfcov/types.hpp"

#include <vector>

namespace kfcov {

// 2n x 2n one-step block of the linear representation of the Riccati
// recurrence. Member of the symplectic group: Z^{-1} = -J Z^T J.
struct SymplecticBlock {
  Matrix z;

  Eigen::Index half_dim() const { return z.rows() / 2; }
  Matrix a() const { return z.topLeftCorner(half_dim(), half_dim()); }
  Matrix b() const { return z.topRightCorner(half_dim(), half_dim()); }
  Matrix c() const { return z.bottomLeftCorner(half_dim(), half_dim()); }
  Matrix d() const { return z.bottomRightCorner(half_dim(), half_dim()); }
};

// Blocks A = M + Q M^{-T} Omega, B = Q M^{-T}, C = M^{-T} Omega, D = M^{-T}.
// With Q = 0 the top-right block vanishes.
SymplecticBlock build_block(const Matrix& m, const CovarianceMatrix& omega, const CovarianceMatrix& q);

// || Z^{-1} + J Z^T J ||_F / ||Z||_F.
double symplectic_identity_residual(const SymplecticBlock& block);

// Homogeneous-coordinate state W = (X; Y) with covariance X Y^{-1}.
struct RatioState {
  Matrix x;
  Matrix y;

  static RatioState seed(const CovarianceMatrix& p0) {
    return {p0.matrix(), Matrix::Identity(p0.dim(), p0.dim())};
  }

  Matrix covariance() const;
};

// Propagates W_{k+1} = Z_k W_k, renormalizing W <- W Y^{-1} every
// recondition_every steps (the ratio X Y^{-1} is invariant under right
// multiplication). Returns the covariance at every step, P_0 first.
std::vector<Matrix> propagate_ratio(const RatioState& w0, const std::vector<SymplecticBlock>& blocks,
                                    int recondition_every = 1);

struct SteinResult {
  Matrix psi;
  double residual = 0.0;   // ||Psi - M^T Psi M - Omega||_F / max(||Psi||_F, 1)
  bool regularized = false;
};

// Solves Psi = M^T Psi M + Omega as the n^2-dimensional linear system
// (I - M^T (x) M^T) vec(Psi) = vec(Omega). When that system is singular
// (unit-modulus eigenvalue products) the complex-regularized ladder
// e^{i eps}, eps in {1e-2, 1e-4, 1e-6}, is used and the limit checked.
SteinResult stein_solve(const Matrix& m, const CovarianceMatrix& omega);

// Theta_k for the autonomous system by direct recurrence
// Theta_{j+1} = M^T Theta_j M + Omega.
Matrix theta_recursion(const Matrix& m, const CovarianceMatrix& omega, int k);

// Theta_k = Psi - (M^k)^T Psi M^k through the Stein solution when the
// direct solve is admissible, falling back to the complex-regularized
// construction, and to the recurrence if the regularized limit does not
// converge.
Matrix autonomous_theta(const Matrix& m, const CovarianceMatrix& omega, int k);

}  // namespace kfcov

#endif  // KFCOV_SYMPLECTIC_HPP
