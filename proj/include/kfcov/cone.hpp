#ifndef KFCOV_CONE_HPP
#define KFCOV_CONE_HPP

#include "kfcov/types.hpp"

#include <cstdint>

namespace kfcov {

// Eigendecomposition of a symmetric matrix; eigenvalues descending,
// eigenvectors orthonormal. Throws contract_error if the input is
// asymmetric beyond the CovarianceMatrix tolerance.
EigenDecomposition sym_eig(const CovarianceMatrix& a);

// Same, for plain symmetric matrices that need not be PSD (differences of
// covariances, projected blocks). Symmetrizes as (A+A^T)/2 first.
EigenDecomposition sym_eig(const Matrix& a);

// Loewner partial order: true iff the smallest eigenvalue of (B - A) is
// >= -tol. Comparison is by eigenvalue rather than Cholesky success so
// near-singular cases report a signed margin.
bool loewner_leq(const CovarianceMatrix& a, const CovarianceMatrix& b, double tol);

// Signed margin of the comparison A <= B: smallest eigenvalue of B - A.
double loewner_margin(const Matrix& a, const Matrix& b);

// Count of eigenvalues strictly greater than threshold.
int numerical_rank(const CovarianceMatrix& a, double threshold = kDefaultRankThreshold);
int numerical_rank(const Matrix& symmetric_psd, double threshold = kDefaultRankThreshold);

// X X^T with X an n-by-rank matrix of iid standard normal entries.
CovarianceMatrix random_spd(Eigen::Index n, Eigen::Index rank, std::uint64_t seed);

// Gaussian factor used by random_spd; exposed so filters can seed low-rank
// initial conditions from the factor directly.
Matrix random_spd_factor(Eigen::Index n, Eigen::Index rank, std::uint64_t seed);

}  // namespace kfcov

#endif  // KFCOV_CONE_HPP
