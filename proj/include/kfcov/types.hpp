#ifndef KFCOV_TYPES_HPP
#define KFCOV_TYPES_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace kfcov {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Thrown when an argument violates an operation's contract (bad dimensions,
// non-symmetric input, singular observation covariance, ...).
class contract_error : public std::invalid_argument {
 public:
  explicit contract_error(const std::string& what) : std::invalid_argument(what) {}
};

// Thrown when a computation degrades beyond repair (divergence, singular
// triangular factor, non-finite accumulation).
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

constexpr double kSymmetryRelTol = 1e-12;
constexpr double kPsdRelTol = 1e-10;
constexpr double kDefaultRankThreshold = 1e-10;

// Symmetric positive semi-definite matrix. Construction symmetrizes the
// input as (A + A^T)/2 and validates:
//   * relative Frobenius asymmetry <= 1e-12,
//   * smallest eigenvalue >= -1e-10 * max(largest eigenvalue, 1).
class CovarianceMatrix {
 public:
  CovarianceMatrix() = default;

  explicit CovarianceMatrix(const Matrix& a);

  // Skips the eigenvalue check for matrices that are PSD by construction
  // (X X^T products, solver outputs already in symmetric form). Still
  // symmetrizes and validates shape.
  static CovarianceMatrix from_psd_construction(const Matrix& a);

  static CovarianceMatrix zero(Eigen::Index n) { return from_psd_construction(Matrix::Zero(n, n)); }
  static CovarianceMatrix identity(Eigen::Index n) { return from_psd_construction(Matrix::Identity(n, n)); }

  const Matrix& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }

  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  Matrix m_;
};

// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
// descending order and orthonormal eigenvector columns.
struct EigenDecomposition {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns, orthonormal

  Matrix reconstruct() const {
    return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
  }
};

inline double frobenius(const Matrix& a) { return a.norm(); }

inline double relative_frobenius_distance(const Matrix& a, const Matrix& b, double floor = 1e-300) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

}  // namespace kfcov

#endif  // KFCOV_TYPES_HPP
