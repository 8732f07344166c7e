#include "kfcov/cone.hpp"

#include "kfcov/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace kfcov {

namespace {

void check_finite(const Matrix& a, const char* who) {
  if (!a.allFinite()) throw contract_error(std::string(who) + ": non-finite entries");
}

EigenDecomposition sorted_eig(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw numerical_error("sym_eig: eigensolver failed");
  const Eigen::Index n = sym.rows();
  EigenDecomposition dec;
  dec.eigenvalues = Vector(n);
  dec.eigenvectors = Matrix(n, n);
  // Eigen returns ascending order.
  for (Eigen::Index i = 0; i < n; ++i) {
    dec.eigenvalues(i) = solver.eigenvalues()(n - 1 - i);
    dec.eigenvectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }
  return dec;
}

}  // namespace

CovarianceMatrix::CovarianceMatrix(const Matrix& a) {
  if (a.rows() != a.cols()) throw contract_error("CovarianceMatrix: not square");
  if (a.rows() == 0) throw contract_error("CovarianceMatrix: empty");
  check_finite(a, "CovarianceMatrix");
  const double scale = a.norm();
  const double asym = (a - a.transpose()).norm();
  if (asym > kSymmetryRelTol * std::max(scale, 1e-300) && asym > 1e-300)
    throw contract_error("CovarianceMatrix: asymmetry " + std::to_string(asym / std::max(scale, 1e-300)) +
                         " exceeds relative tolerance");
  m_ = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m_, Eigen::EigenvaluesOnly);
  const double lo = solver.eigenvalues().minCoeff();
  const double hi = solver.eigenvalues().maxCoeff();
  if (lo < -kPsdRelTol * std::max(hi, 1.0))
    throw contract_error("CovarianceMatrix: smallest eigenvalue " + std::to_string(lo) + " below PSD tolerance");
}

CovarianceMatrix CovarianceMatrix::from_psd_construction(const Matrix& a) {
  if (a.rows() != a.cols()) throw contract_error("CovarianceMatrix: not square");
  check_finite(a, "CovarianceMatrix");
  CovarianceMatrix c;
  c.m_ = 0.5 * (a + a.transpose());
  return c;
}

EigenDecomposition sym_eig(const CovarianceMatrix& a) { return sorted_eig(a.matrix()); }

EigenDecomposition sym_eig(const Matrix& a) {
  if (a.rows() != a.cols()) throw contract_error("sym_eig: not square");
  check_finite(a, "sym_eig");
  const double asym = (a - a.transpose()).norm();
  if (asym > 1e-8 * std::max(a.norm(), 1.0))
    throw contract_error("sym_eig: input asymmetric beyond tolerance");
  return sorted_eig(0.5 * (a + a.transpose()));
}

bool loewner_leq(const CovarianceMatrix& a, const CovarianceMatrix& b, double tol) {
  if (a.dim() != b.dim()) throw contract_error("loewner_leq: dimension mismatch");
  return loewner_margin(a.matrix(), b.matrix()) >= -tol;
}

double loewner_margin(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw contract_error("loewner_margin: dimension mismatch");
  const Matrix diff = 0.5 * ((b - a) + (b - a).transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(diff, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

int numerical_rank(const Matrix& symmetric_psd, double threshold) {
  if (threshold <= 0.0) throw contract_error("numerical_rank: threshold must be positive");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (symmetric_psd + symmetric_psd.transpose()),
                                               Eigen::EigenvaluesOnly);
  int count = 0;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i)
    if (solver.eigenvalues()(i) > threshold) ++count;
  return count;
}

int numerical_rank(const CovarianceMatrix& a, double threshold) {
  return numerical_rank(a.matrix(), threshold);
}

Matrix random_spd_factor(Eigen::Index n, Eigen::Index rank, std::uint64_t seed) {
  if (rank < 1 || rank > n) throw contract_error("random_spd: rank out of range");
  SeededRng rng(seed);
  return rng.gaussian_matrix(n, rank);
}

CovarianceMatrix random_spd(Eigen::Index n, Eigen::Index rank, std::uint64_t seed) {
  const Matrix x = random_spd_factor(n, rank, seed);
  return CovarianceMatrix::from_psd_construction(x * x.transpose());
}

}  // namespace kfcov
