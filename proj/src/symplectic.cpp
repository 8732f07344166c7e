#include "kfcov/symplectic.hpp"

#include <Eigen/LU>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <complex>
#include <string>

namespace kfcov {

namespace {

Matrix symplectic_j(Eigen::Index n) {
  Matrix j = Matrix::Zero(2 * n, 2 * n);
  j.topRightCorner(n, n) = Matrix::Identity(n, n);
  j.bottomLeftCorner(n, n) = -Matrix::Identity(n, n);
  return j;
}

double stein_residual(const Matrix& psi, const Matrix& m, const Matrix& omega) {
  return (psi - m.transpose() * psi * m - omega).norm() / std::max(psi.norm(), 1.0);
}

}  // namespace

SymplecticBlock build_block(const Matrix& m, const CovarianceMatrix& omega, const CovarianceMatrix& q) {
  const Eigen::Index n = m.rows();
  if (m.cols() != n || omega.dim() != n || q.dim() != n)
    throw contract_error("build_block: dimension mismatch");
  Eigen::FullPivLU<Matrix> lu(m);
  if (!lu.isInvertible()) throw contract_error("build_block: singular propagator");
  const Matrix minv_t = lu.inverse().transpose();
  SymplecticBlock block;
  block.z = Matrix::Zero(2 * n, 2 * n);
  block.z.topLeftCorner(n, n) = m + q.matrix() * minv_t * omega.matrix();
  block.z.topRightCorner(n, n) = q.matrix() * minv_t;
  block.z.bottomLeftCorner(n, n) = minv_t * omega.matrix();
  block.z.bottomRightCorner(n, n) = minv_t;
  return block;
}

double symplectic_identity_residual(const SymplecticBlock& block) {
  const Eigen::Index n = block.half_dim();
  const Matrix j = symplectic_j(n);
  const Matrix zinv = block.z.partialPivLu().inverse();
  return (zinv + j * block.z.transpose() * j).norm() / block.z.norm();
}

Matrix RatioState::covariance() const {
  Eigen::FullPivLU<Matrix> lu(y);
  if (!lu.isInvertible()) throw numerical_error("RatioState: Y numerically singular");
  const Matrix p = x * lu.inverse();
  return 0.5 * (p + p.transpose());
}

std::vector<Matrix> propagate_ratio(const RatioState& w0, const std::vector<SymplecticBlock>& blocks,
                                    int recondition_every) {
  if (recondition_every < 1) throw contract_error("propagate_ratio: recondition_every must be >= 1");
  RatioState w = w0;
  std::vector<Matrix> trace;
  trace.reserve(blocks.size() + 1);
  trace.push_back(w.covariance());
  int since_recondition = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& z = blocks[k];
    if (z.half_dim() != w.x.rows()) throw contract_error("propagate_ratio: dimension mismatch");
    const Matrix xn = z.a() * w.x + z.b() * w.y;
    const Matrix yn = z.c() * w.x + z.d() * w.y;
    w.x = xn;
    w.y = yn;
    if (!w.x.allFinite() || !w.y.allFinite())
      throw numerical_error("propagate_ratio: non-finite state at step " + std::to_string(k + 1));
    if (++since_recondition >= recondition_every) {
      Eigen::FullPivLU<Matrix> lu(w.y);
      if (!lu.isInvertible())
        throw numerical_error("propagate_ratio: Y singular at step " + std::to_string(k + 1));
      const Matrix yinv = lu.inverse();
      w.x = w.x * yinv;
      w.y = Matrix::Identity(w.y.rows(), w.y.cols());
      since_recondition = 0;
    }
    trace.push_back(w.covariance());
  }
  return trace;
}

SteinResult stein_solve(const Matrix& m, const CovarianceMatrix& omega) {
  const Eigen::Index n = m.rows();
  if (m.cols() != n || omega.dim() != n) throw contract_error("stein_solve: dimension mismatch");
  const Matrix kron = Eigen::kroneckerProduct(m.transpose(), m.transpose());
  const Matrix system = Matrix::Identity(n * n, n * n) - kron;
  const Eigen::Map<const Vector> rhs(omega.matrix().data(), n * n);

  SteinResult result;
  Eigen::FullPivLU<Matrix> lu(system);
  if (lu.isInvertible()) {
    const Vector solution = lu.solve(rhs);
    result.psi = Eigen::Map<const Matrix>(solution.data(), n, n);
    result.psi = 0.5 * (result.psi + result.psi.transpose());
    result.residual = stein_residual(result.psi, m, omega.matrix());
    if (result.residual <= 1e-8) return result;
  }

  // Regularized ladder: solve (e^{i eps} I - M^T (x) M^T) vec(Psi) = vec(Omega)
  // over shrinking eps and check that the real parts converge.
  using ComplexMatrix = Eigen::MatrixXcd;
  using ComplexVector = Eigen::VectorXcd;
  const double ladder[] = {1e-2, 1e-4, 1e-6};
  Matrix previous;
  Matrix current;
  double step_change = INFINITY;
  for (double eps : ladder) {
    const std::complex<double> phase = std::exp(std::complex<double>(0.0, eps));
    ComplexMatrix reg = -kron.cast<std::complex<double>>();
    reg.diagonal().array() += phase;
    const ComplexVector sol = reg.partialPivLu().solve(rhs.cast<std::complex<double>>());
    ComplexMatrix psi_eps = Eigen::Map<const ComplexMatrix>(sol.data(), n, n);
    previous = current;
    current = psi_eps.real();
    if (previous.size() > 0) step_change = (current - previous).norm() / std::max(current.norm(), 1.0);
  }
  result.psi = 0.5 * (current + current.transpose());
  result.regularized = true;
  result.residual = stein_residual(result.psi, m, omega.matrix());
  if (!std::isfinite(step_change) || step_change > 1e-2)
    throw numerical_error("stein_solve: regularized ladder did not converge (change " +
                          std::to_string(step_change) + ")");
  return result;
}

Matrix theta_recursion(const Matrix& m, const CovarianceMatrix& omega, int k) {
  if (k < 0) throw contract_error("theta_recursion: negative step count");
  Matrix theta = Matrix::Zero(m.rows(), m.cols());
  for (int j = 0; j < k; ++j) {
    theta = m.transpose() * theta * m + omega.matrix();
    theta = 0.5 * (theta + theta.transpose());
  }
  return theta;
}

Matrix autonomous_theta(const Matrix& m, const CovarianceMatrix& omega, int k) {
  if (k == 0) return Matrix::Zero(m.rows(), m.cols());
  try {
    const SteinResult stein = stein_solve(m, omega);
    if (stein.residual <= 1e-8) {
      Matrix mk = Matrix::Identity(m.rows(), m.cols());
      for (int j = 0; j < k; ++j) mk = m * mk;
      Matrix theta = stein.psi - mk.transpose() * stein.psi * mk;
      return 0.5 * (theta + theta.transpose());
    }
  } catch (const numerical_error&) {
    // fall through to the recurrence
  }
  return theta_recursion(m, omega, k);
}

}  // namespace kfcov
