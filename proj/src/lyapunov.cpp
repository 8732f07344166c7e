#include "kfcov/lyapunov.hpp"

#include "kfcov/rng.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace kfcov {

namespace {

// Householder QR with the R diagonal forced positive, making the
// factorization unique and the log diagonals well-defined.
void qr_positive(const Matrix& z, Matrix& q, Matrix& r) {
  Eigen::HouseholderQR<Matrix> qr(z);
  q = qr.householderQ() * Matrix::Identity(z.rows(), z.cols());
  r = qr.matrixQR().topRows(z.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    if (r(i, i) < 0.0) {
      r.row(i) = -r.row(i);
      q.col(i) = -q.col(i);
    }
    if (r(i, i) == 0.0) throw numerical_error("qr pass: zero diagonal in R");
  }
}

Matrix random_orthonormal(Eigen::Index n, std::uint64_t seed) {
  SeededRng rng(seed);
  Matrix q, r;
  qr_positive(rng.gaussian_matrix(n, n), q, r);
  return q;
}

// Stable argsort by descending value. QR passes order columns by exponent
// only asymptotically; outputs are permuted to the sorted order so the
// ordering contract holds on finite horizons too.
std::vector<Eigen::Index> descending_order(const Vector& v) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(v.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&v](Eigen::Index a, Eigen::Index b) { return v(a) > v(b); });
  return order;
}

Vector permuted(const Vector& v, const std::vector<Eigen::Index>& order) {
  Vector out(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(order[i]);
  return out;
}

Matrix permuted_cols(const Matrix& m, const std::vector<Eigen::Index>& order) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(order[i]);
  return out;
}

void check_square_sequence(const std::vector<Matrix>& propagators) {
  if (propagators.empty()) throw contract_error("qr pass: empty propagator sequence");
  const Eigen::Index n = propagators.front().rows();
  for (const auto& m : propagators)
    if (m.rows() != n || m.cols() != n) throw contract_error("qr pass: inconsistent dimensions");
}

}  // namespace

ForwardQrResult forward_qr_pass(const std::vector<Matrix>& propagators, const QrPassOptions& options) {
  check_square_sequence(propagators);
  const Eigen::Index n = propagators.front().rows();
  const int steps = static_cast<int>(propagators.size());
  const int transient = static_cast<int>(options.transient_fraction * steps);

  ForwardQrResult result;
  Matrix q = random_orthonormal(n, options.seed);
  Matrix r;
  Vector log_sum = Vector::Zero(n);
  for (int k = 0; k < steps; ++k) {
    qr_positive(propagators[k] * q, q, r);
    for (Eigen::Index i = 0; i < n; ++i) log_sum(i) += std::log(r(i, i));
    const int done = k + 1;
    const bool at_stride = options.basis_stride > 0 && done >= transient && done % options.basis_stride == 0;
    const bool requested = std::find(options.basis_checkpoints.begin(), options.basis_checkpoints.end(),
                                     done) != options.basis_checkpoints.end();
    if (at_stride || requested) result.basis_trace.emplace_back(done, q);
    if (options.checkpoint_stride > 0 && done % options.checkpoint_stride == 0)
      result.running_estimates.emplace_back(done, Vector(log_sum / done));
  }
  result.exponents = log_sum / steps;
  result.terminal_basis = q;
  const auto order = descending_order(result.exponents);
  result.exponents = permuted(result.exponents, order);
  result.terminal_basis = permuted_cols(result.terminal_basis, order);
  for (auto& [kk, basis] : result.basis_trace) basis = permuted_cols(basis, order);
  for (auto& [kk, est] : result.running_estimates) est = permuted(est, order);
  return result;
}

AdjointQrResult adjoint_qr_pass(const std::vector<Matrix>& propagators, std::uint64_t seed) {
  check_square_sequence(propagators);
  const Eigen::Index n = propagators.front().rows();
  const int steps = static_cast<int>(propagators.size());
  AdjointQrResult result;
  Matrix q = random_orthonormal(n, seed);
  Matrix r;
  Vector log_sum = Vector::Zero(n);
  for (int k = steps - 1; k >= 0; --k) {
    qr_positive(propagators[k].transpose() * q, q, r);
    for (Eigen::Index i = 0; i < n; ++i) log_sum(i) += std::log(r(i, i));
  }
  result.flv_basis = q;
  result.exponents = log_sum / steps;
  const auto order = descending_order(result.exponents);
  result.exponents = permuted(result.exponents, order);
  result.flv_basis = permuted_cols(result.flv_basis, order);
  return result;
}

FiniteTimeSvd finite_time_svd(const Matrix& resolvent, int k) {
  if (k < 1) throw contract_error("finite_time_svd: k must be >= 1");
  if (resolvent.rows() != resolvent.cols()) throw contract_error("finite_time_svd: not square");
  if (!resolvent.allFinite()) throw numerical_error("finite_time_svd: non-finite resolvent");
  Eigen::JacobiSVD<Matrix> svd(resolvent, Eigen::ComputeFullU | Eigen::ComputeFullV);
  FiniteTimeSvd result;
  result.left = svd.matrixU();
  result.right = svd.matrixV();
  result.singular_values = svd.singularValues();
  result.exponents = Vector(resolvent.rows());
  for (Eigen::Index i = 0; i < resolvent.rows(); ++i) {
    const double s = result.singular_values(i);
    if (s <= 0.0) throw numerical_error("finite_time_svd: vanishing singular value");
    result.exponents(i) = std::log(s) / k;
  }
  return result;
}

std::vector<std::pair<int, Vector>> staged_finite_time_exponents(const std::vector<Matrix>& propagators,
                                                                 int checkpoint_stride) {
  check_square_sequence(propagators);
  if (checkpoint_stride < 1) throw contract_error("staged_finite_time_exponents: stride must be >= 1");
  const Eigen::Index n = propagators.front().rows();
  const int steps = static_cast<int>(propagators.size());

  // M_{k:0} = Q_k (R_k ... R_1) exactly, starting the pass from Q_0 = I.
  // The triangular product is carried as diag(exp(rho)) * t with unit-norm
  // rows of t, so arbitrarily long horizons stay representable.
  Matrix q = Matrix::Identity(n, n);
  Matrix r;
  Matrix t = Matrix::Identity(n, n);
  Vector rho = Vector::Zero(n);
  std::vector<std::pair<int, Vector>> checkpoints;

  for (int k = 0; k < steps; ++k) {
    qr_positive(propagators[k] * q, q, r);
    Matrix next = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i; j < n; ++j) {
        const double w = r(i, j) * std::exp(rho(j) - rho(i));
        if (w != 0.0) next.row(i) += w * t.row(j);
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double norm = next.row(i).norm();
      if (!(norm > 0.0) || !std::isfinite(norm))
        throw numerical_error("staged_finite_time_exponents: degenerate row at step " + std::to_string(k));
      rho(i) += std::log(norm);
      next.row(i) /= norm;
    }
    t = std::move(next);
    const int done = k + 1;
    if (done % checkpoint_stride == 0 || done == steps) {
      // sigma_i(diag(e^rho) t) = e^{rho_i} * theta_i with theta_i inside the
      // singular-value range of the balanced remainder t.
      Eigen::JacobiSVD<Matrix> svd(t);
      Vector exponents(n);
      for (Eigen::Index i = 0; i < n; ++i)
        exponents(i) = (rho(i) + std::log(svd.singularValues()(i))) / done;
      std::sort(exponents.data(), exponents.data() + n, std::greater<double>());
      checkpoints.emplace_back(done, std::move(exponents));
    }
  }
  return checkpoints;
}

GinelliResult ginelli_clv_pass(const std::vector<Matrix>& propagators, const GinelliOptions& options) {
  check_square_sequence(propagators);
  const Eigen::Index n = propagators.front().rows();
  const int steps = static_cast<int>(propagators.size());
  const int forward_transient = static_cast<int>(options.forward_transient_fraction * steps);
  const int usable_end = steps - static_cast<int>(options.backward_transient_fraction * steps);
  if (usable_end <= forward_transient)
    throw contract_error("ginelli_clv_pass: transients leave no usable window");
  const Eigen::Index block = options.plus_block_size > 0 ? options.plus_block_size : n;
  if (block > n) throw contract_error("ginelli_clv_pass: block larger than dimension");

  // Forward sweep, storing the orthonormal bases and R factors.
  std::vector<Matrix> q_trace(static_cast<std::size_t>(steps) + 1);
  std::vector<Matrix> r_trace(static_cast<std::size_t>(steps));
  q_trace[0] = random_orthonormal(n, options.seed);
  Vector log_sum = Vector::Zero(n);
  for (int k = 0; k < steps; ++k) {
    Matrix q, r;
    qr_positive(propagators[k] * q_trace[k], q, r);
    q_trace[k + 1] = std::move(q);
    for (Eigen::Index i = 0; i < n; ++i) log_sum(i) += std::log(r(i, i));
    r_trace[k] = std::move(r);
  }

  // Backward sweep on the upper-triangular coefficients. With
  // C_k = Q_k T_k, solving R_{k+1} Ttilde = T_{k+1} and normalizing columns
  // gives M_{k+1} C_k = C_{k+1} diag(1/colnorm), i.e. the per-step
  // stretches are the reciprocals of the normalization factors.
  GinelliResult result;
  result.exponents = log_sum / steps;
  result.forward_transient = forward_transient;
  result.usable_end = usable_end;
  result.plus_trace.resize(static_cast<std::size_t>(usable_end) + 1);
  result.stretch_logs.resize(static_cast<std::size_t>(usable_end));
  const auto order = descending_order(result.exponents);
  result.exponents = permuted(result.exponents, order);

  Matrix t = Matrix::Identity(n, n);
  for (int k = steps - 1; k >= 0; --k) {
    Matrix solved = r_trace[k].triangularView<Eigen::Upper>().solve(t);
    Vector stretch_log(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double norm = solved.col(i).norm();
      if (!(norm > 0.0) || !std::isfinite(norm))
        throw numerical_error("ginelli_clv_pass: singular coefficient column at step " + std::to_string(k));
      solved.col(i) /= norm;
      stretch_log(i) = -std::log(norm);
    }
    t = std::move(solved);
    if (k < usable_end) result.stretch_logs[k] = permuted(stretch_log, order);
    if (k <= usable_end) {
      const Matrix c = permuted_cols(q_trace[k] * t, order);
      result.plus_trace[k] = c.leftCols(block);
      if (options.full_basis_stride > 0 && k >= forward_transient && k % options.full_basis_stride == 0)
        result.full_basis_trace.emplace_back(k, c);
    }
  }
  std::reverse(result.full_basis_trace.begin(), result.full_basis_trace.end());
  return result;
}

SpectrumClassification classify_spectrum(const Vector& exponents, double neutral_tol) {
  if (neutral_tol < 0.0) throw contract_error("classify_spectrum: negative tolerance");
  for (Eigen::Index i = 0; i + 1 < exponents.size(); ++i)
    if (exponents(i) < exponents(i + 1)) throw contract_error("classify_spectrum: exponents not sorted");
  SpectrumClassification cls;
  cls.neutral_tolerance = neutral_tol;
  cls.min_gap = INFINITY;
  for (Eigen::Index i = 0; i < exponents.size(); ++i) {
    if (exponents(i) > -neutral_tol) ++cls.n0;
    if (std::abs(exponents(i)) <= neutral_tol) cls.neutral_indices.insert(static_cast<int>(i));
    if (exponents(i) < -neutral_tol) cls.stable_indices.insert(static_cast<int>(i));
    if (i + 1 < exponents.size()) cls.min_gap = std::min(cls.min_gap, exponents(i) - exponents(i + 1));
  }
  cls.degenerate_flag = cls.min_gap < 1e-4;
  return cls;
}

}  // namespace kfcov
