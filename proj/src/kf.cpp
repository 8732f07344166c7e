#include "kfcov/kf.hpp"

#include "kfcov/cone.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace kfcov {

namespace {

constexpr double kFactorCutoffRel = 1e-14;
constexpr double kConditionWarnThreshold = 1e14;

Matrix inverse_checked(const Matrix& m, const char* who) {
  Eigen::FullPivLU<Matrix> lu(m);
  if (!lu.isInvertible()) throw contract_error(std::string(who) + ": singular propagator");
  return lu.inverse();
}

// Rank factor of a PSD matrix from its eigendecomposition; eigenvalues below
// max(sigma_1, 0) * 1e-14 are numerical noise and dropped.
Matrix psd_factor(const CovarianceMatrix& p) {
  const EigenDecomposition dec = sym_eig(p);
  const double cutoff = std::max(dec.eigenvalues(0), 0.0) * kFactorCutoffRel;
  Eigen::Index r = 0;
  while (r < dec.eigenvalues.size() && dec.eigenvalues(r) > cutoff) ++r;
  Matrix x(p.dim(), r);
  for (Eigen::Index i = 0; i < r; ++i)
    x.col(i) = dec.eigenvectors.col(i) * std::sqrt(dec.eigenvalues(i));
  return x;
}

double condition_number(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  return smin > 0.0 ? smax / smin : INFINITY;
}

}  // namespace

CovarianceMatrix obs_precision(const Matrix& h, const CovarianceMatrix& r) {
  if (h.rows() != r.dim()) throw contract_error("obs_precision: H/R dimension mismatch");
  Eigen::LLT<Matrix> llt(r.matrix());
  if (llt.info() != Eigen::Success) throw contract_error("obs_precision: R not positive definite");
  // Omega = (L^{-1} H)^T (L^{-1} H) with R = L L^T.
  const Matrix w = llt.matrixL().solve(h);
  return CovarianceMatrix::from_psd_construction(w.transpose() * w);
}

Matrix analysis_update_factor(const Matrix& x, const Matrix& omega) {
  if (x.rows() != omega.rows()) throw contract_error("analysis_update: dimension mismatch");
  if (x.cols() == 0) return x;
  const Matrix s = Matrix::Identity(x.cols(), x.cols()) + x.transpose() * omega * x;
  Eigen::LLT<Matrix> llt(0.5 * (s + s.transpose()));
  if (llt.info() != Eigen::Success)
    throw numerical_error("analysis_update: I + X^T Omega X not positive definite");
  // Xa = X L^{-T}, so that Xa Xa^T = X S^{-1} X^T.
  return llt.matrixL().solve(x.transpose()).transpose();
}

CovarianceMatrix analysis_update(const CovarianceMatrix& p, const CovarianceMatrix& omega) {
  if (p.dim() != omega.dim()) throw contract_error("analysis_update: dimension mismatch");
  if (omega.matrix().norm() == 0.0) return p;
  const Matrix xa = analysis_update_factor(psd_factor(p), omega.matrix());
  return CovarianceMatrix::from_psd_construction(xa * xa.transpose());
}

CovarianceMatrix forecast_step(const CovarianceMatrix& pa, const Matrix& m, const CovarianceMatrix& q) {
  if (m.rows() != m.cols() || m.cols() != pa.dim() || q.dim() != pa.dim())
    throw contract_error("forecast_step: dimension mismatch");
  return CovarianceMatrix::from_psd_construction(m * pa.matrix() * m.transpose() + q.matrix());
}

CovarianceMatrix riccati_step(const CovarianceMatrix& p, const ModelStep& step) {
  const CovarianceMatrix omega = obs_precision(step.observation, step.obs_covariance);
  return forecast_step(analysis_update(p, omega), step.propagator, step.model_noise);
}

CovarianceMatrix information_step(const CovarianceMatrix& pinv, const Matrix& m,
                                  const CovarianceMatrix& omega) {
  if (m.rows() != pinv.dim() || omega.dim() != pinv.dim())
    throw contract_error("information_step: dimension mismatch");
  const Matrix minv = inverse_checked(m, "information_step");
  return CovarianceMatrix::from_psd_construction(minv.transpose() * (pinv.matrix() + omega.matrix()) * minv);
}

Aggregates accumulate(const Aggregates& agg, const ModelStep& step) {
  if (step.state_dim() != agg.resolvent.rows()) throw contract_error("accumulate: dimension mismatch");
  const Matrix omega = obs_precision(step.observation, step.obs_covariance).matrix();
  const Matrix minv = inverse_checked(step.propagator, "accumulate");
  Aggregates next;
  next.resolvent = step.propagator * agg.resolvent;
  next.information = minv.transpose() * (agg.information + omega) * minv;
  next.information = 0.5 * (next.information + next.information.transpose());
  next.pulled_back_information =
      agg.pulled_back_information + agg.resolvent.transpose() * omega * agg.resolvent;
  next.pulled_back_information =
      0.5 * (next.pulled_back_information + next.pulled_back_information.transpose());
  next.controllability =
      step.propagator * agg.controllability * step.propagator.transpose() + step.model_noise.matrix();
  next.controllability = 0.5 * (next.controllability + next.controllability.transpose());
  next.step_index = agg.step_index + 1;
  return next;
}

ClosedFormResult closed_form_covariance(const CovarianceMatrix& p0, const Aggregates& agg) {
  if (p0.dim() != agg.resolvent.rows()) throw contract_error("closed_form_covariance: dimension mismatch");
  const Eigen::Index n = p0.dim();
  const Matrix b = Matrix::Identity(n, n) + agg.pulled_back_information * p0.matrix();
  ClosedFormResult result;
  result.condition = condition_number(b);
  result.conditioning_warning = !(result.condition < kConditionWarnThreshold);
  const Matrix inner = b.partialPivLu().solve(agg.resolvent.transpose());
  const Matrix p = agg.resolvent * p0.matrix() * inner;
  result.covariance = CovarianceMatrix::from_psd_construction(p);
  return result;
}

ClosedFormResult closed_form_covariance_gamma(const CovarianceMatrix& p0, const Aggregates& agg) {
  if (p0.dim() != agg.resolvent.rows()) throw contract_error("closed_form_covariance: dimension mismatch");
  const Eigen::Index n = p0.dim();
  const Matrix f = agg.resolvent * p0.matrix() * agg.resolvent.transpose();
  const Matrix b = Matrix::Identity(n, n) + agg.information * f;
  ClosedFormResult result;
  result.condition = condition_number(b);
  result.conditioning_warning = !(result.condition < kConditionWarnThreshold);
  // P = F (I + Gamma F)^{-1}, evaluated as a transposed solve.
  const Matrix p = b.transpose().partialPivLu().solve(f.transpose()).transpose();
  result.covariance = CovarianceMatrix::from_psd_construction(p);
  return result;
}

FilterState::FilterState(Matrix factor) : factor_(std::move(factor)) {
  if (factor_.rows() < 1) throw contract_error("FilterState: empty factor");
}

FilterState FilterState::from_covariance(const CovarianceMatrix& p) {
  return FilterState(psd_factor(p));
}

Matrix FilterState::advance(const ModelStep& step) {
  if (step.state_dim() != dim()) throw contract_error("FilterState: dimension mismatch");
  const Matrix omega = obs_precision(step.observation, step.obs_covariance).matrix();
  Matrix xa = analysis_update_factor(factor_, omega);
  factor_ = step.propagator * xa;
  if (step.model_noise.matrix().norm() > 0.0) {
    const Matrix qf = psd_factor(step.model_noise);
    Matrix widened(dim(), factor_.cols() + qf.cols());
    widened << factor_, qf;
    if (widened.cols() > dim()) {
      // Re-compress: X V has the same Gram matrix for orthogonal V.
      Eigen::JacobiSVD<Matrix> svd(widened, Eigen::ComputeThinU);
      factor_ = svd.matrixU() * svd.singularValues().head(dim()).asDiagonal();
    } else {
      factor_ = std::move(widened);
    }
  }
  if (!factor_.allFinite()) throw numerical_error("FilterState: non-finite covariance factor");
  return xa;
}

Vector FilterState::covariance_eigenvalues() const {
  Eigen::JacobiSVD<Matrix> svd(factor_);
  Vector eig = Vector::Zero(dim());
  const Eigen::Index r = svd.singularValues().size();
  for (Eigen::Index i = 0; i < r && i < dim(); ++i) {
    const double s = svd.singularValues()(i);
    eig(i) = s * s;
  }
  return eig;
}

}  // namespace kfcov
