#include "kfcov/diagnostics.hpp"

#include "kfcov/cone.hpp"
#include "kfcov/kf.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace kfcov {

namespace {

double spectral_scale(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (sym + sym.transpose()), Eigen::EigenvaluesOnly);
  return std::max(std::abs(solver.eigenvalues().maxCoeff()), std::abs(solver.eigenvalues().minCoeff()));
}

double relative_loewner_margin(const Matrix& p, const Matrix& bound) {
  return loewner_margin(p, bound) / std::max(1.0, spectral_scale(bound));
}

}  // namespace

std::vector<DecayFitEntry> eigen_decay_fit(const std::vector<Vector>& eigenvalue_trace,
                                           const Vector& exponents, int n0,
                                           const DecayFitOptions& options) {
  if (eigenvalue_trace.empty()) throw contract_error("eigen_decay_fit: empty trace");
  const int last = static_cast<int>(eigenvalue_trace.size()) - 1;
  const int k_min = std::max(options.k_min, 0);
  const int k_max = options.k_max > 0 ? std::min(options.k_max, last) : last;
  if (k_min >= k_max) throw contract_error("eigen_decay_fit: empty window");
  const Eigen::Index n = eigenvalue_trace.front().size();
  if (exponents.size() != n) throw contract_error("eigen_decay_fit: exponent count mismatch");

  const double sigma1 = std::max(eigenvalue_trace.front()(0), 1e-300);
  const double floor = std::max(options.eigen_floor, sigma1 * options.noise_floor_rel);

  std::vector<DecayFitEntry> table;
  for (Eigen::Index i = n0; i < n; ++i) {
    DecayFitEntry entry;
    entry.index = static_cast<int>(i);
    entry.reference = -2.0 * std::abs(exponents(i));
    // Accumulate the least-squares normal equations over usable points.
    double sk = 0, sy = 0, skk = 0, sky = 0;
    std::vector<std::pair<double, double>> pts;
    for (int k = k_min; k <= k_max; ++k) {
      const double sigma = eigenvalue_trace[static_cast<std::size_t>(k)](i);
      if (!(sigma > floor)) continue;
      const double y = std::log(sigma);
      pts.emplace_back(static_cast<double>(k), y);
      sk += k;
      sy += y;
      skk += static_cast<double>(k) * k;
      sky += k * y;
    }
    entry.points = static_cast<int>(pts.size());
    if (entry.points < options.min_points) {
      entry.truncated = true;
      entry.slope = std::nan("");
      entry.residual_rms = std::nan("");
      table.push_back(entry);
      continue;
    }
    const double denom = entry.points * skk - sk * sk;
    entry.slope = (entry.points * sky - sk * sy) / denom;
    const double intercept = (sy - entry.slope * sk) / entry.points;
    double ss = 0;
    for (const auto& [k, y] : pts) {
      const double r = y - (intercept + entry.slope * k);
      ss += r * r;
    }
    entry.residual_rms = std::sqrt(ss / entry.points);
    table.push_back(entry);
  }
  return table;
}

std::vector<EnvelopeCheckEntry> decay_envelope_check(
    const std::vector<Vector>& eigenvalue_trace,
    const std::vector<std::pair<int, Vector>>& finite_time_exponents, double sigma1_initial, int n0) {
  if (eigenvalue_trace.empty()) throw contract_error("decay_envelope_check: empty trace");
  const Eigen::Index n = eigenvalue_trace.front().size();
  const double log_sigma1 = std::log(std::max(sigma1_initial, 1e-300));
  std::vector<EnvelopeCheckEntry> result;
  for (Eigen::Index i = n0; i < n; ++i) {
    EnvelopeCheckEntry entry;
    entry.index = static_cast<int>(i);
    entry.max_excess_log = -INFINITY;
    for (const auto& [k, lam] : finite_time_exponents) {
      if (k >= static_cast<int>(eigenvalue_trace.size())) break;
      const double sigma = eigenvalue_trace[static_cast<std::size_t>(k)](i);
      if (!(sigma > 0.0)) continue;
      const double excess = std::log(sigma) - (log_sigma1 + 2.0 * lam(i) * k);
      entry.max_excess_log = std::max(entry.max_excess_log, excess);
    }
    result.push_back(entry);
  }
  return result;
}

Matrix blv_projection(const Matrix& p, const Matrix& basis) {
  if (basis.rows() != p.rows()) throw contract_error("blv_projection: dimension mismatch");
  const Matrix gram = basis.transpose() * basis;
  if ((gram - Matrix::Identity(basis.cols(), basis.cols())).norm() > 1e-8)
    throw contract_error("blv_projection: basis not orthonormal");
  return basis.transpose() * p * basis;
}

Vector stable_projection_diag(const Matrix& p, const Matrix& basis, const std::set<int>& stable) {
  Vector out(static_cast<Eigen::Index>(stable.size()));
  Eigen::Index j = 0;
  for (int i : stable) out(j++) = basis.col(i).dot(p * basis.col(i));
  return out;
}

double max_stable_column_norm(const Matrix& p, const Matrix& basis, const std::set<int>& stable) {
  double worst = 0.0;
  for (int i : stable) worst = std::max(worst, (p * basis.col(i)).norm());
  return worst;
}

CovarianceMatrix asymptote_sequence(const Matrix& c_plus, const Matrix& gamma) {
  if (c_plus.rows() != gamma.rows()) throw contract_error("asymptote_sequence: dimension mismatch");
  const Matrix inner = c_plus.transpose() * gamma * c_plus;
  return CovarianceMatrix::from_psd_construction(asymptote_from_projected(c_plus, inner));
}

Matrix asymptote_from_projected(const Matrix& c_plus_k, const Matrix& g_plus_k) {
  Eigen::FullPivLU<Matrix> lu(0.5 * (g_plus_k + g_plus_k.transpose()));
  if (!lu.isInvertible())
    throw numerical_error("asymptote: projected information singular (condition 2 violated)");
  const Matrix s = c_plus_k * lu.inverse() * c_plus_k.transpose();
  return 0.5 * (s + s.transpose());
}

void ProjectedInformation::advance(const Matrix& c_plus_k, const Matrix& omega_k,
                                   const Vector& stretch_log_k) {
  if (c_plus_k.cols() != g_.rows()) throw contract_error("ProjectedInformation: block mismatch");
  Matrix inner = g_ + c_plus_k.transpose() * omega_k * c_plus_k;
  const Vector inv_stretch = (-stretch_log_k.head(g_.rows())).array().exp();
  g_ = inv_stretch.asDiagonal() * inner * inv_stretch.asDiagonal();
  g_ = 0.5 * (g_ + g_.transpose());
}

double ProjectedInformation::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(g_, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

std::vector<double> pair_distance(const std::vector<Matrix>& trace_a, const std::vector<Matrix>& trace_b) {
  if (trace_a.size() != trace_b.size()) throw contract_error("pair_distance: trace length mismatch");
  std::vector<double> out;
  out.reserve(trace_a.size());
  for (std::size_t k = 0; k < trace_a.size(); ++k) {
    if (trace_a[k].rows() != trace_b[k].rows() || trace_a[k].cols() != trace_b[k].cols())
      throw contract_error("pair_distance: dimension mismatch");
    out.push_back((trace_a[k] - trace_b[k]).norm());
  }
  return out;
}

ConditionReport condition_checks(const Matrix& x0, const Matrix& flv_plus, const GinelliResult& clv,
                                 const std::vector<ModelStep>& steps, const SpectrumClassification& cls,
                                 int trace_stride) {
  if (trace_stride < 1) throw contract_error("condition_checks: stride must be >= 1");
  ConditionReport report;
  report.n0 = cls.n0;

  {
    Eigen::JacobiSVD<Matrix> svd(flv_plus.transpose() * x0);
    const double top = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > 1e-10 * std::max(top, 1.0)) ++report.condition1_rank;
    report.condition1_holds = report.condition1_rank == cls.n0;
  }

  // Neutral indices inside the unstable-neutral block.
  std::vector<int> neutral;
  for (int i : cls.neutral_indices)
    if (i < cls.n0) neutral.push_back(i);
  report.condition3_vacuous = neutral.empty();

  const int horizon = std::min<int>(clv.usable_end, static_cast<int>(steps.size()));
  ProjectedInformation projected(cls.n0);
  // Condition 3 accumulators: N_k = C_{+0,0}^T Theta_k C_{+0,0} built from
  // per-step neutral stretches, and the growing-part normalizer.
  const Eigen::Index nn = static_cast<Eigen::Index>(neutral.size());
  Matrix neutral_obs = Matrix::Zero(nn, nn);
  Vector neutral_cum_log = Vector::Zero(nn);   // log diag of Lambda^0_{k:0}
  Vector growing_cum_log = Vector::Zero(nn);   // log diag of the growing part

  for (int k = 0; k < horizon; ++k) {
    const Matrix omega = obs_precision(steps[static_cast<std::size_t>(k)].observation,
                                       steps[static_cast<std::size_t>(k)].obs_covariance)
                             .matrix();
    const Matrix& c = clv.plus_trace[static_cast<std::size_t>(k)];
    if (nn > 0) {
      Matrix cn(c.rows(), nn);
      for (Eigen::Index j = 0; j < nn; ++j) cn.col(j) = c.col(neutral[static_cast<std::size_t>(j)]);
      const Matrix w = cn * neutral_cum_log.array().exp().matrix().asDiagonal();
      neutral_obs += w.transpose() * omega * w;
      for (Eigen::Index j = 0; j < nn; ++j) {
        const double s = clv.stretch_logs[static_cast<std::size_t>(k)](neutral[static_cast<std::size_t>(j)]);
        neutral_cum_log(j) += s;
        growing_cum_log(j) += std::max(s, 0.0);
      }
    }
    projected.advance(c.leftCols(cls.n0), omega, clv.stretch_logs[static_cast<std::size_t>(k)]);
    const int done = k + 1;
    if (done % trace_stride == 0 || done == horizon) {
      report.condition2_min_eigen.emplace_back(done, projected.min_eigenvalue());
      if (nn > 0) {
        const Vector inv_growth = (-growing_cum_log).array().exp();
        const Matrix phi = inv_growth.asDiagonal() * neutral_obs * inv_growth.asDiagonal();
        Eigen::JacobiSVD<Matrix> svd(phi);
        report.condition3_min_sv.emplace_back(done, svd.singularValues().minCoeff());
      }
    }
  }
  return report;
}

BoundAuditor::BoundAuditor(const CovarianceMatrix& p0, double gamma_condition_limit)
    : free_scaled_(p0.matrix()),
      gamma_(Matrix::Zero(p0.dim(), p0.dim())),
      gamma_condition_limit_(gamma_condition_limit) {
  const double norm = std::max(free_scaled_.norm(), 1e-300);
  free_scaled_ /= norm;
  log_scale_ = std::log(norm);
}

void BoundAuditor::audit(const Matrix& p_k) { audit(p_k, Matrix::Zero(p_k.rows(), p_k.cols())); }

void BoundAuditor::audit(const Matrix& p_k, const Matrix& q_k) {
  BoundAuditRow row;
  row.k = k_;

  row.margin_lower = relative_loewner_margin(q_k, p_k);

  // Free-forecast arm in scaled space: F_k = exp(log_scale) * free_scaled_.
  const double descale = std::exp(-log_scale_);
  const double f_scale = spectral_scale(free_scaled_);
  if (descale > 0.0) {
    const Matrix diff = free_scaled_ - descale * p_k;
    Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (diff + diff.transpose()), Eigen::EigenvaluesOnly);
    row.margin_free = solver.eigenvalues().minCoeff() / std::max(descale, f_scale);
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(free_scaled_, Eigen::EigenvaluesOnly);
    row.margin_free = solver.eigenvalues().minCoeff() / std::max(f_scale, 1e-300);
  }

  row.gamma_evaluable = false;
  row.margin_gamma = std::nan("");
  if (gamma_alive_ && k_ > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(gamma_);
    const double lo = solver.eigenvalues().minCoeff();
    const double hi = solver.eigenvalues().maxCoeff();
    if (lo > kDefaultRankThreshold && hi / lo < gamma_condition_limit_) {
      // P <= Gamma^{-1} iff L^T P L <= I with Gamma = L L^T; the congruent
      // form avoids inverting the ill-conditioned information matrix.
      Eigen::LLT<Matrix> llt(gamma_);
      if (llt.info() == Eigen::Success) {
        const Matrix l = llt.matrixL();
        const Matrix w = l.transpose() * p_k * l;
        Eigen::SelfAdjointEigenSolver<Matrix> ws(0.5 * (w + w.transpose()), Eigen::EigenvaluesOnly);
        row.gamma_evaluable = true;
        row.margin_gamma = 1.0 - ws.eigenvalues().maxCoeff();
      }
    }
  }
  row.margin_min = row.gamma_evaluable ? std::min(row.margin_free, row.margin_gamma) : row.margin_free;
  rows_.push_back(row);
}

void BoundAuditor::consume(const ModelStep& step) {
  Matrix next = step.propagator * free_scaled_ * step.propagator.transpose();
  const double descale = std::exp(-log_scale_);
  if (descale > 0.0 && step.model_noise.matrix().norm() > 0.0)
    next += descale * step.model_noise.matrix();
  next = 0.5 * (next + next.transpose());
  const double norm = next.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw numerical_error("BoundAuditor: free forecast degenerated");
  free_scaled_ = next / norm;
  log_scale_ += std::log(norm);

  if (gamma_alive_) {
    const Matrix omega = obs_precision(step.observation, step.obs_covariance).matrix();
    Eigen::FullPivLU<Matrix> lu(step.propagator);
    if (!lu.isInvertible()) throw contract_error("BoundAuditor: singular propagator");
    const Matrix minv = lu.inverse();
    gamma_ = minv.transpose() * (gamma_ + omega) * minv;
    gamma_ = 0.5 * (gamma_ + gamma_.transpose());
    if (!gamma_.allFinite() || gamma_.norm() > 1e200) gamma_alive_ = false;
  }
  ++k_;
}

}  // namespace kfcov
