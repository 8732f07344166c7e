#ifndef KFCOV_DIAGNOSTICS_HPP
#define KFCOV_DIAGNOSTICS_HPP

#include "kfcov/lyapunov.hpp"
#include "kfcov/model.hpp"
#include "kfcov/types.hpp"

#include <optional>
#include <set>
#include <utility>
#include <vector>

namespace kfcov {

struct DecayFitOptions {
  int k_min = 0;
  int k_max = 0;            // inclusive; 0 means the end of the trace
  double eigen_floor = 1e-280;
  // Fit floor relative to the initial top eigenvalue; points below it sit in
  // eigen-solver noise and are excluded.
  double noise_floor_rel = 1e-26;
  int min_points = 20;
};

struct DecayFitEntry {
  int index = 0;        // 0-based eigenvalue index
  double slope = 0.0;   // least-squares slope of ln sigma_i^k vs k
  double residual_rms = 0.0;
  double reference = 0.0;  // -2 |lambda_i|
  int points = 0;
  bool truncated = false;  // too few usable points for a fit
};

// Least-squares decay slopes of the covariance eigenvalue trace for indices
// beyond n0, with the stable Lyapunov exponents as reference rates.
std::vector<DecayFitEntry> eigen_decay_fit(const std::vector<Vector>& eigenvalue_trace,
                                           const Vector& exponents, int n0,
                                           const DecayFitOptions& options);

struct EnvelopeCheckEntry {
  int index = 0;
  // max over checkpoints of ln sigma_i^k - (ln sigma_1^0 + 2 lambda_i^k k);
  // nonpositive when the finite-time envelope holds.
  double max_excess_log = 0.0;
};

// Pointwise finite-time envelope audit of the eigenvalue trace against
// staged finite-time exponents.
std::vector<EnvelopeCheckEntry> decay_envelope_check(
    const std::vector<Vector>& eigenvalue_trace,
    const std::vector<std::pair<int, Vector>>& finite_time_exponents, double sigma1_initial, int n0);

// U^T P U for an orthonormal basis U; the diagonal drives collapse plots.
Matrix blv_projection(const Matrix& p, const Matrix& basis);

// Quadratic forms u_i^T P u_i over the stable basis columns.
Vector stable_projection_diag(const Matrix& p, const Matrix& basis, const std::set<int>& stable);

// max_i ||P u_i|| over stable basis columns (strong-collapse measurement).
double max_stable_column_norm(const Matrix& p, const Matrix& basis, const std::set<int>& stable);

// S_k = C_+ (C_+^T Gamma C_+)^{-1} C_+^T from a dense information matrix.
// Throws numerical_error when the projected information is singular
// (condition-2 violation).
CovarianceMatrix asymptote_sequence(const Matrix& c_plus, const Matrix& gamma);

// Carries G_k = C_{+,k}^T Gamma_k C_{+,k} through the covariant recursion
//   G_{k+1} = L^{-T} (G_k + C_{+,k}^T Omega_k C_{+,k}) L^{-1},
// L = diag(per-step stretches). Stays bounded where the dense Gamma_k
// overflows, so asymptote and observability traces reach arbitrary k.
class ProjectedInformation {
 public:
  explicit ProjectedInformation(Eigen::Index block)
      : g_(Matrix::Zero(block, block)) {}

  void advance(const Matrix& c_plus_k, const Matrix& omega_k, const Vector& stretch_log_k);

  const Matrix& value() const { return g_; }
  double min_eigenvalue() const;

 private:
  Matrix g_;
};

// S_k assembled from the projected information block.
Matrix asymptote_from_projected(const Matrix& c_plus_k, const Matrix& g_plus_k);

// ||A_k - B_k||_F per step.
std::vector<double> pair_distance(const std::vector<Matrix>& trace_a, const std::vector<Matrix>& trace_b);

struct ConditionReport {
  int n0 = 0;
  int condition1_rank = 0;  // rank of V_{+,0}^T X_0, holds iff == n0
  bool condition1_holds = false;
  std::vector<std::pair<int, double>> condition2_min_eigen;
  std::vector<std::pair<int, double>> condition3_min_sv;
  bool condition3_vacuous = true;  // no neutral modes detected
};

// Conditions on the initial covariance factor and the observation stream:
//   1. full-rank projection of X_0 onto the unstable-neutral forward vectors,
//   2. uniform observability of the unstable-neutral covariant directions,
//   3. divergence of the neutral-mode observability form Phi_k.
ConditionReport condition_checks(const Matrix& x0, const Matrix& flv_plus, const GinelliResult& clv,
                                 const std::vector<ModelStep>& steps, const SpectrumClassification& cls,
                                 int trace_stride);

struct BoundAuditRow {
  long k = 0;
  double margin_lower = 0.0;  // Q_k <= P_k
  double margin_free = 0.0;   // P_k <= M_{k:0} P_0 M_{k:0}^T + Xi_k
  bool gamma_evaluable = false;
  // P_k <= Gamma_k^{-1}, measured as the smallest eigenvalue of
  // I - L^T P_k L with Gamma_k = L L^T (congruent, inversion-free form).
  double margin_gamma = 0.0;
  double margin_min = 0.0;    // combined bound, both arms
};

// Per-step Loewner audits of the covariance bounds. Margins are smallest
// eigenvalues of (bound - P) normalized by max(1, ||bound||_2); failures are
// data, reported with their margins. The free forecast is carried in scaled
// form so the audit continues past the range where it overflows; the
// information-matrix arm stops once Gamma_k is no longer numerically
// invertible.
class BoundAuditor {
 public:
  explicit BoundAuditor(const CovarianceMatrix& p0, double gamma_condition_limit = 1e12);

  // Audit P_k at the auditor's current index, then consume the step that
  // advances k -> k+1.
  void audit(const Matrix& p_k, const Matrix& q_k);
  void audit(const Matrix& p_k);
  void consume(const ModelStep& step);

  const std::vector<BoundAuditRow>& rows() const { return rows_; }

 private:
  Matrix free_scaled_;   // F_k / exp(log_scale_)
  double log_scale_ = 0.0;
  Matrix gamma_;
  bool gamma_alive_ = true;
  double gamma_condition_limit_;
  long k_ = 0;
  std::vector<BoundAuditRow> rows_;
};

}  // namespace kfcov

#endif  // KFCOV_DIAGNOSTICS_HPP
