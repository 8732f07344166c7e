#ifndef KFCOV_KF_HPP
#define KFCOV_KF_HPP

#include "kfcov/model.hpp"
#include "kfcov/types.hpp"

namespace kfcov {

// Omega = H^T R^{-1} H, the observation precision pulled into state space.
CovarianceMatrix obs_precision(const Matrix& h, const CovarianceMatrix& r);

// P^a = (I + P Omega)^{-1} P, evaluated through the symmetric rank-factored
// form X (I + X^T Omega X)^{-1} X^T with P = X X^T. The inner solve has the
// size of rank(P) and keeps the result symmetric PSD by construction.
CovarianceMatrix analysis_update(const CovarianceMatrix& p, const CovarianceMatrix& omega);

// Factor form of the update: returns Xa with P^a = Xa Xa^T.
Matrix analysis_update_factor(const Matrix& x, const Matrix& omega);

// M Pa M^T + Q.
CovarianceMatrix forecast_step(const CovarianceMatrix& pa, const Matrix& m, const CovarianceMatrix& q);

// One forecast-covariance step P_{k+1} = M (I + P Omega)^{-1} P M^T + Q,
// composed exactly of analysis_update followed by forecast_step.
CovarianceMatrix riccati_step(const CovarianceMatrix& p, const ModelStep& step);

// Information filter: Pinv_{k+1} = M^{-T} (Pinv + Omega) M^{-1}. Full-rank
// covariances only.
CovarianceMatrix information_step(const CovarianceMatrix& pinv, const Matrix& m,
                                  const CovarianceMatrix& omega);

// Running aggregates of the model sequence up to step k:
//   resolvent      M_{k:0}
//   information    Gamma_k   = sum_l M_{k:l}^{-T} Omega_l M_{k:l}^{-1}
//   pulled_back    Theta_k   = M_{k:0}^T Gamma_k M_{k:0}
//   controllability Xi_k     = sum_l M_{k:l} Q_l M_{k:l}^T
// Gamma and Theta grow exponentially with the leading Lyapunov exponent;
// they stay representable only over moderate horizons.
struct Aggregates {
  Matrix resolvent;
  Matrix information;
  Matrix pulled_back_information;
  Matrix controllability;
  long step_index = 0;

  static Aggregates initial(Eigen::Index n) {
    return {Matrix::Identity(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n), 0};
  }
};

Aggregates accumulate(const Aggregates& agg, const ModelStep& step);

struct ClosedFormResult {
  CovarianceMatrix covariance;
  double condition = 0.0;        // condition number of the inverted factor
  bool conditioning_warning = false;  // condition > 1e14
};

// P_k = M_{k:0} P_0 [I + Theta_k P_0]^{-1} M_{k:0}^T (perfect model). Valid
// for degenerate P_0.
ClosedFormResult closed_form_covariance(const CovarianceMatrix& p0, const Aggregates& agg);

// Same quantity through the information matrix instead:
// P_k = F (I + Gamma_k F)^{-1} with F = M_{k:0} P_0 M_{k:0}^T. Exported for
// cross-checking against the pulled-back form.
ClosedFormResult closed_form_covariance_gamma(const CovarianceMatrix& p0, const Aggregates& agg);

// Filter state carried as a covariance factor X with P = X X^T. Carrying the
// factor between steps keeps deeply contracted directions meaningful far
// below the eigen-solver noise floor of the reformed covariance.
class FilterState {
 public:
  explicit FilterState(Matrix factor);

  static FilterState from_covariance(const CovarianceMatrix& p);

  Eigen::Index dim() const { return factor_.rows(); }
  Eigen::Index rank() const { return factor_.cols(); }
  const Matrix& factor() const { return factor_; }
  Matrix covariance() const { return factor_ * factor_.transpose(); }

  // Assimilates (H, R), then propagates with M; adds Q by factor widening.
  // Returns the analysis factor Xa of this step.
  Matrix advance(const ModelStep& step);

  // Squared singular values of the factor: the covariance eigenvalues,
  // padded with zeros up to the state dimension, descending.
  Vector covariance_eigenvalues() const;

 private:
  Matrix factor_;
};

}  // namespace kfcov

#endif  // KFCOV_KF_HPP
