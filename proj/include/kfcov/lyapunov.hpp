#ifndef KFCOV_LYAPUNOV_HPP
#define KFCOV_LYAPUNOV_HPP

#include "kfcov/types.hpp"

#include <cstdint>
#include <set>
#include <utility>
#include <vector>

namespace kfcov {

struct QrPassOptions {
  std::uint64_t seed = 0;          // seeds the random orthonormal start basis
  double transient_fraction = 0.2; // leading fraction excluded from basis traces
  int basis_stride = 0;            // store Q_k every stride steps (0: terminal only)
  std::vector<int> basis_checkpoints;  // additional explicit k values to store
  int checkpoint_stride = 0;       // running exponent estimates every stride steps
};

struct ForwardQrResult {
  Vector exponents;                                  // (1/K) sum_k ln [R_k]_ii, descending order
  Matrix terminal_basis;                             // Q_K: backward Lyapunov vectors at t_K
  std::vector<std::pair<int, Matrix>> basis_trace;   // sampled Q_k, k past the transient
  std::vector<std::pair<int, Vector>> running_estimates;
};

// QR iteration Q_{k+1} R_{k+1} = M_{k+1} Q_k with positive-diagonal
// convention. Exponents are the mean log diagonals of the R factors.
ForwardQrResult forward_qr_pass(const std::vector<Matrix>& propagators, const QrPassOptions& options = {});

struct AdjointQrResult {
  Matrix flv_basis;   // V_0: forward Lyapunov vectors at t_0, descending exponent order
  Vector exponents;   // same spectrum, estimated from the reversed adjoint pass
};

// QR iteration on transposed propagators traversed in reverse time order;
// the terminal basis converges to the forward Lyapunov vectors at t_0.
AdjointQrResult adjoint_qr_pass(const std::vector<Matrix>& propagators, std::uint64_t seed = 0);

struct FiniteTimeSvd {
  Matrix left;              // U_{k:0}
  Matrix right;             // V_{k:0}
  Vector singular_values;   // descending
  Vector exponents;         // ln(sigma_i) / k
};

// Dense SVD of an explicitly formed resolvent. Valid while the resolvent is
// representable; singular values below eps * sigma_1 are noise-level.
FiniteTimeSvd finite_time_svd(const Matrix& resolvent, int k);

// Finite-time exponents of M_{k:0} for horizons where the resolvent cannot
// be formed densely. Accumulates the triangular factor of the QR pass with
// per-row log scales; exponents pair row scales with the singular values of
// the balanced remainder.
std::vector<std::pair<int, Vector>> staged_finite_time_exponents(const std::vector<Matrix>& propagators,
                                                                 int checkpoint_stride);

struct GinelliOptions {
  std::uint64_t seed = 0;
  // Fractions of the pass length discarded for convergence: the leading
  // fraction for the forward (BLV) transient, the trailing fraction for the
  // backward (coefficient) transient.
  double forward_transient_fraction = 0.2;
  double backward_transient_fraction = 0.2;
  int full_basis_stride = 0;  // store the complete CLV basis every stride steps
  int plus_block_size = 0;    // columns kept in the per-step trace (0: all)
};

struct GinelliResult {
  // Unit-norm covariant vectors, leading plus_block columns, for every step
  // in [0, usable_end]. Covariant by construction along the whole range;
  // they approximate the true covariant vectors for k in
  // [forward_transient, usable_end].
  std::vector<Matrix> plus_trace;
  // stretch_logs[k](i) = ln ||M_{k+1} c_i^k||, defined for k < usable_end.
  std::vector<Vector> stretch_logs;
  std::vector<std::pair<int, Matrix>> full_basis_trace;
  Vector exponents;          // from the underlying forward pass
  int forward_transient = 0;
  int usable_end = 0;        // last step with backward-converged coefficients
};

// Ginelli-style covariant vector computation: forward QR pass storing R
// factors, then backward iteration of upper-triangular coefficients with
// column normalization.
GinelliResult ginelli_clv_pass(const std::vector<Matrix>& propagators, const GinelliOptions& options = {});

struct SpectrumClassification {
  int n0 = 0;                    // exponents greater than -neutral_tol
  std::set<int> neutral_indices; // |lambda_i| <= neutral_tol (0-based)
  std::set<int> stable_indices;  // lambda_i < -neutral_tol (0-based)
  double neutral_tolerance = 0.0;
  // Smallest gap between consecutive exponents; near-degenerate spectra
  // (gap < 1e-4) violate the distinct-exponent assumption and are flagged.
  double min_gap = 0.0;
  bool degenerate_flag = false;
};

SpectrumClassification classify_spectrum(const Vector& exponents_sorted_desc, double neutral_tol);

}  // namespace kfcov

#endif  // KFCOV_LYAPUNOV_HPP
