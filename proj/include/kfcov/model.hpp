#ifndef KFCOV_MODEL_HPP
#define KFCOV_MODEL_HPP

#include "kfcov/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace kfcov {

// One filter step: assimilate the observation (H, R) taken at the current
// time, then propagate with M to the next time. Q is the model noise added
// after propagation.
struct ModelStep {
  Matrix propagator;              // M_{k+1}, n x n, invertible
  Matrix observation;             // H_k, d x n
  CovarianceMatrix obs_covariance;    // R_k, d x d, invertible
  CovarianceMatrix model_noise;       // Q_{k+1}, n x n

  Eigen::Index state_dim() const { return propagator.rows(); }
  Eigen::Index obs_dim() const { return observation.rows(); }
};

// Reports a propagator whose condition number exceeds 1e12; the sequence is
// still usable (invertible with probability 1) but downstream inversions
// lose digits.
struct ConditionWarning {
  int step = -1;
  double condition = 0.0;
};

enum class ModelKind { kAutonomousRandom, kNonautonomousRandom, kLorenz95 };
enum class ObsMode { kDenseRandom, kFirstComponent };

struct Lorenz95Config {
  int dimension = 40;
  double forcing = 8.0;
  double obs_interval = 0.1;  // time between observations
  int substeps = 10;          // integrator substeps per interval
  int spinup_steps = 5000;    // nonlinear integrator steps discarded up front

  void validate() const;
};

struct ModelSuiteOptions {
  // Random propagators are drawn as gain/sqrt(n) * G with G iid standard
  // normal. gain = 1.5 puts roughly half the Lyapunov spectrum above zero
  // for n around 30; gain <= 1 gives a (marginally) stable suite.
  double propagator_gain = 1.5;
  Lorenz95Config lorenz;
};

// d/dt x_j = x_{j-1}(x_{j+1} - x_{j-2}) - x_j + F, cyclic indexing.
Vector lorenz95_tendency(const Vector& x, double forcing);

// Jacobian of the tendency; each row has at most 4 nonzeros.
Matrix lorenz95_jacobian(const Vector& x, double forcing);

// RK4 flow of the nonlinear model over one observation interval together
// with the tangent-linear propagator integrated along the same trajectory.
struct TangentLinearResult {
  Matrix propagator;
  Vector state_end;
};
TangentLinearResult tangent_linear_propagator(const Vector& x_start, const Lorenz95Config& cfg);

// Generates the model sequence for one experiment family. Deterministic in
// all arguments; Q_k = 0 throughout (perfect model). R_k = B B^T with B
// d x d iid standard normal, so it is an invertible covariance.
std::vector<ModelStep> gen_model_sequence(ModelKind kind, Eigen::Index n, Eigen::Index d,
                                          std::uint64_t seed, int steps, ObsMode obs_mode,
                                          const ModelSuiteOptions& options = {},
                                          std::vector<ConditionWarning>* warnings = nullptr);

ModelKind parse_model_kind(const std::string& name);
ObsMode parse_obs_mode(const std::string& name);
std::string to_string(ModelKind kind);
std::string to_string(ObsMode mode);

// Text container for matrix sequences: a header line, then one "matrix"
// record per entry (rows cols, then row-major values). See README for the
// grammar. Round-trips bit-exactly through 17 significant digits.
void write_model_sequence(std::ostream& os, const std::vector<ModelStep>& steps);
std::vector<ModelStep> read_model_sequence(std::istream& is);

}  // namespace kfcov

#endif  // KFCOV_MODEL_HPP
