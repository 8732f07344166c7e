#include "kfcov/model.hpp"

#include "kfcov/rng.hpp"

#include <Eigen/LU>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace kfcov {

namespace {

inline int wrap(int j, int n) { return ((j % n) + n) % n; }

Matrix rk4_state_and_tangent(Vector& x, double forcing, double dt, int substeps) {
  const Eigen::Index n = x.size();
  Matrix m = Matrix::Identity(n, n);
  const double h = dt / substeps;
  for (int s = 0; s < substeps; ++s) {
    // Joint RK4 on the state and the variational equation dM/dt = J(x(t)) M.
    const Vector k1 = lorenz95_tendency(x, forcing);
    const Matrix a1 = lorenz95_jacobian(x, forcing) * m;

    const Vector x2 = x + 0.5 * h * k1;
    const Vector k2 = lorenz95_tendency(x2, forcing);
    const Matrix a2 = lorenz95_jacobian(x2, forcing) * (m + 0.5 * h * a1);

    const Vector x3 = x + 0.5 * h * k2;
    const Vector k3 = lorenz95_tendency(x3, forcing);
    const Matrix a3 = lorenz95_jacobian(x3, forcing) * (m + 0.5 * h * a2);

    const Vector x4 = x + h * k3;
    const Vector k4 = lorenz95_tendency(x4, forcing);
    const Matrix a4 = lorenz95_jacobian(x4, forcing) * (m + h * a3);

    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    m += (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    if (!x.allFinite()) throw numerical_error("lorenz95: trajectory diverged");
  }
  return m;
}

CovarianceMatrix wishart_obs_covariance(SeededRng& rng, Eigen::Index d) {
  const Matrix b = rng.gaussian_matrix(d, d);
  return CovarianceMatrix::from_psd_construction(b * b.transpose());
}

Matrix observation_operator(SeededRng& rng, ObsMode mode, Eigen::Index d, Eigen::Index n) {
  if (mode == ObsMode::kFirstComponent) {
    Matrix h = Matrix::Zero(1, n);
    h(0, 0) = 1.0;
    return h;
  }
  return rng.gaussian_matrix(d, n);
}

void maybe_warn_condition(const Matrix& m, int step, std::vector<ConditionWarning>* warnings) {
  if (!warnings) return;
  Eigen::JacobiSVD<Matrix> svd(m);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin <= 0.0 || smax / smin > 1e12) warnings->push_back({step, smin > 0.0 ? smax / smin : INFINITY});
}

}  // namespace

void Lorenz95Config::validate() const {
  if (dimension < 4) throw contract_error("Lorenz95Config: dimension must be >= 4");
  if (substeps < 1) throw contract_error("Lorenz95Config: substeps must be >= 1");
  if (obs_interval < 0.0) throw contract_error("Lorenz95Config: negative observation interval");
  if (obs_interval / substeps > 0.05)
    throw contract_error("Lorenz95Config: integrator step exceeds 0.05 stability limit");
  if (spinup_steps < 0) throw contract_error("Lorenz95Config: negative spin-up");
}

Vector lorenz95_tendency(const Vector& x, double forcing) {
  const int n = static_cast<int>(x.size());
  if (n < 4) throw contract_error("lorenz95_tendency: dimension must be >= 4");
  Vector dx(n);
  for (int j = 0; j < n; ++j) {
    dx(j) = x(wrap(j - 1, n)) * (x(wrap(j + 1, n)) - x(wrap(j - 2, n))) - x(j) + forcing;
  }
  return dx;
}

Matrix lorenz95_jacobian(const Vector& x, double forcing) {
  (void)forcing;  // constant term, no state dependence
  const int n = static_cast<int>(x.size());
  if (n < 4) throw contract_error("lorenz95_jacobian: dimension must be >= 4");
  Matrix j = Matrix::Zero(n, n);
  for (int row = 0; row < n; ++row) {
    j(row, wrap(row - 2, n)) += -x(wrap(row - 1, n));
    j(row, wrap(row - 1, n)) += x(wrap(row + 1, n)) - x(wrap(row - 2, n));
    j(row, row) += -1.0;
    j(row, wrap(row + 1, n)) += x(wrap(row - 1, n));
  }
  return j;
}

TangentLinearResult tangent_linear_propagator(const Vector& x_start, const Lorenz95Config& cfg) {
  cfg.validate();
  if (x_start.size() != cfg.dimension)
    throw contract_error("tangent_linear_propagator: state dimension mismatch");
  TangentLinearResult result;
  result.state_end = x_start;
  if (cfg.obs_interval == 0.0) {
    result.propagator = Matrix::Identity(cfg.dimension, cfg.dimension);
    return result;
  }
  result.propagator = rk4_state_and_tangent(result.state_end, cfg.forcing, cfg.obs_interval, cfg.substeps);
  return result;
}

std::vector<ModelStep> gen_model_sequence(ModelKind kind, Eigen::Index n, Eigen::Index d,
                                          std::uint64_t seed, int steps, ObsMode obs_mode,
                                          const ModelSuiteOptions& options,
                                          std::vector<ConditionWarning>* warnings) {
  if (steps < 1) throw contract_error("gen_model_sequence: steps must be >= 1");
  if (n < 1) throw contract_error("gen_model_sequence: state dimension must be >= 1");
  const Eigen::Index obs_dim = obs_mode == ObsMode::kFirstComponent ? 1 : d;
  if (obs_dim < 1) throw contract_error("gen_model_sequence: observation dimension must be >= 1");

  SeededRng rng(seed);
  std::vector<ModelStep> sequence;
  sequence.reserve(static_cast<std::size_t>(steps));
  const CovarianceMatrix zero_noise = CovarianceMatrix::zero(n);
  const double scale = options.propagator_gain / std::sqrt(static_cast<double>(n));

  switch (kind) {
    case ModelKind::kAutonomousRandom: {
      ModelStep step;
      step.propagator = scale * rng.gaussian_matrix(n, n);
      step.observation = observation_operator(rng, obs_mode, obs_dim, n);
      step.obs_covariance = wishart_obs_covariance(rng, step.observation.rows());
      step.model_noise = zero_noise;
      maybe_warn_condition(step.propagator, 0, warnings);
      for (int k = 0; k < steps; ++k) sequence.push_back(step);
      break;
    }
    case ModelKind::kNonautonomousRandom: {
      for (int k = 0; k < steps; ++k) {
        ModelStep step;
        step.propagator = scale * rng.gaussian_matrix(n, n);
        step.observation = observation_operator(rng, obs_mode, obs_dim, n);
        step.obs_covariance = wishart_obs_covariance(rng, step.observation.rows());
        step.model_noise = zero_noise;
        maybe_warn_condition(step.propagator, k, warnings);
        sequence.push_back(std::move(step));
      }
      break;
    }
    case ModelKind::kLorenz95: {
      Lorenz95Config cfg = options.lorenz;
      cfg.dimension = static_cast<int>(n);
      cfg.validate();
      // Spin up from a fixed perturbation of the unstable equilibrium so the
      // linearization points lie on the attractor.
      Vector x = Vector::Constant(n, cfg.forcing);
      x(0) += 0.01;
      const double h = cfg.obs_interval / cfg.substeps;
      for (int s = 0; s < cfg.spinup_steps; ++s) {
        const Vector k1 = lorenz95_tendency(x, cfg.forcing);
        const Vector k2 = lorenz95_tendency(x + 0.5 * h * k1, cfg.forcing);
        const Vector k3 = lorenz95_tendency(x + 0.5 * h * k2, cfg.forcing);
        const Vector k4 = lorenz95_tendency(x + h * k3, cfg.forcing);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      if (!x.allFinite()) throw numerical_error("lorenz95: spin-up diverged");
      for (int k = 0; k < steps; ++k) {
        ModelStep step;
        auto tl = tangent_linear_propagator(x, cfg);
        step.propagator = std::move(tl.propagator);
        x = tl.state_end;
        step.observation = observation_operator(rng, obs_mode, obs_dim, n);
        step.obs_covariance = wishart_obs_covariance(rng, step.observation.rows());
        step.model_noise = zero_noise;
        maybe_warn_condition(step.propagator, k, warnings);
        sequence.push_back(std::move(step));
      }
      break;
    }
  }
  return sequence;
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "autonomous-random") return ModelKind::kAutonomousRandom;
  if (name == "nonautonomous-random") return ModelKind::kNonautonomousRandom;
  if (name == "lorenz95") return ModelKind::kLorenz95;
  throw contract_error("unknown model kind: " + name);
}

ObsMode parse_obs_mode(const std::string& name) {
  if (name == "dense" || name == "dense-random") return ObsMode::kDenseRandom;
  if (name == "first" || name == "first-component") return ObsMode::kFirstComponent;
  throw contract_error("unknown observation mode: " + name);
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kAutonomousRandom: return "autonomous-random";
    case ModelKind::kNonautonomousRandom: return "nonautonomous-random";
    case ModelKind::kLorenz95: return "lorenz95";
  }
  return "?";
}

std::string to_string(ObsMode mode) {
  return mode == ObsMode::kDenseRandom ? "dense-random" : "first-component";
}

namespace {

void write_matrix(std::ostream& os, const Matrix& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  const Eigen::IOFormat fmt(17, Eigen::DontAlignCols, " ", "\n");
  os << m.format(fmt) << '\n';
}

Matrix read_matrix(std::istream& is) {
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> rows >> cols) || rows < 1 || cols < 1)
    throw contract_error("model sequence container: bad matrix header");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!(is >> m(i, j))) throw contract_error("model sequence container: truncated matrix");
  return m;
}

}  // namespace

void write_model_sequence(std::ostream& os, const std::vector<ModelStep>& steps) {
  os << "kfcov-model-sequence 1\n";
  os << steps.size() << '\n';
  os.precision(17);
  for (const auto& step : steps) {
    write_matrix(os, step.propagator);
    write_matrix(os, step.observation);
    write_matrix(os, step.obs_covariance.matrix());
    write_matrix(os, step.model_noise.matrix());
  }
}

std::vector<ModelStep> read_model_sequence(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "kfcov-model-sequence" || version != 1)
    throw contract_error("model sequence container: bad header");
  std::size_t count = 0;
  if (!(is >> count)) throw contract_error("model sequence container: missing count");
  std::vector<ModelStep> steps;
  steps.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ModelStep step;
    step.propagator = read_matrix(is);
    step.observation = read_matrix(is);
    step.obs_covariance = CovarianceMatrix::from_psd_construction(read_matrix(is));
    step.model_noise = CovarianceMatrix::from_psd_construction(read_matrix(is));
    steps.push_back(std::move(step));
  }
  return steps;
}

}  // namespace kfcov
