#ifndef KFCOV_EXPERIMENT_HPP
#define KFCOV_EXPERIMENT_HPP

#include "kfcov/diagnostics.hpp"
#include "kfcov/lyapunov.hpp"
#include "kfcov/model.hpp"
#include "kfcov/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kfcov {

inline constexpr const char* kSoftwareVersion = "0.1.0";

struct ExperimentConfig {
  std::string suite = "exp2";  // exp1 | exp2 | exp3
  int n = -1;                  // -1: suite default (exp1/exp2: 30, exp3: 40)
  int d = -1;                  // -1: suite default (exp1/exp2: 10, exp3: 15)
  int steps = 5000;
  std::uint64_t seed = 42;
  int rank = -1;               // initial covariance rank; -1 = full
  int rank2 = 0;               // optional second-run rank; 0 = no second run
  double rank_threshold = 1e-10;
  double neutral_tol = 1e-3;
  std::string obs = "dense";   // dense | first
  double propagator_gain = 1.5;
  bool clv_diagnostics = true;
  bool oracle_checks = false;  // also run the cross-check on a short prefix
  int trace_stride = 0;        // 0: automatic
  std::string out_dir = "out";

  // Lorenz-95 parameters (exp3).
  double forcing = 8.0;
  double obs_interval = 0.1;
  int substeps = 10;
  int spinup = 5000;

  ModelKind kind() const;
  ObsMode obs_mode() const;
  void resolve_defaults();
  void validate() const;
};

ExperimentConfig load_config_file(const std::filesystem::path& path);
ExperimentConfig config_from_manifest(const std::filesystem::path& manifest_path);

struct RunSummary {
  int n0 = 0;
  Vector exponents;
  double min_exponent_gap = 0.0;
  std::vector<int> terminal_ranks;       // one per filter run
  double strong_collapse_max = 0.0;      // max_i ||P_K u_i||, stable i, run 1
  double pair_distance_tail_max = 0.0;   // max over last 10% of steps
  double asymptote_tail_rel_max = 0.0;   // max ||P_k - S_k||_F / ||S_k||_F, tail
  bool condition1_holds = false;
  double condition2_tail_min = 0.0;
  bool condition3_vacuous = true;
  double bound_margin_worst = 0.0;
  std::vector<DecayFitEntry> decay_fits;
  std::filesystem::path out_dir;
};

// Generates the suite, runs the Lyapunov machinery and one or two filter
// trajectories, writes all diagnostic CSV files plus manifest.json and
// summary.json into config.out_dir.
RunSummary run_experiment(const ExperimentConfig& config);

struct CrossCheckSummary {
  double max_deviation = 0.0;       // max pairwise relative Frobenius over all k
  int conditioning_break_k = -1;    // first k with closed-form condition > 1e14
  std::filesystem::path out_dir;
};

// Propagates the same perfect-model sequence through the Riccati recursion,
// the closed-form expression, and the symplectic representation; reports the
// pairwise deviations per step.
CrossCheckSummary cross_check(const ExperimentConfig& config);

struct LyapunovSummary {
  int n0 = 0;
  Vector exponents;
  double sum_exponents = 0.0;
  double mean_log_abs_det = 0.0;
  std::filesystem::path out_dir;
};

// Exponent-only pass: QR method over the configured suite.
LyapunovSummary lyapunov_run(const ExperimentConfig& config);

// Re-derives decay-fit diagnostics from a stored run directory.
int report_run(const std::filesystem::path& run_dir);

}  // namespace kfcov

#endif  // KFCOV_EXPERIMENT_HPP
