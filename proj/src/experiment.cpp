#include "kfcov/experiment.hpp"

#include "kfcov/cone.hpp"
#include "kfcov/io.hpp"
#include "kfcov/kf.hpp"
#include "kfcov/rng.hpp"
#include "kfcov/symplectic.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace kfcov {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSeqSeedOffset = 0;
constexpr std::uint64_t kRunSeedOffset = 1000003;
constexpr std::uint64_t kBasisSeedOffset = 3000003;

std::vector<Matrix> propagators_of(const std::vector<ModelStep>& steps, int count) {
  std::vector<Matrix> props;
  props.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) props.push_back(steps[static_cast<std::size_t>(k)].propagator);
  return props;
}

Vector analysis_eigenvalues(const Matrix& xa, Eigen::Index n) {
  Eigen::JacobiSVD<Matrix> svd(xa);
  Vector eig = Vector::Zero(n);
  for (Eigen::Index i = 0; i < svd.singularValues().size() && i < n; ++i) {
    const double s = svd.singularValues()(i);
    eig(i) = s * s;
  }
  return eig;
}

int count_above(const Vector& eig, double threshold) {
  int c = 0;
  for (Eigen::Index i = 0; i < eig.size(); ++i)
    if (eig(i) > threshold) ++c;
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  return json{{"suite", c.suite},
              {"n", c.n},
              {"d", c.d},
              {"steps", c.steps},
              {"seed", c.seed},
              {"rank", c.rank},
              {"rank2", c.rank2},
              {"rank_threshold", c.rank_threshold},
              {"neutral_tol", c.neutral_tol},
              {"obs", c.obs},
              {"propagator_gain", c.propagator_gain},
              {"clv_diagnostics", c.clv_diagnostics},
              {"oracle_checks", c.oracle_checks},
              {"trace_stride", c.trace_stride},
              {"out_dir", c.out_dir},
              {"forcing", c.forcing},
              {"obs_interval", c.obs_interval},
              {"substeps", c.substeps},
              {"spinup", c.spinup}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.suite = j.at("suite").get<std::string>();
  c.n = j.at("n").get<int>();
  c.d = j.at("d").get<int>();
  c.steps = j.at("steps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.rank = j.at("rank").get<int>();
  c.rank2 = j.at("rank2").get<int>();
  c.rank_threshold = j.at("rank_threshold").get<double>();
  c.neutral_tol = j.at("neutral_tol").get<double>();
  c.obs = j.at("obs").get<std::string>();
  c.propagator_gain = j.at("propagator_gain").get<double>();
  c.clv_diagnostics = j.at("clv_diagnostics").get<bool>();
  c.oracle_checks = j.at("oracle_checks").get<bool>();
  c.trace_stride = j.at("trace_stride").get<int>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.forcing = j.at("forcing").get<double>();
  c.obs_interval = j.at("obs_interval").get<double>();
  c.substeps = j.at("substeps").get<int>();
  c.spinup = j.at("spinup").get<int>();
  return c;
}

class ManifestWriter {
 public:
  ManifestWriter(fs::path dir, std::string command, const ExperimentConfig& config)
      : dir_(std::move(dir)), command_(std::move(command)), config_(config) {}

  void add_file(const fs::path& path) { files_.push_back(path); }
  json& measured() { return measured_; }

  void write() const {
    json manifest;
    manifest["software"] = std::string("kfcov ") + kSoftwareVersion;
    manifest["prng"] = SeededRng::identity();
    manifest["hash"] = "fnv1a-64";
    manifest["command"] = command_;
    manifest["config"] = config_to_json(config_);
    manifest["measured"] = measured_;
    json files = json::object();
    for (const auto& f : files_) files[f.filename().string()] = fnv1a_file_hash_hex(f);
    manifest["files"] = files;
    std::ofstream os(dir_ / "manifest.json");
    os << manifest.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::string command_;
  ExperimentConfig config_;
  json measured_ = json::object();
  std::vector<fs::path> files_;
};

ModelSuiteOptions suite_options(const ExperimentConfig& c) {
  ModelSuiteOptions opts;
  opts.propagator_gain = c.propagator_gain;
  opts.lorenz.dimension = c.n;
  opts.lorenz.forcing = c.forcing;
  opts.lorenz.obs_interval = c.obs_interval;
  opts.lorenz.substeps = c.substeps;
  opts.lorenz.spinup_steps = c.spinup;
  return opts;
}

}  // namespace

ModelKind ExperimentConfig::kind() const {
  if (suite == "exp1") return ModelKind::kAutonomousRandom;
  if (suite == "exp2") return ModelKind::kNonautonomousRandom;
  if (suite == "exp3") return ModelKind::kLorenz95;
  throw contract_error("unknown suite: " + suite);
}

ObsMode ExperimentConfig::obs_mode() const { return parse_obs_mode(obs); }

void ExperimentConfig::resolve_defaults() {
  const bool lorenz = suite == "exp3";
  if (n < 0) n = lorenz ? 40 : 30;
  if (d < 0) d = lorenz ? 15 : 10;
  if (rank < 0 || rank > n) rank = n;
}

void ExperimentConfig::validate() const {
  kind();
  obs_mode();
  if (n < 1) throw contract_error("config: n must be positive");
  if (d < 1) throw contract_error("config: d must be positive");
  if (steps < 1) throw contract_error("config: steps must be >= 1");
  if (rank < 1 || rank > n) throw contract_error("config: rank out of [1, n]");
  if (rank2 < 0 || rank2 > n) throw contract_error("config: rank2 out of [0, n]");
  if (rank_threshold <= 0) throw contract_error("config: rank threshold must be positive");
  if (neutral_tol < 0) throw contract_error("config: neutral tolerance must be non-negative");
  if (out_dir.empty()) throw contract_error("config: missing output directory");
}

ExperimentConfig load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw contract_error("cannot open config file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) kv[key] = value;
  }
  ExperimentConfig c;
  auto get = [&](const char* key, auto parse, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    field = parse(it->second);
    kv.erase(it);
  };
  auto to_int = [](const std::string& s) { return std::stoi(s); };
  auto to_u64 = [](const std::string& s) { return static_cast<std::uint64_t>(std::stoull(s)); };
  auto to_double = [](const std::string& s) { return std::stod(s); };
  auto to_bool = [](const std::string& s) { return s == "1" || s == "true" || s == "yes"; };
  auto identity = [](const std::string& s) { return s; };
  get("suite", identity, c.suite);
  get("n", to_int, c.n);
  get("d", to_int, c.d);
  get("steps", to_int, c.steps);
  get("seed", to_u64, c.seed);
  get("rank", to_int, c.rank);
  get("rank2", to_int, c.rank2);
  get("rank_threshold", to_double, c.rank_threshold);
  get("neutral_tol", to_double, c.neutral_tol);
  get("obs", identity, c.obs);
  get("propagator_gain", to_double, c.propagator_gain);
  get("clv_diagnostics", to_bool, c.clv_diagnostics);
  get("oracle_checks", to_bool, c.oracle_checks);
  get("trace_stride", to_int, c.trace_stride);
  get("out_dir", identity, c.out_dir);
  get("forcing", to_double, c.forcing);
  get("obs_interval", to_double, c.obs_interval);
  get("substeps", to_int, c.substeps);
  get("spinup", to_int, c.spinup);
  if (!kv.empty()) throw contract_error("config file: unknown key '" + kv.begin()->first + "'");
  return c;
}

ExperimentConfig config_from_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw contract_error("cannot open manifest " + manifest_path.string());
  json manifest;
  in >> manifest;
  return config_from_json(manifest.at("config"));
}

RunSummary run_experiment(const ExperimentConfig& config_in) {
  ExperimentConfig config = config_in;
  config.resolve_defaults();
  config.validate();
  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  ManifestWriter manifest(dir, "run", config);

  const int k_steps = config.steps;
  const int clv_margin = config.clv_diagnostics ? std::max(50, k_steps / 4) : 0;
  const int k_ext = k_steps + clv_margin;
  const Eigen::Index n = config.n;

  std::vector<ConditionWarning> warnings;
  const std::vector<ModelStep> steps = gen_model_sequence(
      config.kind(), n, config.d, config.seed + kSeqSeedOffset, k_ext, config.obs_mode(),
      suite_options(config), &warnings);
  const std::vector<Matrix> props = propagators_of(steps, k_ext);

  const int stride = config.trace_stride > 0 ? config.trace_stride : std::max(1, k_steps / 20);

  // Exponents and backward Lyapunov bases from one forward pass over the
  // extended horizon.
  std::vector<int> basis_ks;
  for (int k = k_steps / 2; k <= k_steps; k += std::max(1, k_steps / 10)) basis_ks.push_back(k);
  if (basis_ks.empty() || basis_ks.back() != k_steps) basis_ks.push_back(k_steps);
  QrPassOptions qr_opts;
  qr_opts.seed = config.seed + kBasisSeedOffset;
  qr_opts.basis_checkpoints = basis_ks;
  qr_opts.checkpoint_stride = std::max(1, k_ext / 8);
  const ForwardQrResult fwd = forward_qr_pass(props, qr_opts);
  const SpectrumClassification cls = classify_spectrum(fwd.exponents, config.neutral_tol);
  const int n0 = cls.n0;

  {
    CsvWriter csv(dir / "exponents.csv", [&] {
      std::vector<std::string> header{"index", "lambda"};
      for (const auto& [k, unused] : fwd.running_estimates) header.push_back("estimate_k" + std::to_string(k));
      return header;
    }());
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> row{static_cast<double>(i), fwd.exponents(i)};
      for (const auto& [k, est] : fwd.running_estimates) row.push_back(est(i));
      csv.write_row(row);
    }
    manifest.add_file(csv.path());
  }

  // Covariant vectors over [0, k_steps]; the generation margin beyond
  // k_steps absorbs the backward transient.
  GinelliResult clv;
  if (config.clv_diagnostics) {
    GinelliOptions gopts;
    gopts.seed = config.seed + kBasisSeedOffset;
    gopts.forward_transient_fraction =
        std::min(0.45, 0.2 * static_cast<double>(k_steps) / static_cast<double>(k_ext));
    gopts.backward_transient_fraction = static_cast<double>(clv_margin) / static_cast<double>(k_ext);
    gopts.plus_block_size = std::max(1, n0);
    clv = ginelli_clv_pass(props, gopts);
  }

  // Filter trajectories.
  struct RunState {
    FilterState state;
    Matrix x0;
    std::vector<Vector> analysis_trace;
  };
  std::vector<RunState> runs;
  {
    const Matrix x0 = random_spd_factor(n, config.rank, config.seed + kRunSeedOffset);
    runs.push_back({FilterState(x0), x0, {}});
  }
  if (config.rank2 > 0) {
    const Matrix x0 = random_spd_factor(n, config.rank2, config.seed + 2 * kRunSeedOffset);
    runs.push_back({FilterState(x0), x0, {}});
  }
  const double sigma1_initial =
      analysis_eigenvalues(runs.front().x0, n)(0);  // top eigenvalue of P_0

  BoundAuditor auditor(CovarianceMatrix::from_psd_construction(runs.front().x0 *
                                                               runs.front().x0.transpose()));
  const int audit_stride = std::max(1, stride / 4);

  ProjectedInformation projected(std::max(1, n0));
  std::vector<std::array<double, 3>> asymptote_rows;  // k, ||P-S||, ||S||

  std::vector<CsvWriter> cov_csv;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::vector<std::string> header{"k"};
    for (Eigen::Index j = 1; j <= n; ++j) header.push_back("eigenvalue_" + std::to_string(j));
    header.push_back("rank");
    header.push_back("frobenius_norm");
    cov_csv.emplace_back(dir / ("cov_trace_run" + std::to_string(i + 1) + ".csv"), header);
  }

  std::optional<CsvWriter> pair_csv;
  if (runs.size() == 2) pair_csv.emplace(dir / "pair_distance.csv", std::vector<std::string>{"k", "frobenius_distance"});
  std::optional<CsvWriter> consec_csv;
  if (config.kind() == ModelKind::kAutonomousRandom)
    consec_csv.emplace(dir / "consecutive_distance.csv", std::vector<std::string>{"k", "frobenius_distance"});

  std::vector<std::pair<int, Vector>> blv_projection_rows;
  auto basis_at = [&](int k) -> const Matrix* {
    for (const auto& [bk, q] : fwd.basis_trace)
      if (bk == k) return &q;
    return nullptr;
  };

  RunSummary summary;
  summary.out_dir = dir;
  summary.pair_distance_tail_max = 0.0;
  summary.asymptote_tail_rel_max = 0.0;
  const int tail_start = k_steps - std::max(1, k_steps / 10);

  Matrix previous_pa;
  for (int k = 0; k < k_steps; ++k) {
    const ModelStep& step = steps[static_cast<std::size_t>(k)];

    // Forecast-covariance diagnostics at time k.
    if (k % audit_stride == 0 || k >= tail_start) {
      const Matrix p_dense = runs.front().state.covariance();
      if (k % audit_stride == 0) auditor.audit(p_dense, step.model_noise.matrix());
      if (config.clv_diagnostics && k <= clv.usable_end && k > 0) {
        const Matrix& c_plus = clv.plus_trace[static_cast<std::size_t>(k)];
        if (projected.min_eigenvalue() > 1e-10) {
          const Matrix s_k = asymptote_from_projected(c_plus, projected.value());
          asymptote_rows.push_back({static_cast<double>(k), (p_dense - s_k).norm(), s_k.norm()});
          if (k >= tail_start && s_k.norm() > 0.0)
            summary.asymptote_tail_rel_max =
                std::max(summary.asymptote_tail_rel_max, (p_dense - s_k).norm() / s_k.norm());
        }
      }
    }
    if (config.clv_diagnostics && k < clv.usable_end) {
      const Matrix omega = obs_precision(step.observation, step.obs_covariance).matrix();
      projected.advance(clv.plus_trace[static_cast<std::size_t>(k)].leftCols(std::max(1, n0)), omega,
                        clv.stretch_logs[static_cast<std::size_t>(k)]);
    }
    auditor.consume(step);

    // Advance every run; the returned factor is the analysis at time k.
    Matrix pa_run1;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const Matrix xa = runs[i].state.advance(step);
      const Vector eig = analysis_eigenvalues(xa, n);
      runs[i].analysis_trace.push_back(eig);
      std::vector<double> row{static_cast<double>(k)};
      for (Eigen::Index j = 0; j < n; ++j) row.push_back(eig(j));
      row.push_back(static_cast<double>(count_above(eig, config.rank_threshold)));
      row.push_back(std::sqrt(eig.array().square().sum()));
      cov_csv[i].write_row(row);
      if (i == 0 && (pair_csv || consec_csv || basis_at(k))) pa_run1 = xa * xa.transpose();
      if (i == 1 && pair_csv) {
        const Matrix pa_run2 = xa * xa.transpose();
        const double dist = (pa_run1 - pa_run2).norm();
        pair_csv->write_row({static_cast<double>(k), dist});
        if (k >= tail_start) summary.pair_distance_tail_max = std::max(summary.pair_distance_tail_max, dist);
      }
    }
    if (consec_csv) {
      if (previous_pa.size() > 0)
        consec_csv->write_row({static_cast<double>(k), (pa_run1 - previous_pa).norm()});
      previous_pa = pa_run1;
    }
    if (const Matrix* q = basis_at(k); q && pa_run1.size() > 0) {
      blv_projection_rows.emplace_back(k, Vector((q->transpose() * pa_run1 * *q).diagonal()));
    }
  }

  // Terminal forecast covariance: rank, strong collapse onto stable vectors.
  const Matrix p_terminal = runs.front().state.covariance();
  auditor.audit(p_terminal, Matrix::Zero(n, n));
  for (auto& run : runs) {
    Eigen::JacobiSVD<Matrix> svd(run.state.factor());
    Vector eig = Vector::Zero(n);
    for (Eigen::Index i = 0; i < svd.singularValues().size() && i < n; ++i)
      eig(i) = svd.singularValues()(i) * svd.singularValues()(i);
    summary.terminal_ranks.push_back(count_above(eig, config.rank_threshold));
  }
  if (const Matrix* q_terminal = basis_at(k_steps)) {
    summary.strong_collapse_max = max_stable_column_norm(p_terminal, *q_terminal, cls.stable_indices);
  }

  {
    CsvWriter csv(dir / "bounds_audit.csv",
                  {"k", "margin_lower", "margin_free", "gamma_evaluable", "margin_gamma", "margin_min"});
    double worst = INFINITY;
    for (const auto& row : auditor.rows()) {
      csv.write_row({static_cast<double>(row.k), row.margin_lower, row.margin_free,
                     row.gamma_evaluable ? 1.0 : 0.0, row.margin_gamma, row.margin_min});
      worst = std::min({worst, row.margin_lower, row.margin_free,
                        row.gamma_evaluable ? row.margin_gamma : INFINITY});
    }
    summary.bound_margin_worst = worst;
    manifest.add_file(csv.path());
  }

  if (!asymptote_rows.empty()) {
    CsvWriter csv(dir / "asymptote.csv", {"k", "distance", "asymptote_norm"});
    for (const auto& row : asymptote_rows) csv.write_row({row[0], row[1], row[2]});
    manifest.add_file(csv.path());
  }

  if (!blv_projection_rows.empty()) {
    std::vector<std::string> header{"k"};
    for (Eigen::Index j = 1; j <= n; ++j) header.push_back("projection_" + std::to_string(j));
    CsvWriter csv(dir / "blv_projection.csv", header);
    for (const auto& [k, diag] : blv_projection_rows) csv.write_row_with_index(k, diag);
    manifest.add_file(csv.path());
  }

  // Decay-rate fits on the run-1 analysis eigenvalue trace, with the
  // finite-time envelope audit.
  DecayFitOptions fit_opts;
  fit_opts.k_min = std::min(50, k_steps / 10);
  fit_opts.k_max = k_steps - 1;
  if (fit_opts.k_max > fit_opts.k_min + 1 && n0 < n)
    summary.decay_fits = eigen_decay_fit(runs.front().analysis_trace, fwd.exponents, n0, fit_opts);
  {
    CsvWriter csv(dir / "decay_fit.csv", {"index", "slope", "residual_rms", "reference", "points", "truncated"});
    for (const auto& e : summary.decay_fits)
      csv.write_row({static_cast<double>(e.index), e.slope, e.residual_rms, e.reference,
                     static_cast<double>(e.points), e.truncated ? 1.0 : 0.0});
    manifest.add_file(csv.path());
  }
  {
    const auto staged = staged_finite_time_exponents(
        std::vector<Matrix>(props.begin(), props.begin() + k_steps), std::max(1, k_steps / 10));
    const auto envelope = decay_envelope_check(runs.front().analysis_trace, staged, sigma1_initial, n0);
    CsvWriter csv(dir / "envelope.csv", {"index", "max_excess_log"});
    for (const auto& e : envelope) csv.write_row({static_cast<double>(e.index), e.max_excess_log});
    manifest.add_file(csv.path());
  }

  // Observability conditions against the covariant directions.
  if (config.clv_diagnostics && n0 > 0) {
    const AdjointQrResult adj = adjoint_qr_pass(props, config.seed + kBasisSeedOffset);
    const ConditionReport report = condition_checks(
        runs.front().x0, adj.flv_basis.leftCols(n0), clv,
        std::vector<ModelStep>(steps.begin(), steps.begin() + k_steps), cls, stride);
    summary.condition1_holds = report.condition1_holds;
    summary.condition3_vacuous = report.condition3_vacuous;
    CsvWriter csv(dir / "conditions.csv", {"k", "condition2_min_eigen", "condition3_min_sv"});
    double tail_min = INFINITY;
    for (std::size_t i = 0; i < report.condition2_min_eigen.size(); ++i) {
      const auto& [k, c2] = report.condition2_min_eigen[i];
      const double c3 = i < report.condition3_min_sv.size() ? report.condition3_min_sv[i].second
                                                            : std::nan("");
      csv.write_row({static_cast<double>(k), c2, c3});
      if (k >= tail_start) tail_min = std::min(tail_min, c2);
    }
    summary.condition2_tail_min = std::isfinite(tail_min) ? tail_min : 0.0;
    manifest.add_file(csv.path());
    manifest.measured()["condition1_rank"] = report.condition1_rank;
    manifest.measured()["condition1_holds"] = report.condition1_holds;
  }

  // Close the streaming writers so the manifest hashes complete files.
  for (auto& csv : cov_csv) manifest.add_file(csv.path());
  if (pair_csv) manifest.add_file(pair_csv->path());
  if (consec_csv) manifest.add_file(consec_csv->path());
  cov_csv.clear();
  pair_csv.reset();
  consec_csv.reset();

  summary.n0 = n0;
  summary.exponents = fwd.exponents;
  summary.min_exponent_gap = cls.min_gap;

  manifest.measured()["n0"] = n0;
  manifest.measured()["min_exponent_gap"] = cls.min_gap;
  manifest.measured()["degenerate_spectrum_flag"] = cls.degenerate_flag;
  manifest.measured()["terminal_ranks"] = summary.terminal_ranks;
  manifest.measured()["strong_collapse_max"] = summary.strong_collapse_max;
  manifest.measured()["pair_distance_tail_max"] = summary.pair_distance_tail_max;
  manifest.measured()["asymptote_tail_rel_max"] = summary.asymptote_tail_rel_max;
  manifest.measured()["bound_margin_worst"] = summary.bound_margin_worst;
  manifest.measured()["propagator_condition_warnings"] = warnings.size();

  {
    json s;
    s["n0"] = n0;
    s["terminal_ranks"] = summary.terminal_ranks;
    s["strong_collapse_max"] = summary.strong_collapse_max;
    s["pair_distance_tail_max"] = summary.pair_distance_tail_max;
    s["asymptote_tail_rel_max"] = summary.asymptote_tail_rel_max;
    s["bound_margin_worst"] = summary.bound_margin_worst;
    s["condition1_holds"] = summary.condition1_holds;
    s["condition2_tail_min"] = summary.condition2_tail_min;
    s["condition3_vacuous"] = summary.condition3_vacuous;
    json fits = json::array();
    for (const auto& e : summary.decay_fits)
      fits.push_back(json{{"index", e.index},
                          {"slope", e.slope},
                          {"reference", e.reference},
                          {"residual_rms", e.residual_rms},
                          {"points", e.points},
                          {"truncated", e.truncated}});
    s["decay_fits"] = fits;
    std::ofstream os(dir / "summary.json");
    os << s.dump(2) << '\n';
    manifest.add_file(dir / "summary.json");
  }

  manifest.write();
  return summary;
}

CrossCheckSummary cross_check(const ExperimentConfig& config_in) {
  ExperimentConfig config = config_in;
  config.resolve_defaults();
  config.validate();
  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  ManifestWriter manifest(dir, "cross-check", config);

  const Eigen::Index n = config.n;
  const std::vector<ModelStep> steps =
      gen_model_sequence(config.kind(), n, config.d, config.seed, config.steps, config.obs_mode(),
                         suite_options(config));
  for (const auto& step : steps)
    if (step.model_noise.matrix().norm() != 0.0)
      throw contract_error("cross_check: requires a perfect-model suite");

  const CovarianceMatrix p0 = random_spd(n, config.rank, config.seed + kRunSeedOffset);

  CovarianceMatrix p_riccati = p0;
  Aggregates agg = Aggregates::initial(n);
  std::vector<SymplecticBlock> blocks;
  blocks.reserve(steps.size());
  for (const auto& step : steps)
    blocks.push_back(build_block(step.propagator,
                                 obs_precision(step.observation, step.obs_covariance),
                                 step.model_noise));
  const std::vector<Matrix> symplectic_trace = propagate_ratio(RatioState::seed(p0), blocks);

  CrossCheckSummary summary;
  summary.out_dir = dir;
  CsvWriter csv(dir / "cross_check.csv",
                {"k", "dev_riccati_closed", "dev_riccati_symplectic", "dev_closed_symplectic",
                 "closed_form_condition"});
  csv.write_row({0.0, 0.0, 0.0, 0.0, 1.0});
  for (int k = 1; k <= config.steps; ++k) {
    p_riccati = riccati_step(p_riccati, steps[static_cast<std::size_t>(k - 1)]);
    agg = accumulate(agg, steps[static_cast<std::size_t>(k - 1)]);
    const ClosedFormResult closed = closed_form_covariance(p0, agg);
    const Matrix& p_symp = symplectic_trace[static_cast<std::size_t>(k)];
    // Floored relative distance: once the covariance has collapsed well
    // below its initial scale, deviations are measured against that scale.
    const double floor = p0.matrix().norm();
    const double d_rc = relative_frobenius_distance(p_riccati.matrix(), closed.covariance.matrix(), floor);
    const double d_rs = relative_frobenius_distance(p_riccati.matrix(), p_symp, floor);
    const double d_cs = relative_frobenius_distance(closed.covariance.matrix(), p_symp, floor);
    csv.write_row({static_cast<double>(k), d_rc, d_rs, d_cs, closed.condition});
    summary.max_deviation = std::max({summary.max_deviation, d_rc, d_rs, d_cs});
    if (summary.conditioning_break_k < 0 && closed.conditioning_warning) summary.conditioning_break_k = k;
  }
  csv.close();
  manifest.add_file(csv.path());
  manifest.measured()["max_deviation"] = summary.max_deviation;
  manifest.measured()["conditioning_break_k"] = summary.conditioning_break_k;
  manifest.write();
  return summary;
}

LyapunovSummary lyapunov_run(const ExperimentConfig& config_in) {
  ExperimentConfig config = config_in;
  config.resolve_defaults();
  config.validate();
  const fs::path dir(config.out_dir);
  fs::create_directories(dir);
  ManifestWriter manifest(dir, "lyapunov", config);

  const std::vector<ModelStep> steps =
      gen_model_sequence(config.kind(), config.n, config.d, config.seed, config.steps,
                         config.obs_mode(), suite_options(config));
  const std::vector<Matrix> props = propagators_of(steps, config.steps);

  QrPassOptions opts;
  opts.seed = config.seed + kBasisSeedOffset;
  opts.checkpoint_stride = std::max(1, config.steps / 8);
  const ForwardQrResult fwd = forward_qr_pass(props, opts);
  const SpectrumClassification cls = classify_spectrum(fwd.exponents, config.neutral_tol);

  LyapunovSummary summary;
  summary.out_dir = dir;
  summary.n0 = cls.n0;
  summary.exponents = fwd.exponents;
  summary.sum_exponents = fwd.exponents.sum();
  double logdet = 0.0;
  for (const auto& m : props) logdet += std::log(std::abs(m.determinant()));
  summary.mean_log_abs_det = logdet / static_cast<double>(props.size());

  CsvWriter csv(dir / "exponents.csv", [&] {
    std::vector<std::string> header{"index", "lambda"};
    for (const auto& [k, unused] : fwd.running_estimates) header.push_back("estimate_k" + std::to_string(k));
    return header;
  }());
  for (Eigen::Index i = 0; i < fwd.exponents.size(); ++i) {
    std::vector<double> row{static_cast<double>(i), fwd.exponents(i)};
    for (const auto& [k, est] : fwd.running_estimates) row.push_back(est(i));
    csv.write_row(row);
  }
  csv.close();
  manifest.add_file(csv.path());
  manifest.measured()["n0"] = cls.n0;
  manifest.measured()["sum_exponents"] = summary.sum_exponents;
  manifest.measured()["mean_log_abs_det"] = summary.mean_log_abs_det;
  manifest.measured()["min_exponent_gap"] = cls.min_gap;
  manifest.write();
  return summary;
}

int report_run(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw contract_error("no manifest.json in " + run_dir.string());
  json manifest;
  in >> manifest;
  const ExperimentConfig config = config_from_json(manifest.at("config"));
  const int n0 = manifest.at("measured").at("n0").get<int>();

  const CsvTable cov = read_csv(run_dir / "cov_trace_run1.csv");
  const CsvTable exps = read_csv(run_dir / "exponents.csv");
  const Eigen::Index n = static_cast<Eigen::Index>(exps.rows.size());
  Vector exponents(n);
  const int lambda_col = exps.column("lambda");
  for (Eigen::Index i = 0; i < n; ++i) exponents(i) = exps.rows[static_cast<std::size_t>(i)][lambda_col];

  std::vector<Vector> trace;
  trace.reserve(cov.rows.size());
  for (const auto& row : cov.rows) {
    Vector eig(n);
    for (Eigen::Index i = 0; i < n; ++i) eig(i) = row[static_cast<std::size_t>(i) + 1];
    trace.push_back(std::move(eig));
  }

  DecayFitOptions fit_opts;
  fit_opts.k_min = std::min(50, static_cast<int>(trace.size()) / 10);
  fit_opts.k_max = static_cast<int>(trace.size()) - 1;
  std::vector<DecayFitEntry> fits;
  if (fit_opts.k_max > fit_opts.k_min + 1 && n0 < n)
    fits = eigen_decay_fit(trace, exponents, n0, fit_opts);

  json report;
  report["run_dir"] = run_dir.string();
  report["suite"] = config.suite;
  report["n0"] = n0;
  json table = json::array();
  for (const auto& e : fits)
    table.push_back(json{{"index", e.index},
                         {"slope", e.slope},
                         {"reference", e.reference},
                         {"residual_rms", e.residual_rms},
                         {"points", e.points},
                         {"truncated", e.truncated}});
  report["decay_fits"] = table;
  std::ofstream os(run_dir / "report.json");
  os << report.dump(2) << '\n';
  return 0;
}

}  // namespace kfcov
