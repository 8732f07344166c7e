#include "kfcov/experiment.hpp"
#include "kfcov/types.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <exception>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

void add_common_options(CLI::App* cmd, kfcov::ExperimentConfig& config, std::string& config_file) {
  cmd->add_option("--config", config_file, "flat key=value config file, overridden by flags");
  cmd->add_option("--suite", config.suite, "experiment suite: exp1 | exp2 | exp3");
  cmd->add_option("--n", config.n, "state dimension (default per suite)");
  cmd->add_option("--d", config.d, "observation dimension (default per suite)");
  cmd->add_option("--steps", config.steps, "number of filter steps K");
  cmd->add_option("--seed", config.seed, "PRNG seed");
  cmd->add_option("--rank", config.rank, "initial covariance rank (-1: full)");
  cmd->add_option("--rank2", config.rank2, "second-run initial rank (0: single run)");
  cmd->add_option("--obs", config.obs, "observation operator: dense | first");
  cmd->add_option("--out", config.out_dir, "output directory");
  cmd->add_option("--gain", config.propagator_gain, "random propagator gain (scale gain/sqrt(n))");
  cmd->add_option("--rank-threshold", config.rank_threshold, "numerical rank threshold");
  cmd->add_option("--neutral-tol", config.neutral_tol, "neutral exponent tolerance");
  cmd->add_option("--stride", config.trace_stride, "diagnostic trace stride (0: auto)");
  cmd->add_option("--forcing", config.forcing, "Lorenz-95 forcing");
  cmd->add_option("--dt", config.obs_interval, "Lorenz-95 observation interval");
  cmd->add_option("--substeps", config.substeps, "Lorenz-95 integrator substeps");
  cmd->add_option("--spinup", config.spinup, "Lorenz-95 spin-up steps");
  cmd->add_flag("--no-clv", [&config](std::int64_t) { config.clv_diagnostics = false; },
                "skip covariant-vector diagnostics");
}

void merge_config_file(kfcov::ExperimentConfig& config, CLI::App* cmd, const std::string& config_file) {
  if (config_file.empty()) return;
  kfcov::ExperimentConfig from_file = kfcov::load_config_file(config_file);
  // Command-line flags win over file values.
  kfcov::ExperimentConfig flags = config;
  config = from_file;
  for (const auto* opt : cmd->get_options()) {
    if (opt->count() == 0) continue;
    const std::string& name = opt->get_name();
    if (name == "--suite") config.suite = flags.suite;
    else if (name == "--n") config.n = flags.n;
    else if (name == "--d") config.d = flags.d;
    else if (name == "--steps") config.steps = flags.steps;
    else if (name == "--seed") config.seed = flags.seed;
    else if (name == "--rank") config.rank = flags.rank;
    else if (name == "--rank2") config.rank2 = flags.rank2;
    else if (name == "--obs") config.obs = flags.obs;
    else if (name == "--out") config.out_dir = flags.out_dir;
    else if (name == "--gain") config.propagator_gain = flags.propagator_gain;
    else if (name == "--rank-threshold") config.rank_threshold = flags.rank_threshold;
    else if (name == "--neutral-tol") config.neutral_tol = flags.neutral_tol;
    else if (name == "--stride") config.trace_stride = flags.trace_stride;
    else if (name == "--forcing") config.forcing = flags.forcing;
    else if (name == "--dt") config.obs_interval = flags.obs_interval;
    else if (name == "--substeps") config.substeps = flags.substeps;
    else if (name == "--spinup") config.spinup = flags.spinup;
    else if (name == "--no-clv") config.clv_diagnostics = flags.clv_diagnostics;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kalman filter covariance dynamics: experiments, Lyapunov analysis, oracle checks"};
  app.require_subcommand(1);

  kfcov::ExperimentConfig run_config;
  std::string run_config_file;
  std::string run_manifest;
  CLI::App* run = app.add_subcommand("run", "run an experiment suite and emit diagnostics");
  add_common_options(run, run_config, run_config_file);
  run->add_option("--from-manifest", run_manifest, "re-run the configuration stored in a manifest");

  kfcov::ExperimentConfig cc_config;
  cc_config.n = 10;
  cc_config.d = 4;
  cc_config.steps = 50;
  cc_config.rank = 4;
  cc_config.propagator_gain = 1.1;
  cc_config.out_dir = "cross_check_out";
  std::string cc_config_file;
  CLI::App* cc = app.add_subcommand(
      "cross-check", "propagate one sequence through Riccati, closed-form and symplectic routes");
  add_common_options(cc, cc_config, cc_config_file);

  kfcov::ExperimentConfig ly_config;
  ly_config.steps = 10000;
  ly_config.out_dir = "lyapunov_out";
  std::string ly_config_file;
  CLI::App* ly = app.add_subcommand("lyapunov", "QR-method exponents only");
  add_common_options(ly, ly_config, ly_config_file);

  std::string report_dir;
  CLI::App* rep = app.add_subcommand("report", "re-derive diagnostics from a stored run directory");
  rep->add_option("run_dir", report_dir, "run directory with manifest.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run->parsed()) {
      kfcov::ExperimentConfig config = run_config;
      if (!run_manifest.empty()) {
        config = kfcov::config_from_manifest(run_manifest);
      } else {
        merge_config_file(config, run, run_config_file);
      }
      const kfcov::RunSummary summary = kfcov::run_experiment(config);
      std::printf("run complete: n0=%d out=%s\n", summary.n0, summary.out_dir.string().c_str());
    } else if (cc->parsed()) {
      kfcov::ExperimentConfig config = cc_config;
      merge_config_file(config, cc, cc_config_file);
      const kfcov::CrossCheckSummary summary = kfcov::cross_check(config);
      std::printf("cross-check complete: max deviation %.3e, conditioning break at k=%d\n",
                  summary.max_deviation, summary.conditioning_break_k);
    } else if (ly->parsed()) {
      kfcov::ExperimentConfig config = ly_config;
      merge_config_file(config, ly, ly_config_file);
      const kfcov::LyapunovSummary summary = kfcov::lyapunov_run(config);
      std::printf("lyapunov pass complete: n0=%d sum(lambda)=%.6f mean ln|det M|=%.6f\n", summary.n0,
                  summary.sum_exponents, summary.mean_log_abs_det);
    } else if (rep->parsed()) {
      kfcov::report_run(report_dir);
      std::printf("report written to %s/report.json\n", report_dir.c_str());
    }
  } catch (const kfcov::contract_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const kfcov::numerical_error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  }
  return kExitOk;
}
