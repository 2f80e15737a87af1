// qid -- multi-user quickest intruder detection benchmark CLI.
//
// Subcommands: enroll, simulate, run, sweep, report. Configuration comes
// from a JSON file (--config); individual flags override file values.
// QID_LOG=debug|info|warn|quiet controls stderr verbosity.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qid/experiment.hpp"
#include "qid/log.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string mode;
  std::string algorithms;
  std::string users;
  std::string alphas;
  std::string out_dir;
  std::string data_path;
  std::uint64_t seed = 0;
  unsigned jobs = 0;
  bool trace = false;

  CLI::Option* mode_opt = nullptr;
  CLI::Option* algorithms_opt = nullptr;
  CLI::Option* users_opt = nullptr;
  CLI::Option* alphas_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* data_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* trace_opt = nullptr;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON experiment configuration");
  f.mode_opt = cmd->add_option("--mode", f.mode, "synthetic or dataset");
  f.algorithms_opt = cmd->add_option("--algorithms", f.algorithms,
                                     "comma list: MQID,DEMQID,CUSUM_MIN_LLR,SSA,TIME_DECAY");
  f.users_opt = cmd->add_option("--users", f.users, "enrolled users per trial, e.g. 3 or 1..7");
  f.seed_opt = cmd->add_option("--seed", f.seed, "master seed; all randomness derives from it");
  f.jobs_opt = cmd->add_option("--jobs", f.jobs, "worker threads for trial execution");
  f.alphas_opt = cmd->add_option("--alpha", f.alphas, "comma list of PFD targets, e.g. 0.02,0.05");
  f.out_opt = cmd->add_option("--out", f.out_dir, "output directory");
  f.data_opt = cmd->add_option("--data", f.data_path, "feature CSV (dataset mode)");
  f.trace_opt = cmd->add_flag("--trace", f.trace, "emit a detector trace CSV per run");
}

// Flags override file values only when actually given on the command line.
qid::ExperimentConfig resolve_config(const CommonFlags& f) {
  qid::ExperimentConfig cfg;
  if (!f.config_path.empty()) cfg = qid::load_config_file(f.config_path);
  if (f.mode_opt->count() > 0) {
    if (f.mode == "synthetic") cfg.mode = qid::ExperimentMode::Synthetic;
    else if (f.mode == "dataset") cfg.mode = qid::ExperimentMode::Dataset;
    else throw qid::ConfigError("mode", "expected \"synthetic\" or \"dataset\"");
  }
  if (f.algorithms_opt->count() > 0) cfg.algorithms = qid::parse_algorithms(f.algorithms);
  if (f.users_opt->count() > 0)
    std::tie(cfg.users_min, cfg.users_max) = qid::parse_users_range(f.users);
  if (f.seed_opt->count() > 0) cfg.seed = f.seed;
  if (f.jobs_opt->count() > 0) cfg.jobs = f.jobs;
  if (f.alphas_opt->count() > 0) cfg.alphas = qid::parse_alphas(f.alphas);
  if (f.out_opt->count() > 0) cfg.out_dir = f.out_dir;
  if (f.data_opt->count() > 0) cfg.dataset.path = f.data_path;
  if (f.trace_opt->count() > 0) cfg.trace = f.trace;
  qid::validate_config(cfg);
  return cfg;
}

int with_resolved_config(const CommonFlags& f, int (*runner)(const qid::ExperimentConfig&)) {
  try {
    return runner(resolve_config(f));
  } catch (...) {
    return qid::exit_code_for(std::current_exception());
  }
}

}  // namespace

int main(int argc, char** argv) {
  qid::log_level();  // latch QID_LOG before any work

  CLI::App app{"multi-user quickest intruder detection benchmark"};
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags, simulate_flags, enroll_flags;
  std::string report_dir = "out";

  CLI::App* cmd_run = app.add_subcommand("run", "full experiment: trials, detectors, reports");
  add_common_flags(cmd_run, run_flags);

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "threshold sweep only: curves and reports");
  add_common_flags(cmd_sweep, sweep_flags);

  CLI::App* cmd_simulate =
      app.add_subcommand("simulate", "generate trials: manifests and stream CSVs");
  add_common_flags(cmd_simulate, simulate_flags);

  CLI::App* cmd_enroll = app.add_subcommand("enroll", "build user profiles from a feature CSV");
  add_common_flags(cmd_enroll, enroll_flags);

  CLI::App* cmd_report =
      app.add_subcommand("report", "recompute metrics from emitted outcome CSVs");
  cmd_report->add_option("--out", report_dir, "directory holding outcomes_*.csv");

  CLI11_PARSE(app, argc, argv);

  if (cmd_run->parsed()) return with_resolved_config(run_flags, &qid::run_experiment);
  if (cmd_sweep->parsed()) return with_resolved_config(sweep_flags, &qid::run_sweep);
  if (cmd_simulate->parsed()) return with_resolved_config(simulate_flags, &qid::run_simulate);
  if (cmd_enroll->parsed()) return with_resolved_config(enroll_flags, &qid::run_enroll);
  if (cmd_report->parsed()) return qid::run_report(report_dir);
  return 1;
}
