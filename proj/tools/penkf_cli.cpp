// penkf: run twin experiments, penalty selection, precision profiles,
// dimension sweeps and gain-error studies from a JSON config.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "penkf/csv.hpp"
#include "penkf/harness.hpp"

namespace fs = std::filesystem;
using namespace penkf;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<Index> trials;
  std::optional<Index> cycles;
  std::optional<std::string> out;
  unsigned workers = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", opts.seed, "Override the base seed");
  cmd->add_option("--trials", opts.trials, "Override the number of trials");
  cmd->add_option("--cycles", opts.cycles, "Override the number of assimilation cycles");
  cmd->add_option("--out", opts.out, "Output directory");
  cmd->add_option("-j,--workers", opts.workers, "Worker threads (0 = all cores)");
  cmd->add_flag("-q,--quiet", opts.quiet, "No progress output");
}

ExperimentConfig load_with_overrides(const CommonOptions& opts) {
  ExperimentConfig cfg = load_config(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.trials) cfg.trials = *opts.trials;
  if (opts.cycles) {
    cfg.cycles = *opts.cycles;
    std::erase_if(cfg.snapshot_cycles, [&](Index c) { return c > cfg.cycles; });
  }
  if (opts.out) cfg.output_dir = *opts.out;
  cfg.validate();
  return cfg;
}

fs::path prepare_output(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

ProgressFn progress_printer(bool quiet) {
  if (quiet) return {};
  return [](std::size_t done, std::size_t total) {
    std::cerr << "\r  " << done << "/" << total << " trials" << (done == total ? "\n" : "")
              << std::flush;
  };
}

void print_summary(const SummaryTable& table) {
  std::cout << "method      q10      q50     mean      q90  divergent\n";
  for (const SummaryRow& r : table) {
    std::printf("%-8s %8.3f %8.3f %8.3f %8.3f  %ld\n", r.method.c_str(), r.q10, r.q50, r.mean,
                r.q90, static_cast<long>(r.divergent));
  }
}

int cmd_run(const CommonOptions& opts) {
  const ExperimentConfig cfg = load_with_overrides(opts);
  const fs::path dir = prepare_output(cfg);
  const ExperimentResult result = run_experiment(cfg, opts.workers, progress_printer(opts.quiet));
  for (std::size_t m = 0; m < result.methods.size(); ++m) {
    std::ofstream series =
        open_output(dir / ("series_" + std::to_string(m) + "_" + result.methods[m].spec.type + ".csv"));
    write_series_csv(series, result.trials[m]);
  }
  std::ofstream summary = open_output(dir / "summary.csv");
  write_summary_csv(summary, result.summary);
  std::ofstream meta = open_output(dir / "metadata.json");
  meta << experiment_metadata(result).dump(2) << '\n';
  print_summary(result.summary);
  return 0;
}

int cmd_select(const CommonOptions& opts) {
  const ExperimentConfig cfg = load_with_overrides(opts);
  const fs::path dir = prepare_output(cfg);
  ExperimentConfig sel = cfg;
  MethodSpec penkf;
  for (const MethodSpec& m : cfg.methods) {
    if (m.type == "penkf") penkf = m;
  }
  penkf.c_lambda.reset();
  sel.methods = {penkf};
  const ResolvedMethod rm = resolve_methods(sel).front();
  const PathResult& path = rm.selection->path;
  std::ofstream csv = open_output(dir / "path.csv");
  write_path_csv(csv, path);

  std::printf("criterion %s (gamma %.2f), n = %ld, p = %ld\n",
              path.criterion_used == Criterion::ebic ? "eBIC" : "BIC", path.gamma_used,
              static_cast<long>(path.n), static_cast<long>(path.p));
  std::printf("  %10s %10s %6s %14s %14s %10s\n", "c", "lambda", "edges", "loglik", "score", "kkt");
  for (std::size_t i = 0; i < path.points.size(); ++i) {
    const PathPoint& pt = path.points[i];
    std::printf("%s %10.4f %10.4f %6ld %14.4f %14.4f %10.2e\n",
                i == path.chosen_index ? "*" : " ", pt.c, pt.lambda, static_cast<long>(pt.edges),
                pt.loglik, pt.score, pt.kkt);
  }
  std::printf("selected c_lambda = %s (lambda for n = %ld: %s)\n",
              format_double(rm.selection->c_lambda).c_str(), static_cast<long>(cfg.ensemble_size),
              format_double(rm.lambda).c_str());
  return 0;
}

int cmd_profile(const CommonOptions& opts, Index half_width) {
  ExperimentConfig cfg = load_with_overrides(opts);
  std::erase_if(cfg.methods, [](const MethodSpec& m) { return m.type != "penkf"; });
  if (cfg.methods.empty()) throw Error("profile: config has no penkf method");
  cfg.methods.resize(1);
  if (cfg.snapshot_cycles.empty()) {
    for (Index c : {500, 1000, 1500, 2000}) {
      if (c <= cfg.cycles) cfg.snapshot_cycles.push_back(c);
    }
    if (cfg.snapshot_cycles.empty()) cfg.snapshot_cycles.push_back(cfg.cycles);
  }
  const fs::path dir = prepare_output(cfg);
  const ExperimentResult result = run_experiment(cfg, opts.workers, progress_printer(opts.quiet));
  std::vector<PrecisionEstimate> snapshots;
  for (const TrialResult& t : result.trials.front()) {
    snapshots.insert(snapshots.end(), t.snapshots.begin(), t.snapshots.end());
  }
  const std::vector<double> profile = precision_profile(snapshots, half_width);
  std::ofstream csv = open_output(dir / "profile.csv");
  write_profile_csv(csv, profile);
  write_profile_csv(std::cout, profile);
  return 0;
}

int cmd_sweep(const CommonOptions& opts, const std::vector<Index>& p_list) {
  const ExperimentConfig cfg = load_with_overrides(opts);
  const fs::path dir = prepare_output(cfg);
  const auto sweep = dimension_sweep(cfg, p_list, opts.workers, progress_printer(opts.quiet));
  std::ofstream csv = open_output(dir / "sweep.csv");
  write_sweep_csv(csv, sweep);
  write_sweep_csv(std::cout, sweep);
  return 0;
}

int cmd_gain_error(const CommonOptions& opts, Index reference_n,
                   const std::vector<Index>& checkpoints) {
  const ExperimentConfig cfg = load_with_overrides(opts);
  const fs::path dir = prepare_output(cfg);
  GainErrorConfig ge;
  ge.model = cfg.model;
  ge.observation = cfg.observation;
  ge.n = cfg.ensemble_size;
  ge.reference_n = reference_n;
  ge.checkpoints = checkpoints;
  ge.trials = cfg.trials;
  ge.seed = cfg.seed;
  ge.selection = cfg.selection;
  for (const MethodSpec& m : cfg.methods) {
    if (m.type == "taper") ge.taper_c = m.taper_c;
    if (m.type == "penkf") {
      ge.c_lambda = m.c_lambda;
      ge.options.tol = m.glasso_tol;
      ge.options.max_sweeps = m.max_sweeps;
    }
  }
  const GainErrorResult result = gain_error_experiment(ge, opts.workers);
  std::ofstream csv = open_output(dir / "gain_error.csv");
  write_gain_error_csv(csv, result);
  std::printf("c_lambda = %s, lambda = %s\n", format_double(result.c_lambda).c_str(),
              format_double(result.lambda).c_str());
  std::printf("SSE(penalized) < SSE(sample) in %.1f%% of %zu trials\n",
              100.0 * result.fraction_penalized_better(), result.trials.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalized ensemble Kalman filter experiments"};
  app.require_subcommand(1);

  CommonOptions run_opts, select_opts, profile_opts, sweep_opts, gain_opts;
  auto* run = app.add_subcommand("run", "Run an experiment and write series/summary CSVs");
  add_common(run, run_opts);

  auto* select = app.add_subcommand("select", "Penalty path with eBIC/BIC scores");
  add_common(select, select_opts);

  Index half_width = 20;
  auto* profile = app.add_subcommand("profile", "Averaged normalized precision-matrix rows");
  add_common(profile, profile_opts);
  profile->add_option("--half-width", half_width, "Offsets -w..w around the diagonal");

  std::vector<Index> p_list{40, 80, 120};
  auto* sweep = app.add_subcommand("sweep", "Mean RMSE with 95% intervals over state dimensions");
  add_common(sweep, sweep_opts);
  sweep->add_option("--p-list", p_list, "State dimensions")->delimiter(',');

  Index reference_n = 2000;
  std::vector<Index> checkpoints{30, 60};
  auto* gain = app.add_subcommand("gain-error", "Squared gain errors against a large reference ensemble");
  add_common(gain, gain_opts);
  gain->add_option("--reference-n", reference_n, "Reference ensemble size");
  gain->add_option("--checkpoints", checkpoints, "Cycles at which gains are compared")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts);
    if (*select) return cmd_select(select_opts);
    if (*profile) return cmd_profile(profile_opts, half_width);
    if (*sweep) return cmd_sweep(sweep_opts, p_list);
    if (*gain) return cmd_gain_error(gain_opts, reference_n, checkpoints);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
