// Twin-experiment orchestration: configs, seeded trials, RMSE summaries,
// precision profiles, dimension sweeps and gain-error studies.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "penkf/filters.hpp"
#include "penkf/selection.hpp"

namespace penkf {

struct ModelSpec {
  std::string type = "lorenz96";  // "lorenz96" | "identity"
  Index p = 40;
  double forcing = 8.0;
  double dt = 0.01;
  int steps_per_cycle = 40;

  bool operator==(const ModelSpec&) const = default;
};

struct ObservationSpec {
  std::string pattern = "odd";  // "odd" | "all"
  double variance = 0.5;

  bool operator==(const ObservationSpec&) const = default;
};

struct MethodSpec {
  std::string type = "penkf";  // "enkf" | "taper" | "penkf"
  double taper_c = 10.0;
  bool cyclic = true;
  std::optional<double> c_lambda;  // penkf: selected from a free run when absent
  bool penalize_diagonal = true;
  double glasso_tol = 1e-6;
  int max_sweeps = 200;
  bool warm_start = false;

  bool operator==(const MethodSpec&) const = default;
};

struct SelectionSpec {
  double c_min = 0.1;
  double c_max = 10.0;
  int points = 20;
  Index spacing = 100;
  Index burn_in = 10;
  std::optional<Index> count;  // defaults to the ensemble size
  std::string criterion = "auto";  // "auto" | "ebic" | "bic"
  double gamma = 0.5;
  bool standardize = true;  // score on the correlation scale
  bool refit = false;       // score the unpenalized fit on each edge set

  bool operator==(const SelectionSpec&) const = default;
};

struct ExperimentConfig {
  ModelSpec model;
  ObservationSpec observation;
  std::vector<MethodSpec> methods;
  Index ensemble_size = 25;
  Index cycles = 2000;
  Index trials = 50;
  std::uint64_t seed = 1;
  std::string initial_ensemble = "standard_normal";  // "standard_normal" | "free_run"
  std::vector<Index> snapshot_cycles;
  SelectionSpec selection;
  double divergence_threshold = 1e3;
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& cfg);
void from_json(const nlohmann::json& j, ExperimentConfig& cfg);

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string print_config(const ExperimentConfig& cfg);

DynamicsModel make_model(const ModelSpec& spec);
ObservationOperator make_observation(const ObservationSpec& spec, Index p);

struct ResolvedMethod {
  MethodSpec spec;
  FilterMethod method;
  std::optional<Selection> selection;  // present when c_lambda was chosen from the path
  double lambda = 0.0;
};

/// Penalty selection ensemble for cfg (free run, seeded from the base seed).
Ensemble selection_ensemble(const ExperimentConfig& cfg);

/// Builds the filter for each method; penkf without c_lambda runs select_penalty once.
std::vector<ResolvedMethod> resolve_methods(const ExperimentConfig& cfg);

struct TrialResult {
  std::string method;
  Index trial = 0;
  std::vector<double> rmse_series;
  double wall_seconds = 0.0;
  bool diverged = false;
  Index divergence_cycle = 0;
  std::string divergence_reason;
  std::vector<PrecisionEstimate> snapshots;
};

/// Simulates truth and observations for (seed, trial_index), then runs the filter.
/// Divergence (non-finite ensemble, RMSE above the threshold, solver failure)
/// sets the flag and halts the trial.
TrialResult run_trial(const ExperimentConfig& cfg, const ResolvedMethod& method,
                      Index trial_index);

struct SummaryRow {
  std::string method;
  double q10 = 0.0, q50 = 0.0, mean = 0.0, q90 = 0.0;
  double sd_q10 = 0.0, sd_q50 = 0.0, sd_mean = 0.0, sd_q90 = 0.0;
  Index divergent = 0;
  Index summarized = 0;
};

using SummaryTable = std::vector<SummaryRow>;

/// Linear-interpolation (type 7) quantile of an unsorted sample.
double quantile_type7(std::vector<double> values, double prob);

/// Per-trial statistics averaged over non-divergent trials, with sample
/// standard deviations across trials.
SummaryRow summarize(const std::string& method, std::span<const TrialResult> results);

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<ResolvedMethod> methods;
  std::vector<std::vector<TrialResult>> trials;  // [method][trial]
  SummaryTable summary;
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Runs every (method, trial) pair on a pool of workers; results do not
/// depend on the number of workers. workers = 0 uses hardware concurrency.
ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned workers = 0,
                                const ProgressFn& progress = {});

/// Average of Theta(i, i+k) / Theta(i, i) over rows i and snapshots, for
/// k = -half_width..half_width (cyclic).
std::vector<double> precision_profile(std::span<const PrecisionEstimate> snapshots,
                                      Index half_width);
std::vector<double> precision_profile(std::span<const Matrix> thetas, Index half_width);

struct SweepStat {
  std::string method;
  double mean = 0.0;
  double sd = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Index divergent = 0;
  Index summarized = 0;
};

struct SweepPoint {
  Index p = 0;
  std::vector<SweepStat> stats;
  std::vector<ResolvedMethod> methods;
};

/// mean +- 1.96 sd / sqrt(trials) of the per-trial mean RMSE.
SweepStat mean_rmse_interval(const std::string& method, std::span<const TrialResult> results);

/// Runs base_cfg at each p with a free-run initial ensemble.
std::vector<SweepPoint> dimension_sweep(const ExperimentConfig& base_cfg,
                                        const std::vector<Index>& p_list, unsigned workers = 0,
                                        const ProgressFn& progress = {});

struct GainErrorConfig {
  ModelSpec model;
  ObservationSpec observation;
  Index n = 25;
  Index reference_n = 2000;
  std::vector<Index> checkpoints{30, 60};
  Index trials = 50;
  std::uint64_t seed = 1;
  double taper_c = 10.0;
  std::optional<double> c_lambda;
  SelectionSpec selection;
  GlassoOptions options;
};

struct GainErrorTrial {
  Index trial = 0;
  double sse_sample = 0.0;
  double sse_tapered = 0.0;
  double sse_penalized = 0.0;
};

struct GainErrorResult {
  double c_lambda = 0.0;
  double lambda = 0.0;
  std::vector<GainErrorTrial> trials;

  double fraction_penalized_better() const;
};

/// The reference gain comes from a reference_n-member EnKF; at each checkpoint
/// the first n members of the reference forecast ensemble form the subsample
/// whose sample, tapered and penalized gains are scored by squared Frobenius
/// error, summed over checkpoints.
GainErrorResult gain_error_experiment(const GainErrorConfig& cfg, unsigned workers = 0);

void write_series_csv(std::ostream& out, std::span<const TrialResult> results);
void write_summary_csv(std::ostream& out, const SummaryTable& table);
void write_profile_csv(std::ostream& out, const std::vector<double>& profile);
void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& sweep);
void write_gain_error_csv(std::ostream& out, const GainErrorResult& result);

/// Run metadata (config, seeds, selections, timings) as JSON.
nlohmann::json experiment_metadata(const ExperimentResult& result);

}  // namespace penkf
