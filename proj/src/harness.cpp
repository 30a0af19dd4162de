#include "penkf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "penkf/csv.hpp"

namespace penkf {
namespace {

using nlohmann::json;

// Stream ids for RngStream::derive.
constexpr std::uint64_t kTruthStream = 1;
constexpr std::uint64_t kObservationStream = 2;
constexpr std::uint64_t kInitialStream = 3;
constexpr std::uint64_t kFilterStream = 4;
constexpr std::uint64_t kSelectionStream = 0x5e1ec7;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw Error("config: '" + where + "' must be an object");
  for (const auto& item : j.items()) {
    if (!allowed.contains(item.key())) {
      throw Error("config: unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json method_to_json(const MethodSpec& m) {
  return {{"type", m.type},
          {"taper_c", m.taper_c},
          {"cyclic", m.cyclic},
          {"c_lambda", m.c_lambda ? json(*m.c_lambda) : json(nullptr)},
          {"penalize_diagonal", m.penalize_diagonal},
          {"glasso_tol", m.glasso_tol},
          {"max_sweeps", m.max_sweeps},
          {"warm_start", m.warm_start}};
}

MethodSpec method_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"type", "taper_c", "cyclic", "c_lambda", "penalize_diagonal", "glasso_tol",
                       "max_sweeps", "warm_start"},
                      "methods[]");
  MethodSpec m;
  read(j, "type", m.type);
  read(j, "taper_c", m.taper_c);
  read(j, "cyclic", m.cyclic);
  if (j.contains("c_lambda") && !j.at("c_lambda").is_null()) {
    m.c_lambda = j.at("c_lambda").get<double>();
  }
  read(j, "penalize_diagonal", m.penalize_diagonal);
  read(j, "glasso_tol", m.glasso_tol);
  read(j, "max_sweeps", m.max_sweeps);
  read(j, "warm_start", m.warm_start);
  return m;
}

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double mean_of(const std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

Criterion parse_criterion(const std::string& name) {
  if (name == "auto") return Criterion::automatic;
  if (name == "ebic") return Criterion::ebic;
  if (name == "bic") return Criterion::bic;
  throw Error("config: unknown selection criterion '" + name + "'");
}

// Runs fn(i) for i in [0, count) on a pool of workers and rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t count, unsigned workers, const ProgressFn& progress, Fn&& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
      std::lock_guard lock(mutex);
      ++done;
      if (progress) progress(done, count);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (model.type != "lorenz96" && model.type != "identity") {
    throw Error("config: unknown model type '" + model.type + "'");
  }
  if (model.type == "lorenz96" && model.p < 4) throw Error("config: lorenz96 needs p >= 4");
  if (model.p < 1) throw Error("config: model.p must be >= 1");
  if (!(model.dt > 0.0) || model.steps_per_cycle < 1) {
    throw Error("config: invalid integration settings");
  }
  if (observation.pattern != "odd" && observation.pattern != "all") {
    throw Error("config: unknown observation pattern '" + observation.pattern + "'");
  }
  if (observation.pattern == "odd" && model.p % 2 != 0) {
    throw Error("config: the odd-coordinate observation pattern needs an even p");
  }
  if (!(observation.variance > 0.0)) throw Error("config: observation variance must be > 0");
  if (methods.empty()) throw Error("config: no filter methods");
  for (const MethodSpec& m : methods) {
    if (m.type != "enkf" && m.type != "taper" && m.type != "penkf") {
      throw Error("config: unknown method type '" + m.type + "'");
    }
    if (m.type == "taper" && !(m.taper_c > 0.0)) throw Error("config: taper_c must be > 0");
    if (m.c_lambda && !(*m.c_lambda >= 0.0)) throw Error("config: c_lambda must be >= 0");
    if (!(m.glasso_tol > 0.0) || m.max_sweeps < 1) throw Error("config: invalid glasso settings");
  }
  if (ensemble_size < 2) throw Error("config: ensemble_size must be >= 2");
  if (cycles < 1) throw Error("config: cycles must be >= 1");
  if (trials < 1) throw Error("config: trials must be >= 1");
  if (initial_ensemble != "standard_normal" && initial_ensemble != "free_run") {
    throw Error("config: unknown initial_ensemble '" + initial_ensemble + "'");
  }
  for (Index c : snapshot_cycles) {
    if (c < 1 || c > cycles) throw Error("config: snapshot cycle out of range");
  }
  if (selection.spacing < 1 || selection.burn_in < 0 || selection.points < 2) {
    throw Error("config: invalid selection settings");
  }
  if (selection.count && *selection.count < 2) throw Error("config: selection.count must be >= 2");
  parse_criterion(selection.criterion);
  if (!(divergence_threshold > 0.0)) throw Error("config: divergence_threshold must be > 0");
}

void to_json(json& j, const ExperimentConfig& cfg) {
  json methods = json::array();
  for (const MethodSpec& m : cfg.methods) methods.push_back(method_to_json(m));
  j = json{
      {"model",
       {{"type", cfg.model.type},
        {"p", cfg.model.p},
        {"forcing", cfg.model.forcing},
        {"dt", cfg.model.dt},
        {"steps_per_cycle", cfg.model.steps_per_cycle}}},
      {"observation", {{"pattern", cfg.observation.pattern}, {"variance", cfg.observation.variance}}},
      {"methods", methods},
      {"ensemble_size", cfg.ensemble_size},
      {"cycles", cfg.cycles},
      {"trials", cfg.trials},
      {"seed", cfg.seed},
      {"initial_ensemble", cfg.initial_ensemble},
      {"snapshot_cycles", cfg.snapshot_cycles},
      {"selection",
       {{"c_min", cfg.selection.c_min},
        {"c_max", cfg.selection.c_max},
        {"points", cfg.selection.points},
        {"spacing", cfg.selection.spacing},
        {"burn_in", cfg.selection.burn_in},
        {"count", cfg.selection.count ? json(*cfg.selection.count) : json(nullptr)},
        {"criterion", cfg.selection.criterion},
        {"gamma", cfg.selection.gamma},
        {"standardize", cfg.selection.standardize},
        {"refit", cfg.selection.refit}}},
      {"divergence_threshold", cfg.divergence_threshold},
      {"output_dir", cfg.output_dir}};
}

void from_json(const json& j, ExperimentConfig& cfg) {
  reject_unknown_keys(j,
                      {"model", "observation", "methods", "ensemble_size", "cycles", "trials",
                       "seed", "initial_ensemble", "snapshot_cycles", "selection",
                       "divergence_threshold", "output_dir"},
                      "top level");
  cfg = ExperimentConfig{};
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown_keys(m, {"type", "p", "forcing", "dt", "steps_per_cycle"}, "model");
    read(m, "type", cfg.model.type);
    read(m, "p", cfg.model.p);
    read(m, "forcing", cfg.model.forcing);
    read(m, "dt", cfg.model.dt);
    read(m, "steps_per_cycle", cfg.model.steps_per_cycle);
  }
  if (j.contains("observation")) {
    const json& o = j.at("observation");
    reject_unknown_keys(o, {"pattern", "variance"}, "observation");
    read(o, "pattern", cfg.observation.pattern);
    read(o, "variance", cfg.observation.variance);
  }
  if (j.contains("methods")) {
    if (!j.at("methods").is_array()) throw Error("config: 'methods' must be an array");
    for (const json& m : j.at("methods")) cfg.methods.push_back(method_from_json(m));
  }
  read(j, "ensemble_size", cfg.ensemble_size);
  read(j, "cycles", cfg.cycles);
  read(j, "trials", cfg.trials);
  read(j, "seed", cfg.seed);
  read(j, "initial_ensemble", cfg.initial_ensemble);
  read(j, "snapshot_cycles", cfg.snapshot_cycles);
  if (j.contains("selection")) {
    const json& s = j.at("selection");
    reject_unknown_keys(
        s, {"c_min", "c_max", "points", "spacing", "burn_in", "count", "criterion", "gamma",
            "standardize", "refit"},
        "selection");
    read(s, "c_min", cfg.selection.c_min);
    read(s, "c_max", cfg.selection.c_max);
    read(s, "points", cfg.selection.points);
    read(s, "spacing", cfg.selection.spacing);
    read(s, "burn_in", cfg.selection.burn_in);
    if (s.contains("count") && !s.at("count").is_null()) {
      cfg.selection.count = s.at("count").get<Index>();
    }
    read(s, "criterion", cfg.selection.criterion);
    read(s, "gamma", cfg.selection.gamma);
    read(s, "standardize", cfg.selection.standardize);
    read(s, "refit", cfg.selection.refit);
  }
  read(j, "divergence_threshold", cfg.divergence_threshold);
  read(j, "output_dir", cfg.output_dir);
}

ExperimentConfig parse_config(const std::string& json_text) {
  ExperimentConfig cfg;
  try {
    cfg = json::parse(json_text).get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config(buffer.str());
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string print_config(const ExperimentConfig& cfg) { return json(cfg).dump(2); }

DynamicsModel make_model(const ModelSpec& spec) {
  if (spec.type == "lorenz96") {
    return lorenz96_model({spec.p, spec.forcing, spec.dt, spec.steps_per_cycle});
  }
  if (spec.type == "identity") return identity_model(spec.p);
  throw Error("unknown model type '" + spec.type + "'");
}

ObservationOperator make_observation(const ObservationSpec& spec, Index p) {
  if (spec.pattern == "odd") return ObservationOperator::odd_coordinates(p, spec.variance);
  if (spec.pattern == "all") return ObservationOperator::full(p, spec.variance);
  throw Error("unknown observation pattern '" + spec.pattern + "'");
}

Ensemble selection_ensemble(const ExperimentConfig& cfg) {
  RngStream rng = RngStream::derive(cfg.seed, kSelectionStream);
  const Index count = cfg.selection.count.value_or(cfg.ensemble_size);
  return free_forecast_ensemble(make_model(cfg.model), cfg.selection.spacing, count, rng,
                                cfg.selection.burn_in);
}

std::vector<ResolvedMethod> resolve_methods(const ExperimentConfig& cfg) {
  cfg.validate();
  const Index p = cfg.model.p;
  std::vector<ResolvedMethod> out;
  std::optional<Ensemble> representative;
  for (const MethodSpec& spec : cfg.methods) {
    ResolvedMethod rm{spec, EnkfMethod{}, std::nullopt, 0.0};
    if (spec.type == "taper") {
      rm.method = TaperMethod{build_taper(p, spec.taper_c, spec.cyclic)};
    } else if (spec.type == "penkf") {
      double c_lambda;
      if (spec.c_lambda) {
        c_lambda = *spec.c_lambda;
      } else {
        if (!representative) representative = selection_ensemble(cfg);
        PathConfig path;
        path.c_grid = log_spaced_grid(cfg.selection.c_min, cfg.selection.c_max,
                                      cfg.selection.points);
        path.base_scale = penalty_base_scale(cfg.observation.variance, p, representative->size());
        path.criterion = parse_criterion(cfg.selection.criterion);
        path.gamma = cfg.selection.gamma;
        path.standardize = cfg.selection.standardize;
        path.refit = cfg.selection.refit;
        path.penalize_diagonal = spec.penalize_diagonal;
        path.options.tol = spec.glasso_tol;
        path.options.max_sweeps = spec.max_sweeps;
        rm.selection = select_penalty(*representative, path);
        c_lambda = rm.selection->c_lambda;
      }
      rm.spec.c_lambda = c_lambda;
      rm.lambda = c_lambda * penalty_base_scale(cfg.observation.variance, p, cfg.ensemble_size);
      PenkfMethod method;
      method.penalty = PenaltyMatrix::scalar(p, rm.lambda, spec.penalize_diagonal);
      method.options.tol = spec.glasso_tol;
      method.options.max_sweeps = spec.max_sweeps;
      method.warm_start = spec.warm_start;
      rm.method = std::move(method);
    }
    out.push_back(std::move(rm));
  }
  return out;
}

TrialResult run_trial(const ExperimentConfig& cfg, const ResolvedMethod& method,
                      Index trial_index) {
  const auto start = std::chrono::steady_clock::now();
  TrialResult result;
  result.method = method.spec.type;
  result.trial = trial_index;

  const DynamicsModel model = make_model(cfg.model);
  const ObservationOperator obs = make_observation(cfg.observation, cfg.model.p);
  const std::uint64_t trial_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(trial_index));
  RngStream truth_rng = RngStream::derive(trial_seed, kTruthStream);
  RngStream obs_rng = RngStream::derive(trial_seed, kObservationStream);
  RngStream init_rng = RngStream::derive(trial_seed, kInitialStream);
  RngStream filter_rng = RngStream::derive(trial_seed, kFilterStream);

  const Index p = cfg.model.p;
  Vector truth = standard_normal(p, 1, truth_rng).col(0);
  FilterState state;
  if (cfg.initial_ensemble == "free_run") {
    state.ensemble = free_forecast_ensemble(model, cfg.selection.spacing, cfg.ensemble_size,
                                            init_rng, cfg.selection.burn_in);
  } else {
    state.ensemble = Ensemble(standard_normal(p, cfg.ensemble_size, init_rng));
  }
  const std::set<Index> snapshots(cfg.snapshot_cycles.begin(), cfg.snapshot_cycles.end());
  const Vector obs_sd = obs.noise().std_devs();

  result.rmse_series.reserve(static_cast<std::size_t>(cfg.cycles));
  for (Index t = 1; t <= cfg.cycles; ++t) {
    truth = model.evolve(truth);
    const Vector y = obs.h() * truth + obs_sd.cwiseProduct(standard_normal(obs.obs_dim(), 1, obs_rng).col(0));
    CycleOutput out;
    try {
      out = run_cycle(state, model, std::nullopt, obs, y, method.method, filter_rng);
    } catch (const Error& e) {
      result.diverged = true;
      result.divergence_cycle = t;
      result.divergence_reason = e.what();
      break;
    }
    const double err = rmse(out.estimate, truth);
    if (!std::isfinite(err) || err > cfg.divergence_threshold) {
      result.diverged = true;
      result.divergence_cycle = t;
      result.divergence_reason = "rmse " + format_double(err) + " above threshold";
      break;
    }
    result.rmse_series.push_back(err);
    if (snapshots.contains(t) && out.state.last_precision) {
      result.snapshots.push_back(*out.state.last_precision);
    }
    state = std::move(out.state);
  }
  result.wall_seconds = elapsed_since(start);
  return result;
}

double quantile_type7(std::vector<double> values, double prob) {
  if (values.empty()) throw Error("quantile_type7: empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw Error("quantile_type7: probability outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SummaryRow summarize(const std::string& method, std::span<const TrialResult> results) {
  SummaryRow row;
  row.method = method;
  std::vector<double> q10, q50, mean, q90;
  for (const TrialResult& r : results) {
    if (r.diverged || r.rmse_series.empty()) {
      ++row.divergent;
      continue;
    }
    q10.push_back(quantile_type7(r.rmse_series, 0.1));
    q50.push_back(quantile_type7(r.rmse_series, 0.5));
    mean.push_back(mean_of(r.rmse_series));
    q90.push_back(quantile_type7(r.rmse_series, 0.9));
  }
  if (q10.empty()) throw Error("summarize: all trials of '" + method + "' diverged");
  row.summarized = static_cast<Index>(q10.size());
  row.q10 = mean_of(q10);
  row.q50 = mean_of(q50);
  row.mean = mean_of(mean);
  row.q90 = mean_of(q90);
  row.sd_q10 = sample_sd(q10);
  row.sd_q50 = sample_sd(q50);
  row.sd_mean = sample_sd(mean);
  row.sd_q90 = sample_sd(q90);
  return row;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned workers,
                                const ProgressFn& progress) {
  ExperimentResult result;
  result.config = cfg;
  result.methods = resolve_methods(cfg);
  const std::size_t n_methods = result.methods.size();
  const auto n_trials = static_cast<std::size_t>(cfg.trials);
  result.trials.assign(n_methods, std::vector<TrialResult>(n_trials));

  parallel_for(n_methods * n_trials, workers, progress, [&](std::size_t task) {
    const std::size_t m = task / n_trials, t = task % n_trials;
    result.trials[m][t] = run_trial(cfg, result.methods[m], static_cast<Index>(t));
  });

  for (std::size_t m = 0; m < n_methods; ++m) {
    const std::string name = result.methods[m].spec.type;
    try {
      result.summary.push_back(summarize(name, result.trials[m]));
    } catch (const Error&) {
      SummaryRow row;
      row.method = name;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.q10 = row.q50 = row.mean = row.q90 = nan;
      row.sd_q10 = row.sd_q50 = row.sd_mean = row.sd_q90 = nan;
      row.divergent = cfg.trials;
      result.summary.push_back(row);
    }
  }
  return result;
}

std::vector<double> precision_profile(std::span<const Matrix> thetas, Index half_width) {
  if (thetas.empty()) throw Error("precision_profile: no snapshots");
  const Index p = thetas.front().rows();
  if (half_width < 0 || 2 * half_width > p) {
    throw Error("precision_profile: half_width must be in [0, p/2]");
  }
  std::vector<double> profile(static_cast<std::size_t>(2 * half_width + 1), 0.0);
  for (const Matrix& theta : thetas) {
    if (theta.rows() != p || theta.cols() != p) {
      throw Error("precision_profile: snapshots have different dimensions");
    }
    for (Index i = 0; i < p; ++i) {
      for (Index k = -half_width; k <= half_width; ++k) {
        const Index j = ((i + k) % p + p) % p;
        profile[static_cast<std::size_t>(k + half_width)] += theta(i, j) / theta(i, i);
      }
    }
  }
  const double count = static_cast<double>(thetas.size()) * static_cast<double>(p);
  for (double& v : profile) v /= count;
  return profile;
}

std::vector<double> precision_profile(std::span<const PrecisionEstimate> snapshots,
                                      Index half_width) {
  std::vector<Matrix> thetas;
  thetas.reserve(snapshots.size());
  for (const PrecisionEstimate& est : snapshots) thetas.push_back(est.theta());
  return precision_profile(std::span<const Matrix>(thetas), half_width);
}

SweepStat mean_rmse_interval(const std::string& method, std::span<const TrialResult> results) {
  SweepStat stat;
  stat.method = method;
  std::vector<double> means;
  for (const TrialResult& r : results) {
    if (r.diverged || r.rmse_series.empty()) {
      ++stat.divergent;
    } else {
      means.push_back(mean_of(r.rmse_series));
    }
  }
  stat.summarized = static_cast<Index>(means.size());
  if (means.empty()) {
    stat.mean = stat.sd = stat.ci_low = stat.ci_high = std::numeric_limits<double>::quiet_NaN();
    return stat;
  }
  stat.mean = mean_of(means);
  stat.sd = sample_sd(means);
  const double half = 1.96 * stat.sd / std::sqrt(static_cast<double>(means.size()));
  stat.ci_low = stat.mean - half;
  stat.ci_high = stat.mean + half;
  return stat;
}

std::vector<SweepPoint> dimension_sweep(const ExperimentConfig& base_cfg,
                                        const std::vector<Index>& p_list, unsigned workers,
                                        const ProgressFn& progress) {
  std::vector<SweepPoint> out;
  for (Index p : p_list) {
    if (p % 2 != 0) throw Error("dimension_sweep: every p must be even");
    ExperimentConfig cfg = base_cfg;
    cfg.model.p = p;
    cfg.initial_ensemble = "free_run";
    ExperimentResult res = run_experiment(cfg, workers, progress);
    SweepPoint point;
    point.p = p;
    for (std::size_t m = 0; m < res.methods.size(); ++m) {
      point.stats.push_back(mean_rmse_interval(res.methods[m].spec.type, res.trials[m]));
    }
    point.methods = std::move(res.methods);
    out.push_back(std::move(point));
  }
  return out;
}

double GainErrorResult::fraction_penalized_better() const {
  if (trials.empty()) return 0.0;
  std::size_t wins = 0;
  for (const GainErrorTrial& t : trials) wins += t.sse_penalized < t.sse_sample ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(trials.size());
}

GainErrorResult gain_error_experiment(const GainErrorConfig& cfg, unsigned workers) {
  if (cfg.n < 2 || cfg.reference_n < cfg.n) {
    throw Error("gain_error_experiment: need 2 <= n <= reference_n");
  }
  if (cfg.checkpoints.empty() || cfg.trials < 1) {
    throw Error("gain_error_experiment: need checkpoints and at least one trial");
  }
  const Index p = cfg.model.p;
  const DynamicsModel model = make_model(cfg.model);
  const ObservationOperator obs = make_observation(cfg.observation, p);
  const TaperMatrix taper = build_taper(p, cfg.taper_c, true);

  GainErrorResult result;
  if (cfg.c_lambda) {
    result.c_lambda = *cfg.c_lambda;
  } else {
    ExperimentConfig sel;
    sel.model = cfg.model;
    sel.observation = cfg.observation;
    sel.ensemble_size = cfg.n;
    sel.seed = cfg.seed;
    sel.selection = cfg.selection;
    MethodSpec penkf;
    penkf.glasso_tol = cfg.options.tol;
    penkf.max_sweeps = cfg.options.max_sweeps;
    sel.methods = {penkf};
    result.c_lambda = *resolve_methods(sel).front().spec.c_lambda;
  }
  result.lambda = result.c_lambda * penalty_base_scale(cfg.observation.variance, p, cfg.n);
  const PenaltyMatrix penalty = PenaltyMatrix::scalar(p, result.lambda);
  const std::set<Index> checkpoints(cfg.checkpoints.begin(), cfg.checkpoints.end());
  const Index last = *checkpoints.rbegin();
  const Vector obs_sd = obs.noise().std_devs();

  result.trials.resize(static_cast<std::size_t>(cfg.trials));
  parallel_for(result.trials.size(), workers, {}, [&](std::size_t trial) {
    const std::uint64_t seed = mix_seed(cfg.seed, trial);
    RngStream truth_rng = RngStream::derive(seed, kTruthStream);
    RngStream obs_rng = RngStream::derive(seed, kObservationStream);
    RngStream init_rng = RngStream::derive(seed, kInitialStream);
    RngStream filter_rng = RngStream::derive(seed, kFilterStream);

    GainErrorTrial out;
    out.trial = static_cast<Index>(trial);
    Vector truth = standard_normal(p, 1, truth_rng).col(0);
    FilterState state;
    state.ensemble = Ensemble(standard_normal(p, cfg.reference_n, init_rng));
    for (Index t = 1; t <= last; ++t) {
      truth = model.evolve(truth);
      const Vector y =
          obs.h() * truth + obs_sd.cwiseProduct(standard_normal(obs.obs_dim(), 1, obs_rng).col(0));
      FilterState forecast = forecast_step(state, model, std::nullopt, filter_rng);
      const KalmanGain reference = sample_gain(sample_covariance(forecast.ensemble), obs);
      if (checkpoints.contains(t)) {
        const Ensemble sub(forecast.ensemble.members().leftCols(cfg.n));
        const SymmetricMatrix s = sample_covariance(sub);
        const Matrix k_sample = sample_gain(s, obs).matrix;
        const Matrix k_taper = tapered_gain(s, taper, obs).matrix;
        const PrecisionEstimate prec = glasso_solve(s, penalty, cfg.options);
        const Matrix k_pen = precision_form_gain(prec.theta(), obs);
        out.sse_sample += (k_sample - reference.matrix).squaredNorm();
        out.sse_tapered += (k_taper - reference.matrix).squaredNorm();
        out.sse_penalized += (k_pen - reference.matrix).squaredNorm();
      }
      const Matrix d = perturb_observations(y, obs, cfg.reference_n, filter_rng);
      state.ensemble = analysis_update(forecast.ensemble, d, obs, reference);
    }
    result.trials[trial] = out;
  });
  return result;
}

void write_series_csv(std::ostream& out, std::span<const TrialResult> results) {
  out << "trial,cycle,rmse\n";
  for (const TrialResult& r : results) {
    for (std::size_t t = 0; t < r.rmse_series.size(); ++t) {
      out << r.trial << ',' << t + 1 << ',' << format_double(r.rmse_series[t]) << '\n';
    }
  }
}

void write_summary_csv(std::ostream& out, const SummaryTable& table) {
  out << "method,q10,q50,mean,q90,sd_q10,sd_q50,sd_mean,sd_q90,divergent\n";
  for (const SummaryRow& r : table) {
    out << r.method << ',' << format_double(r.q10) << ',' << format_double(r.q50) << ','
        << format_double(r.mean) << ',' << format_double(r.q90) << ',' << format_double(r.sd_q10)
        << ',' << format_double(r.sd_q50) << ',' << format_double(r.sd_mean) << ','
        << format_double(r.sd_q90) << ',' << r.divergent << '\n';
  }
}

void write_profile_csv(std::ostream& out, const std::vector<double>& profile) {
  out << "offset,mean_normalized_value\n";
  const auto half = static_cast<long>(profile.size() / 2);
  for (std::size_t i = 0; i < profile.size(); ++i) {
    out << static_cast<long>(i) - half << ',' << format_double(profile[i]) << '\n';
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepPoint>& sweep) {
  out << "p,method,mean,sd,ci_low,ci_high,divergent\n";
  for (const SweepPoint& pt : sweep) {
    for (const SweepStat& s : pt.stats) {
      out << pt.p << ',' << s.method << ',' << format_double(s.mean) << ',' << format_double(s.sd)
          << ',' << format_double(s.ci_low) << ',' << format_double(s.ci_high) << ','
          << s.divergent << '\n';
    }
  }
}

void write_gain_error_csv(std::ostream& out, const GainErrorResult& result) {
  out << "trial,sse_sample,sse_tapered,sse_penalized\n";
  for (const GainErrorTrial& t : result.trials) {
    out << t.trial << ',' << format_double(t.sse_sample) << ',' << format_double(t.sse_tapered)
        << ',' << format_double(t.sse_penalized) << '\n';
  }
}

json experiment_metadata(const ExperimentResult& result) {
  json methods = json::array();
  for (std::size_t m = 0; m < result.methods.size(); ++m) {
    const ResolvedMethod& rm = result.methods[m];
    json entry = {{"type", rm.spec.type}};
    if (rm.spec.type == "penkf") {
      entry["c_lambda"] = *rm.spec.c_lambda;
      entry["lambda"] = rm.lambda;
      entry["selected_from_path"] = rm.selection.has_value();
      if (rm.selection) {
        entry["criterion"] = rm.selection->path.criterion_used == Criterion::ebic ? "ebic" : "bic";
        entry["gamma"] = rm.selection->path.gamma_used;
      }
    }
    if (rm.spec.type == "taper") entry["taper_c"] = rm.spec.taper_c;
    json trials = json::array();
    for (const TrialResult& t : result.trials[m]) {
      json tr = {{"trial", t.trial}, {"wall_seconds", t.wall_seconds}, {"diverged", t.diverged}};
      if (t.diverged) {
        tr["divergence_cycle"] = t.divergence_cycle;
        tr["reason"] = t.divergence_reason;
      }
      trials.push_back(tr);
    }
    entry["trials"] = trials;
    methods.push_back(entry);
  }
  return {{"config", json(result.config)},
          {"methods", methods},
          {"rng", "mt19937_64 + Box-Muller; trial seed = splitmix64 mix of (seed, trial)"}};
}

}  // namespace penkf
