// Penalty selection: regularization path over lambda = c * base_scale scored
// by eBIC / BIC on a representative free-run ensemble.
#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "penkf/core.hpp"
#include "penkf/glasso.hpp"
#include "penkf/models.hpp"

namespace penkf {

enum class Criterion {
  automatic,  // eBIC(gamma) when p > n, BIC otherwise
  ebic,
  bic,
};

struct PathConfig {
  std::vector<double> c_grid;  // strictly decreasing, positive
  double base_scale = 1.0;     // sqrt(R log(p) / n) for the Lorenz-96 setup
  Criterion criterion = Criterion::automatic;
  double gamma = 0.5;
  bool penalize_diagonal = true;
  /// Solve and score the path on the correlation matrix of the representative
  /// ensemble instead of its covariance.
  bool standardize = true;
  /// Score each edge set by the unpenalized maximum likelihood restricted to
  /// that graph instead of the penalized fit.
  bool refit = false;
  GlassoOptions options;

  void validate() const;
};

/// points log-spaced values from c_max down to c_min.
std::vector<double> log_spaced_grid(double c_min, double c_max, int points);

/// sqrt(noise_variance * log(p) / n).
double penalty_base_scale(double noise_variance, Index p, Index n);

struct PathPoint {
  double c = 0.0;
  double lambda = 0.0;
  Index edges = 0;
  double loglik = 0.0;
  double score = 0.0;
  double kkt = 0.0;
  bool converged = false;
};

struct PathResult {
  std::vector<PathPoint> points;
  std::size_t chosen_index = 0;
  double gamma_used = 0.0;
  Criterion criterion_used = Criterion::bic;
  Index n = 0;
  Index p = 0;

  const PathPoint& chosen() const { return points.at(chosen_index); }
};

struct Selection {
  double c_lambda = 0.0;
  PathResult path;
};

/// Representative ensemble from a free model run: x0 ~ N(0, I), evolved one
/// interval at a time; every spacing-th state is collected, the first
/// burn_in collected states are discarded and the next count kept.
Ensemble free_forecast_ensemble(const DynamicsModel& model, Index spacing, Index count,
                                RngStream& rng, Index burn_in = 10);

/// D^{-1/2} S D^{-1/2} with D = diag(S).
SymmetricMatrix correlation_matrix(const SymmetricMatrix& s);

/// (n/2)(log det Theta - tr(S Theta)).
double gaussian_loglik(const Matrix& theta, const Matrix& s, Index n);

/// -2 l(Theta) + k log(n) + 4 k gamma log(p), k = number of off-diagonal edges.
double ebic_score(const PrecisionEstimate& est, const SymmetricMatrix& s, Index n, double gamma,
                  Index p);

/// Maximum likelihood precision with the zero pattern of est.
PrecisionEstimate refit_on_support(const SymmetricMatrix& s, const PrecisionEstimate& est,
                                   const GlassoOptions& options = {});

/// Solves the path with warm starts (largest c first) and returns the
/// criterion minimizer. Grid points that fail to converge are recorded and skipped.
Selection select_penalty(const Ensemble& representative, const PathConfig& cfg);

/// Columns: c,lambda,edges,loglik,score,kkt_residual (unconverged rows report nan).
void write_path_csv(std::ostream& out, const PathResult& path);

}  // namespace penkf
