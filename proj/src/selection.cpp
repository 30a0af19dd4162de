#include "penkf/selection.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "penkf/csv.hpp"

namespace penkf {

void PathConfig::validate() const {
  if (c_grid.empty()) throw Error("PathConfig: empty c grid");
  for (std::size_t i = 0; i < c_grid.size(); ++i) {
    if (!(c_grid[i] > 0.0)) throw Error("PathConfig: grid values must be positive");
    if (i > 0 && !(c_grid[i] < c_grid[i - 1])) {
      throw Error("PathConfig: grid must be strictly decreasing");
    }
  }
  if (!(base_scale > 0.0)) throw Error("PathConfig: base_scale must be positive");
  if (!(gamma >= 0.0)) throw Error("PathConfig: gamma must be nonnegative");
}

std::vector<double> log_spaced_grid(double c_min, double c_max, int points) {
  if (!(c_min > 0.0) || !(c_max > c_min) || points < 2) {
    throw Error("log_spaced_grid: need 0 < c_min < c_max and at least two points");
  }
  std::vector<double> grid(static_cast<std::size_t>(points));
  const double lo = std::log(c_min), hi = std::log(c_max);
  for (int i = 0; i < points; ++i) {
    grid[static_cast<std::size_t>(i)] = std::exp(hi - (hi - lo) * i / (points - 1));
  }
  grid.front() = c_max;
  grid.back() = c_min;
  return grid;
}

double penalty_base_scale(double noise_variance, Index p, Index n) {
  return std::sqrt(noise_variance * std::log(static_cast<double>(p)) / static_cast<double>(n));
}

Ensemble free_forecast_ensemble(const DynamicsModel& model, Index spacing, Index count,
                                RngStream& rng, Index burn_in) {
  if (spacing < 1) throw Error("free_forecast_ensemble: spacing must be >= 1");
  if (count < 2) throw Error("free_forecast_ensemble: count must be >= 2");
  if (burn_in < 0) throw Error("free_forecast_ensemble: burn_in must be >= 0");
  Vector x = standard_normal(model.dim, 1, rng).col(0);
  Matrix members(model.dim, count);
  Index collected = 0;
  for (Index step = 1; collected < burn_in + count; ++step) {
    try {
      x = model.evolve(x);
    } catch (const Error& e) {
      throw Error(std::string("free_forecast_ensemble: model diverged: ") + e.what());
    }
    if (!x.allFinite()) throw Error("free_forecast_ensemble: model diverged");
    if (step % spacing == 0) {
      if (collected >= burn_in) members.col(collected - burn_in) = x;
      ++collected;
    }
  }
  return Ensemble(std::move(members));
}

SymmetricMatrix correlation_matrix(const SymmetricMatrix& s) {
  const Vector d = s.matrix().diagonal();
  if ((d.array() <= 0.0).any()) throw Error("correlation_matrix: nonpositive variance");
  const Vector inv_sd = d.cwiseSqrt().cwiseInverse();
  return SymmetricMatrix(inv_sd.asDiagonal() * s.matrix() * inv_sd.asDiagonal());
}

double gaussian_loglik(const Matrix& theta, const Matrix& s, Index n) {
  return 0.5 * static_cast<double>(n) * (log_det_spd(theta) - s.cwiseProduct(theta).sum());
}

double ebic_score(const PrecisionEstimate& est, const SymmetricMatrix& s, Index n, double gamma,
                  Index p) {
  if (n < 2) throw Error("ebic_score: n must be >= 2");
  const double k = static_cast<double>(est.edge_count);
  double loglik;
  try {
    loglik = gaussian_loglik(est.theta(), s.matrix(), n);
  } catch (const Error&) {
    throw Error("ebic_score: precision estimate is not positive definite");
  }
  return -2.0 * loglik + k * std::log(static_cast<double>(n)) +
         4.0 * k * gamma * std::log(static_cast<double>(p));
}

PrecisionEstimate refit_on_support(const SymmetricMatrix& s, const PrecisionEstimate& est,
                                   const GlassoOptions& options) {
  // Off-support entries get a penalty no feasible W can reach, which pins them at zero.
  const Matrix theta = est.theta();
  const Index p = theta.rows();
  const Vector d = s.matrix().diagonal();
  Matrix lam = Matrix::Zero(p, p);
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < p; ++i) {
      if (i != j && theta(i, j) == 0.0) lam(i, j) = 2.0 * std::sqrt(d[i] * d[j]) + 1.0;
    }
  }
  return glasso_solve(s, PenaltyMatrix(lam), options);
}

Selection select_penalty(const Ensemble& representative, const PathConfig& cfg) {
  cfg.validate();
  const Index n = representative.size();
  const Index p = representative.dim();
  if (n < 2) throw Error("select_penalty: representative ensemble needs n >= 2");
  const SymmetricMatrix cov = sample_covariance(representative);
  const SymmetricMatrix s = cfg.standardize ? correlation_matrix(cov) : cov;

  PathResult path;
  path.n = n;
  path.p = p;
  switch (cfg.criterion) {
    case Criterion::automatic:
      path.criterion_used = p > n ? Criterion::ebic : Criterion::bic;
      break;
    default:
      path.criterion_used = cfg.criterion;
  }
  path.gamma_used = path.criterion_used == Criterion::ebic ? cfg.gamma : 0.0;

  std::optional<PrecisionEstimate> previous;
  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (double c : cfg.c_grid) {
    PathPoint point;
    point.c = c;
    point.lambda = c * cfg.base_scale;
    try {
      const PenaltyMatrix penalty = PenaltyMatrix::scalar(p, point.lambda, cfg.penalize_diagonal);
      PrecisionEstimate est =
          glasso_solve(s, penalty, cfg.options, previous ? &*previous : nullptr);
      point.edges = est.edge_count;
      const PrecisionEstimate scored = cfg.refit ? refit_on_support(s, est, cfg.options) : est;
      point.loglik = gaussian_loglik(scored.theta(), s.matrix(), n);
      point.score = ebic_score(scored, s, n, path.gamma_used, p);
      point.kkt = est.kkt;
      point.converged = true;
      previous = std::move(est);
    } catch (const Error&) {
      point.converged = false;
      point.loglik = point.score = point.kkt = std::numeric_limits<double>::quiet_NaN();
    }
    if (point.converged && point.score < best) {
      best = point.score;
      path.chosen_index = path.points.size();
      any = true;
    }
    path.points.push_back(point);
  }
  if (!any) throw Error("select_penalty: no grid point converged");
  const double c_lambda = path.chosen().c;
  return {c_lambda, std::move(path)};
}

void write_path_csv(std::ostream& out, const PathResult& path) {
  out << "c,lambda,edges,loglik,score,kkt_residual\n";
  for (const PathPoint& pt : path.points) {
    out << format_double(pt.c) << ',' << format_double(pt.lambda) << ',' << pt.edges << ','
        << format_double(pt.loglik) << ',' << format_double(pt.score) << ','
        << format_double(pt.kkt) << '\n';
  }
}

}  // namespace penkf
