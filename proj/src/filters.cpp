#include "penkf/filters.hpp"

#include <cmath>
#include <cstdlib>
#include <utility>

#include <Eigen/SparseCholesky>

namespace penkf {
namespace {

constexpr Index kDenseAnalysisLimit = 200;

void check_obs_dims(Index p, const ObservationOperator& obs, const char* who) {
  if (obs.state_dim() != p) {
    throw Error(std::string(who) + ": observation operator expects dimension " +
                std::to_string(obs.state_dim()) + ", got " + std::to_string(p));
  }
}

}  // namespace

std::string to_string(GainVariant v) {
  switch (v) {
    case GainVariant::sample: return "sample";
    case GainVariant::tapered: return "tapered";
    case GainVariant::penalized: return "penalized";
  }
  return "unknown";
}

double gaspari_cohn(double z) {
  z = std::abs(z);
  if (z <= 1.0) {
    const double z2 = z * z, z3 = z2 * z;
    return -0.25 * z3 * z2 + 0.5 * z2 * z2 + 0.625 * z3 - (5.0 / 3.0) * z2 + 1.0;
  }
  if (z <= 2.0) {
    const double z2 = z * z, z3 = z2 * z;
    return z3 * z2 / 12.0 - 0.5 * z2 * z2 + 0.625 * z3 + (5.0 / 3.0) * z2 - 5.0 * z + 4.0 -
           2.0 / (3.0 * z);
  }
  return 0.0;
}

TaperMatrix::TaperMatrix(Matrix entries) : entries_(std::move(entries)) {
  if (entries_.rows() != entries_.cols()) throw Error("TaperMatrix: not square");
  if (entries_ != entries_.transpose()) throw Error("TaperMatrix: not symmetric");
}

TaperMatrix build_taper(Index p, double c, bool cyclic) {
  if (!(c > 0.0)) throw Error("build_taper: half-length c must be positive");
  Matrix t(p, p);
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < p; ++i) {
      Index d = std::abs(i - j);
      if (cyclic) d = std::min(d, p - d);
      // Round off near z = 2 can leave a value of order 1e-17; the support is closed at 2c.
      const double z = static_cast<double>(d) / c;
      t(i, j) = z >= 2.0 ? 0.0 : std::max(0.0, gaspari_cohn(z));
    }
  }
  return TaperMatrix(std::move(t));
}

KalmanGain sample_gain(const SymmetricMatrix& pf, const ObservationOperator& obs) {
  check_obs_dims(pf.size(), obs, "sample_gain");
  const Matrix hp = obs.h() * pf.matrix();  // r x p
  Matrix innovation = hp * obs.h().transpose();
  innovation.diagonal() += obs.noise().variances();
  const Eigen::LLT<Matrix> llt(innovation);
  if (llt.info() != Eigen::Success) throw Error("sample_gain: innovation covariance not PD");
  return {llt.solve(hp).transpose(), GainVariant::sample};
}

KalmanGain tapered_gain(const SymmetricMatrix& s, const TaperMatrix& taper,
                        const ObservationOperator& obs) {
  if (taper.size() != s.size()) throw Error("tapered_gain: taper dimension mismatch");
  KalmanGain k = sample_gain(SymmetricMatrix(s.matrix().cwiseProduct(taper.matrix())), obs);
  k.variant = GainVariant::tapered;
  return k;
}

Matrix precision_form_gain(const Matrix& theta, const ObservationOperator& obs) {
  check_obs_dims(theta.rows(), obs, "precision_form_gain");
  const Matrix system = theta + Matrix(obs.information());
  const Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success) throw Error("precision_form_gain: system not PD");
  const Matrix ht_rinv = obs.h().transpose() * obs.noise().inverse().asDiagonal();
  return llt.solve(ht_rinv);
}

KalmanGain penalized_gain(const PrecisionEstimate& prec, const ObservationOperator& obs) {
  return {precision_form_gain(prec.theta(), obs), GainVariant::penalized};
}

FilterState forecast_step(const FilterState& state, const DynamicsModel& model,
                          const ProcessNoise& q_noise, RngStream& rng) {
  const Ensemble& ens = state.ensemble;
  if (model.dim != ens.dim()) {
    throw Error("forecast_step: model dimension " + std::to_string(model.dim) +
                " does not match ensemble dimension " + std::to_string(ens.dim()));
  }
  if (q_noise && q_noise->size() != ens.dim()) {
    throw Error("forecast_step: process noise dimension mismatch");
  }
  Matrix next(ens.dim(), ens.size());
  for (Index j = 0; j < ens.size(); ++j) {
    Vector x;
    try {
      x = model.evolve(ens.members().col(j));
    } catch (const Error& e) {
      throw Error("forecast_step: member " + std::to_string(j) + ": " + e.what());
    }
    if (!x.allFinite()) {
      throw Error("forecast_step: member " + std::to_string(j) + " became non-finite");
    }
    next.col(j) = x;
  }
  if (q_noise) {
    next += q_noise->std_devs().asDiagonal() * standard_normal(ens.dim(), ens.size(), rng);
  }
  FilterState out;
  out.ensemble = Ensemble(std::move(next));
  out.cycle_index = state.cycle_index;
  out.last_precision = state.last_precision;
  return out;
}

Matrix perturb_observations(const Vector& y, const ObservationOperator& obs, Index n,
                            RngStream& rng) {
  if (y.size() != obs.obs_dim()) throw Error("perturb_observations: y has wrong length");
  Matrix d = obs.noise().std_devs().asDiagonal() * standard_normal(y.size(), n, rng);
  d.colwise() += y;
  return d;
}

Ensemble analysis_update(const Ensemble& a0, const Matrix& d, const ObservationOperator& obs,
                         const KalmanGain& gain) {
  check_obs_dims(a0.dim(), obs, "analysis_update");
  if (d.rows() != obs.obs_dim() || d.cols() != a0.size()) {
    throw Error("analysis_update: perturbed observation matrix has the wrong shape");
  }
  if (gain.matrix.rows() != a0.dim() || gain.matrix.cols() != obs.obs_dim()) {
    throw Error("analysis_update: gain has the wrong shape");
  }
  const Matrix innovations = d - obs.h() * a0.members();
  return Ensemble(a0.members() + gain.matrix * innovations);
}

Ensemble penkf_analysis(const Ensemble& a0, const Matrix& d, const ObservationOperator& obs,
                        const PrecisionEstimate& prec, AnalysisSolver solver) {
  const Index p = a0.dim();
  check_obs_dims(p, obs, "penkf_analysis");
  if (prec.size() != p) throw Error("penkf_analysis: precision dimension mismatch");
  if (d.rows() != obs.obs_dim() || d.cols() != a0.size()) {
    throw Error("penkf_analysis: perturbed observation matrix has the wrong shape");
  }
  const Matrix weighted =
      obs.noise().inverse().asDiagonal() * (d - obs.h() * a0.members());  // R^{-1}(D - H A0)
  const Matrix rhs = obs.h().transpose() * weighted;

  if (solver == AnalysisSolver::automatic) {
    solver = p <= kDenseAnalysisLimit ? AnalysisSolver::dense : AnalysisSolver::sparse;
  }
  Matrix update;
  if (solver == AnalysisSolver::dense) {
    const Matrix system = prec.theta() + Matrix(obs.information());
    const Eigen::LLT<Matrix> llt(system);
    if (llt.info() != Eigen::Success) throw Error("penkf_analysis: factorization failed");
    update = llt.solve(rhs);
  } else {
    const SparseMatrix system = prec.theta_sparse() + obs.information();
    Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt(system);
    if (llt.info() != Eigen::Success) throw Error("penkf_analysis: sparse factorization failed");
    update = llt.solve(rhs);
  }
  return Ensemble(a0.members() + update);
}

std::string method_name(const FilterMethod& method) {
  struct Visitor {
    std::string operator()(const EnkfMethod&) const { return "enkf"; }
    std::string operator()(const TaperMethod&) const { return "taper"; }
    std::string operator()(const PenkfMethod&) const { return "penkf"; }
  };
  return std::visit(Visitor{}, method);
}

CycleOutput run_cycle(const FilterState& state, const DynamicsModel& model,
                      const ProcessNoise& q_noise, const ObservationOperator& obs,
                      const Vector& y, const FilterMethod& method, RngStream& rng) {
  FilterState next = forecast_step(state, model, q_noise, rng);
  const Ensemble& a0 = next.ensemble;
  const SymmetricMatrix s = sample_covariance(a0);

  Ensemble analysis;
  if (const auto* penkf = std::get_if<PenkfMethod>(&method)) {
    const PrecisionEstimate* warm =
        penkf->warm_start && state.last_precision ? &*state.last_precision : nullptr;
    PrecisionEstimate prec = glasso_solve(s, penkf->penalty, penkf->options, warm);
    const Matrix d = perturb_observations(y, obs, a0.size(), rng);
    analysis = penkf_analysis(a0, d, obs, prec, penkf->solver);
    next.last_precision = std::move(prec);
    next.last_gain.reset();
  } else {
    KalmanGain gain = std::holds_alternative<TaperMethod>(method)
                          ? tapered_gain(s, std::get<TaperMethod>(method).taper, obs)
                          : sample_gain(s, obs);
    const Matrix d = perturb_observations(y, obs, a0.size(), rng);
    analysis = analysis_update(a0, d, obs, gain);
    next.last_gain = std::move(gain);
  }
  next.ensemble = std::move(analysis);
  next.cycle_index = state.cycle_index + 1;
  Vector estimate = sample_mean(next.ensemble);
  return {std::move(next), std::move(estimate)};
}

}  // namespace penkf
