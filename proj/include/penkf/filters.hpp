// Stochastic EnKF, taper-localized EnKF and penalized EnKF sharing one
// forecast/analysis cycle.
#pragma once

#include <optional>
#include <string>
#include <variant>

#include "penkf/core.hpp"
#include "penkf/glasso.hpp"
#include "penkf/models.hpp"
#include "penkf/observation.hpp"

namespace penkf {

enum class GainVariant { sample, tapered, penalized };

std::string to_string(GainVariant v);

struct KalmanGain {
  Matrix matrix;  // p x r
  GainVariant variant = GainVariant::sample;
};

/// Gaspari-Cohn fifth-order piecewise rational correlation, z = distance / c.
double gaspari_cohn(double z);

/// Symmetric taper with unit diagonal and entries in [0, 1].
class TaperMatrix {
 public:
  explicit TaperMatrix(Matrix entries);
  const Matrix& matrix() const { return entries_; }
  Index size() const { return entries_.rows(); }

 private:
  Matrix entries_;
};

/// Entries G(d_ij / c); d_ij is the cyclic distance min(|i-j|, p-|i-j|) when cyclic.
TaperMatrix build_taper(Index p, double c, bool cyclic = true);

/// K = Pf H^T (H Pf H^T + R)^{-1}.
KalmanGain sample_gain(const SymmetricMatrix& pf, const ObservationOperator& obs);

/// sample_gain(T o S) with o the Schur product.
KalmanGain tapered_gain(const SymmetricMatrix& s, const TaperMatrix& taper,
                        const ObservationOperator& obs);

/// K = (Theta + H^T R^{-1} H)^{-1} H^T R^{-1} for a precision Theta (dense route).
Matrix precision_form_gain(const Matrix& theta, const ObservationOperator& obs);

/// Dense penalized gain built from the estimate's precision matrix.
KalmanGain penalized_gain(const PrecisionEstimate& prec, const ObservationOperator& obs);

struct FilterState {
  Ensemble ensemble;
  Index cycle_index = 0;
  std::optional<KalmanGain> last_gain;
  std::optional<PrecisionEstimate> last_precision;
};

/// a_j <- f(a_j) + w_j with w_j ~ N(0, Q); members evolved in index order.
FilterState forecast_step(const FilterState& state, const DynamicsModel& model,
                          const ProcessNoise& q_noise, RngStream& rng);

/// r x n matrix whose column j is y + eta_j, eta_j ~ N(0, R).
Matrix perturb_observations(const Vector& y, const ObservationOperator& obs, Index n,
                            RngStream& rng);

/// A = A0 + K (D - H A0).
Ensemble analysis_update(const Ensemble& a0, const Matrix& d, const ObservationOperator& obs,
                         const KalmanGain& gain);

enum class AnalysisSolver { automatic, dense, sparse };

/// A = A0 + U where (Theta + H^T R^{-1} H) U = H^T R^{-1} (D - H A0).
/// automatic uses a dense Cholesky for p <= 200 and a sparse LL^T with AMD
/// ordering above that.
Ensemble penkf_analysis(const Ensemble& a0, const Matrix& d, const ObservationOperator& obs,
                        const PrecisionEstimate& prec,
                        AnalysisSolver solver = AnalysisSolver::automatic);

struct EnkfMethod {};

struct TaperMethod {
  TaperMatrix taper;
};

struct PenkfMethod {
  PenaltyMatrix penalty;
  GlassoOptions options;
  bool warm_start = false;
  AnalysisSolver solver = AnalysisSolver::automatic;
};

using FilterMethod = std::variant<EnkfMethod, TaperMethod, PenkfMethod>;

std::string method_name(const FilterMethod& method);

struct CycleOutput {
  FilterState state;
  Vector estimate;
};

/// One assimilation cycle: forecast, forecast-covariance estimate, perturbed
/// observations, analysis, ensemble mean.
CycleOutput run_cycle(const FilterState& state, const DynamicsModel& model,
                      const ProcessNoise& q_noise, const ObservationOperator& obs,
                      const Vector& y, const FilterMethod& method, RngStream& rng);

}  // namespace penkf
