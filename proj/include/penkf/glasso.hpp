// l1-penalized log-determinant estimation of a sparse precision matrix
// (graphical lasso) with KKT certification.
#pragma once

#include <iosfwd>
#include <optional>

#include <Eigen/SparseCore>

#include "penkf/core.hpp"

namespace penkf {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Symmetric, elementwise nonnegative penalty Lambda.
class PenaltyMatrix {
 public:
  PenaltyMatrix() = default;
  explicit PenaltyMatrix(const Matrix& entries);

  /// Constant lambda everywhere; the diagonal is zeroed when penalize_diagonal is false.
  static PenaltyMatrix scalar(Index p, double lambda, bool penalize_diagonal = true);

  Index size() const { return entries_.rows(); }
  const Matrix& matrix() const { return entries_; }
  double operator()(Index i, Index j) const { return entries_(i, j); }
  PenaltyMatrix scaled(double factor) const;

 private:
  Matrix entries_;
};

struct GlassoOptions {
  /// Outer stopping rule: mean |dW| over off-diagonals per sweep < tol * mean |S_ij| (i != j).
  /// The returned estimate also satisfies kkt_residual <= tol.
  double tol = 1e-6;
  int max_sweeps = 200;
  double inner_tol = 1e-12;
  int max_inner_iterations = 10000;
};

/// Solution of the penalized problem.
///
/// theta holds the lower triangle (s + p values) of the sparse precision
/// matrix; w is its dense inverse, i.e. the regularized covariance
/// S + Lambda o Z.
struct PrecisionEstimate {
  SparseMatrix theta_lower;
  Matrix w;
  PenaltyMatrix penalty;
  Index edge_count = 0;
  Matrix subgradient;
  int sweeps = 0;
  double kkt = 0.0;

  Index size() const { return w.rows(); }
  Matrix theta() const;
  /// Full symmetric sparse matrix.
  SparseMatrix theta_sparse() const;
};

/// Raised when the solver stops without meeting its tolerance.
class GlassoError : public Error {
 public:
  GlassoError(const std::string& what, double last_residual)
      : Error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

/// Minimizes -log det(Theta) + tr(S Theta) + sum_ij Lambda_ij |Theta_ij| by
/// blockwise coordinate descent on the columns of W = Theta^{-1}, each column
/// solved as a lasso by cyclic coordinate descent.
PrecisionEstimate glasso_solve(const SymmetricMatrix& s, const PenaltyMatrix& penalty,
                               const GlassoOptions& options = {},
                               const PrecisionEstimate* warm_start = nullptr);

/// Max violation of the stationarity conditions
///   S - W + Lambda o sign(Theta) = 0  where Theta_ij != 0,
///   |S_ij - W_ij| <= Lambda_ij        where Theta_ij == 0.
double kkt_residual(const SymmetricMatrix& s, const PrecisionEstimate& est);

/// Same certificate for an arbitrary (Theta, W, Lambda) triple.
double kkt_residual(const Matrix& s, const Matrix& theta, const Matrix& w, const Matrix& penalty);

/// -log det(Theta) + tr(S Theta) + sum Lambda_ij |Theta_ij|. Throws if Theta is not PD.
double glasso_objective(const Matrix& s, const Matrix& theta, const Matrix& penalty);

/// Regularized forecast covariance from a forecast ensemble (S = sample covariance).
PrecisionEstimate penalized_forecast_cov(const Ensemble& forecast, const PenaltyMatrix& penalty,
                                         const GlassoOptions& options = {},
                                         const PrecisionEstimate* warm_start = nullptr);

/// Writes theta as a MatrixMarket "coordinate real symmetric" file body (lower triangle).
void write_matrix_market(std::ostream& out, const PrecisionEstimate& est);

/// log det of an SPD matrix via Cholesky; throws if not PD.
double log_det_spd(const Matrix& m);

}  // namespace penkf
