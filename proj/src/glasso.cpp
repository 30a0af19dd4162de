#include "penkf/glasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace penkf {
namespace {

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

double mean_abs_off_diagonal(const Matrix& m) {
  const Index p = m.rows();
  if (p < 2) return 0.0;
  const double total = m.cwiseAbs().sum() - m.diagonal().cwiseAbs().sum();
  return total / static_cast<double>(p * (p - 1));
}

bool is_positive_definite(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

// Lasso for column j: minimize 1/2 b^T W11 b - s12^T b + sum_k Lambda_kj |b_k|,
// where W11 is W with row/column j removed. beta(j) is kept at zero and
// wb = W11 * b is maintained in place (entry j unused).
void solve_column_lasso(const Matrix& w, const Matrix& s, const Matrix& lambda, Index j,
                        const GlassoOptions& options, Eigen::Ref<Vector> beta, Vector& wb) {
  const Index p = w.rows();
  wb.setZero();
  for (Index k = 0; k < p; ++k) {
    if (k == j || beta[k] == 0.0) continue;
    wb += w.col(k) * beta[k];
  }

  auto update = [&](Index k) {
    const double old = beta[k];
    const double partial = s(k, j) - (wb[k] - w(k, k) * old);
    const double fresh = soft_threshold(partial, lambda(k, j)) / w(k, k);
    const double delta = fresh - old;
    if (delta != 0.0) {
      beta[k] = fresh;
      wb += w.col(k) * delta;
    }
    return std::abs(delta);
  };

  std::vector<Index> active;
  active.reserve(static_cast<std::size_t>(p));
  for (int iteration = 0; iteration < options.max_inner_iterations; ++iteration) {
    // Full pass over every coordinate, then iterate the active set to convergence.
    double max_change = 0.0;
    active.clear();
    for (Index k = 0; k < p; ++k) {
      if (k == j) continue;
      max_change = std::max(max_change, update(k));
      if (beta[k] != 0.0) active.push_back(k);
    }
    if (max_change < options.inner_tol) break;
    for (int inner = 0; inner < options.max_inner_iterations; ++inner) {
      double active_change = 0.0;
      for (Index k : active) active_change = std::max(active_change, update(k));
      if (active_change < options.inner_tol) break;
    }
  }
}

Matrix recover_theta(const Matrix& w, const Matrix& beta) {
  const Index p = w.rows();
  Matrix theta = Matrix::Zero(p, p);
  for (Index j = 0; j < p; ++j) {
    double explained = 0.0;
    for (Index k = 0; k < p; ++k) {
      if (k != j) explained += w(k, j) * beta(k, j);
    }
    const double diag = 1.0 / (w(j, j) - explained);
    theta(j, j) = diag;
    for (Index k = 0; k < p; ++k) {
      if (k != j) theta(k, j) = -beta(k, j) * diag;
    }
  }
  return 0.5 * (theta + theta.transpose());
}

PrecisionEstimate assemble(const Matrix& s, const Matrix& theta, Matrix w,
                           const PenaltyMatrix& penalty, int sweeps) {
  const Index p = s.rows();
  PrecisionEstimate est;
  std::vector<Eigen::Triplet<double>> triplets;
  for (Index j = 0; j < p; ++j) {
    for (Index i = j; i < p; ++i) {
      if (theta(i, j) != 0.0) {
        triplets.emplace_back(i, j, theta(i, j));
        if (i != j) ++est.edge_count;
      }
    }
  }
  est.theta_lower.resize(p, p);
  est.theta_lower.setFromTriplets(triplets.begin(), triplets.end());
  est.theta_lower.makeCompressed();

  const Matrix& lam = penalty.matrix();
  est.subgradient = Matrix::Zero(p, p);
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < p; ++i) {
      if (lam(i, j) > 0.0) est.subgradient(i, j) = (w(i, j) - s(i, j)) / lam(i, j);
    }
  }
  est.kkt = kkt_residual(s, theta, w, lam);
  est.w = std::move(w);
  est.penalty = penalty;
  est.sweeps = sweeps;
  return est;
}

}  // namespace

PenaltyMatrix::PenaltyMatrix(const Matrix& entries) {
  if (entries.rows() != entries.cols()) {
    throw Error("PenaltyMatrix: matrix is not square");
  }
  if (!entries.allFinite() || (entries.array() < 0.0).any()) {
    throw Error("PenaltyMatrix: entries must be finite and nonnegative");
  }
  if (entries != entries.transpose()) {
    throw Error("PenaltyMatrix: matrix is not symmetric");
  }
  entries_ = entries;
}

PenaltyMatrix PenaltyMatrix::scalar(Index p, double lambda, bool penalize_diagonal) {
  if (!(lambda >= 0.0)) {
    throw Error("PenaltyMatrix: lambda must be nonnegative");
  }
  Matrix m = Matrix::Constant(p, p, lambda);
  if (!penalize_diagonal) m.diagonal().setZero();
  return PenaltyMatrix(m);
}

PenaltyMatrix PenaltyMatrix::scaled(double factor) const {
  return PenaltyMatrix(Matrix(entries_ * factor));
}

Matrix PrecisionEstimate::theta() const {
  const Matrix lower(theta_lower);
  Matrix full = lower + lower.transpose();
  full.diagonal() = lower.diagonal();
  return full;
}

SparseMatrix PrecisionEstimate::theta_sparse() const {
  return theta_lower.selfadjointView<Eigen::Lower>();
}

double kkt_residual(const Matrix& s, const Matrix& theta, const Matrix& w,
                    const Matrix& penalty) {
  const Index p = s.rows();
  double worst = 0.0;
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < p; ++i) {
      const double gap = s(i, j) - w(i, j);
      double violation;
      if (theta(i, j) != 0.0) {
        const double sign = theta(i, j) > 0.0 ? 1.0 : -1.0;
        violation = std::abs(gap + penalty(i, j) * sign);
      } else {
        violation = std::max(0.0, std::abs(gap) - penalty(i, j));
      }
      worst = std::max(worst, violation);
    }
  }
  return worst;
}

double kkt_residual(const SymmetricMatrix& s, const PrecisionEstimate& est) {
  return kkt_residual(s.matrix(), est.theta(), est.w, est.penalty.matrix());
}

double log_det_spd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw Error("log_det_spd: matrix is not positive definite");
  }
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double glasso_objective(const Matrix& s, const Matrix& theta, const Matrix& penalty) {
  return -log_det_spd(theta) + (s.cwiseProduct(theta)).sum() +
         penalty.cwiseProduct(theta.cwiseAbs()).sum();
}

PrecisionEstimate glasso_solve(const SymmetricMatrix& sym, const PenaltyMatrix& penalty,
                               const GlassoOptions& options,
                               const PrecisionEstimate* warm_start) {
  const Matrix& s = sym.matrix();
  const Matrix& lam = penalty.matrix();
  const Index p = s.rows();
  if (p == 0) throw Error("glasso_solve: empty covariance");
  if (lam.rows() != p) throw Error("glasso_solve: penalty dimension mismatch");
  if ((s.diagonal().array() <= 0.0).any()) {
    throw GlassoError("glasso_solve: sample covariance has a nonpositive diagonal entry", 0.0);
  }

  Matrix w = s;
  w.diagonal() += lam.diagonal();
  Matrix beta = Matrix::Zero(p, p);
  if (!is_positive_definite(w)) {
    throw GlassoError(
        "glasso_solve: S + diag(Lambda) is singular; increase the penalty (the solver does not "
        "add jitter)",
        std::numeric_limits<double>::infinity());
  }

  if (warm_start != nullptr && warm_start->size() == p) {
    Matrix w0 = warm_start->w;
    w0.diagonal() = w.diagonal();
    if (is_positive_definite(w0)) {
      w = w0;
      const Matrix theta0 = warm_start->theta();
      for (Index j = 0; j < p; ++j) {
        for (Index k = 0; k < p; ++k) {
          if (k != j) beta(k, j) = -theta0(k, j) / theta0(j, j);
        }
      }
    }
  }

  double scale = mean_abs_off_diagonal(s);
  if (scale == 0.0) scale = s.diagonal().mean();
  const double threshold = options.tol * scale;

  Vector wb(p);
  double last_change = std::numeric_limits<double>::infinity();
  double last_kkt = std::numeric_limits<double>::infinity();
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    const Matrix w_prev = w;
    for (Index j = 0; j < p && p > 1; ++j) {
      solve_column_lasso(w, s, lam, j, options, beta.col(j), wb);
      for (Index k = 0; k < p; ++k) {
        if (k == j) continue;
        w(k, j) = wb[k];
        w(j, k) = wb[k];
      }
    }
    if (!w.allFinite()) {
      throw GlassoError("glasso_solve: iterate became non-finite", last_change);
    }
    last_change = mean_abs_off_diagonal(w - w_prev);
    if (last_change <= threshold) {
      const Matrix theta = recover_theta(w, beta);
      last_kkt = kkt_residual(s, theta, w, lam);
      if (last_kkt <= options.tol) {
        if (!is_positive_definite(theta)) {
          throw GlassoError("glasso_solve: recovered precision is not positive definite", last_kkt);
        }
        return assemble(s, theta, std::move(w), penalty, sweep);
      }
    }
  }
  throw GlassoError("glasso_solve: no convergence after " + std::to_string(options.max_sweeps) +
                        " sweeps (last mean |dW| = " + std::to_string(last_change) +
                        ", last KKT residual = " + std::to_string(last_kkt) + ")",
                    std::isfinite(last_kkt) ? last_kkt : last_change);
}

PrecisionEstimate penalized_forecast_cov(const Ensemble& forecast, const PenaltyMatrix& penalty,
                                         const GlassoOptions& options,
                                         const PrecisionEstimate* warm_start) {
  return glasso_solve(sample_covariance(forecast), penalty, options, warm_start);
}

void write_matrix_market(std::ostream& out, const PrecisionEstimate& est) {
  out << "%%MatrixMarket matrix coordinate real symmetric\n";
  out << est.size() << ' ' << est.size() << ' ' << est.theta_lower.nonZeros() << '\n';
  out.precision(17);
  for (Index j = 0; j < est.theta_lower.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(est.theta_lower, j); it; ++it) {
      out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
    }
  }
}

}  // namespace penkf
