#include "penkf/models.hpp"

#include <iostream>
#include <utility>

namespace penkf {

ObservationOperator::ObservationOperator(Eigen::SparseMatrix<double> h, DiagonalCovariance noise)
    : h_(std::move(h)), noise_(std::move(noise)) {
  if (h_.rows() != noise_.size()) {
    throw Error("ObservationOperator: H has " + std::to_string(h_.rows()) +
                " rows but R has dimension " + std::to_string(noise_.size()));
  }
  h_.makeCompressed();
  Vector row_nnz = Vector::Zero(h_.rows());
  for (Index k = 0; k < h_.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(h_, k); it; ++it) {
      if (it.value() != 0.0) row_nnz[it.row()] += 1.0;
    }
  }
  if (h_.rows() == 0 || (row_nnz.array() < 1.0).any()) {
    throw Error("ObservationOperator: every row of H needs a nonzero entry");
  }
}

ObservationOperator ObservationOperator::odd_coordinates(Index p, double variance) {
  if (p < 2 || p % 2 != 0) {
    throw Error("ObservationOperator::odd_coordinates: p must be even and >= 2");
  }
  const Index r = p / 2;
  Eigen::SparseMatrix<double> h(r, p);
  for (Index i = 0; i < r; ++i) h.insert(i, 2 * i) = 1.0;
  return ObservationOperator(std::move(h), DiagonalCovariance::constant(r, variance));
}

ObservationOperator ObservationOperator::full(Index p, double variance) {
  Eigen::SparseMatrix<double> h(p, p);
  h.setIdentity();
  return ObservationOperator(std::move(h), DiagonalCovariance::constant(p, variance));
}

ObservationOperator ObservationOperator::from_dense(const Matrix& h, DiagonalCovariance noise) {
  return ObservationOperator(h.sparseView(), std::move(noise));
}

Eigen::SparseMatrix<double> ObservationOperator::information() const {
  const Eigen::SparseMatrix<double> scaled = noise_.inverse().asDiagonal() * h_;
  return Eigen::SparseMatrix<double>(h_.transpose() * scaled);
}

namespace {

void lorenz96_derivative_into(const Vector& x, double forcing, Vector& dx) {
  const Index p = x.size();
  // Seams handled explicitly; the interior needs no modular arithmetic.
  dx[0] = (x[1] - x[p - 2]) * x[p - 1] - x[0] + forcing;
  dx[1] = (x[2] - x[p - 1]) * x[0] - x[1] + forcing;
  for (Index i = 2; i < p - 1; ++i) {
    dx[i] = (x[i + 1] - x[i - 2]) * x[i - 1] - x[i] + forcing;
  }
  dx[p - 1] = (x[0] - x[p - 3]) * x[p - 2] - x[p - 1] + forcing;
}

}  // namespace

Vector lorenz96_derivative(const Vector& x, double forcing) {
  if (x.size() < 4) throw Error("lorenz96_derivative: need p >= 4");
  Vector dx(x.size());
  lorenz96_derivative_into(x, forcing, dx);
  return dx;
}

Vector rk4_step(const Vector& x, double dt, const Derivative& deriv) {
  if (!(dt > 0.0)) throw Error("rk4_step: dt must be positive");
  const Vector k1 = deriv(x);
  const Vector k2 = deriv(x + 0.5 * dt * k1);
  const Vector k3 = deriv(x + 0.5 * dt * k2);
  const Vector k4 = deriv(x + dt * k3);
  Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw Error("rk4_step: non-finite state");
  return next;
}

DynamicsModel lorenz96_model(const Lorenz96Config& cfg) {
  if (cfg.p < 4) throw Error("lorenz96_model: p must be >= 4");
  if (!(cfg.rk4_dt > 0.0) || cfg.steps_per_cycle < 1) {
    throw Error("lorenz96_model: invalid integration settings");
  }
  DynamicsModel model;
  model.dim = cfg.p;
  model.name = "lorenz96(p=" + std::to_string(cfg.p) + ",F=" + std::to_string(cfg.forcing) + ")";
  model.evolve = [cfg](const Vector& x0) {
    if (x0.size() != cfg.p) throw Error("lorenz96 evolve: dimension mismatch");
    // Same arithmetic as rk4_step with lorenz96_derivative, using preallocated stages.
    const double dt = cfg.rk4_dt;
    Vector x = x0, k1(cfg.p), k2(cfg.p), k3(cfg.p), k4(cfg.p), stage(cfg.p);
    for (int s = 0; s < cfg.steps_per_cycle; ++s) {
      lorenz96_derivative_into(x, cfg.forcing, k1);
      stage = x + 0.5 * dt * k1;
      lorenz96_derivative_into(stage, cfg.forcing, k2);
      stage = x + 0.5 * dt * k2;
      lorenz96_derivative_into(stage, cfg.forcing, k3);
      stage = x + dt * k3;
      lorenz96_derivative_into(stage, cfg.forcing, k4);
      x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) throw Error("lorenz96 evolve: non-finite state");
    return x;
  };
  return model;
}

DynamicsModel identity_model(Index p) {
  return DynamicsModel{p, [](const Vector& x) { return x; }, "identity"};
}

DynamicsModel linear_model(const Matrix& transition) {
  if (transition.rows() != transition.cols()) throw Error("linear_model: F must be square");
  const Eigen::EigenSolver<Matrix> eig(transition, false);
  if (eig.eigenvalues().cwiseAbs().maxCoeff() > 1.0 + 1e-12) {
    std::cerr << "warning: linear_model transition has spectral radius > 1\n";
  }
  return DynamicsModel{transition.rows(), [transition](const Vector& x) -> Vector {
                         return transition * x;
                       },
                       "linear"};
}

std::vector<GaussianMoments> exact_kalman_filter(const LinearGaussianConfig& cfg,
                                                 const std::vector<Vector>& observations) {
  const Index p = cfg.transition.rows();
  if (cfg.initial_mean.size() != p || cfg.initial_cov.rows() != p ||
      cfg.obs.state_dim() != p) {
    throw Error("exact_kalman_filter: dimension mismatch");
  }
  const Matrix h = cfg.obs.h_dense();
  const Matrix r = cfg.obs.noise().dense();
  Vector mean = cfg.initial_mean;
  Matrix cov = cfg.initial_cov;
  std::vector<GaussianMoments> out;
  out.reserve(observations.size());
  for (const Vector& y : observations) {
    mean = cfg.transition * mean;
    cov = cfg.transition * cov * cfg.transition.transpose();
    if (cfg.process_noise) cov += cfg.process_noise->dense();

    const Matrix innovation = h * cov * h.transpose() + r;
    const Eigen::LLT<Matrix> llt(innovation);
    if (llt.info() != Eigen::Success) {
      throw Error("exact_kalman_filter: innovation covariance is not positive definite");
    }
    const Matrix gain = llt.solve(h * cov).transpose();
    mean += gain * (y - h * mean);
    // Joseph form keeps the covariance symmetric PSD.
    const Matrix ikh = Matrix::Identity(p, p) - gain * h;
    cov = ikh * cov * ikh.transpose() + gain * r * gain.transpose();
    cov = 0.5 * (cov + cov.transpose());
    out.push_back({mean, cov});
  }
  return out;
}

}  // namespace penkf
