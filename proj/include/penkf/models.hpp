// Dynamics models for twin experiments.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "penkf/core.hpp"
#include "penkf/observation.hpp"

namespace penkf {

/// A deterministic map advancing the state by one assimilation interval.
struct DynamicsModel {
  Index dim = 0;
  std::function<Vector(const Vector&)> evolve;
  std::string name;
};

struct Lorenz96Config {
  Index p = 40;
  double forcing = 8.0;
  double rk4_dt = 0.01;
  int steps_per_cycle = 40;

  bool operator==(const Lorenz96Config&) const = default;
};

/// dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F with cyclic indices.
Vector lorenz96_derivative(const Vector& x, double forcing);

using Derivative = std::function<Vector(const Vector&)>;

/// One classical fourth-order Runge-Kutta step.
Vector rk4_step(const Vector& x, double dt, const Derivative& deriv);

DynamicsModel lorenz96_model(const Lorenz96Config& cfg);
DynamicsModel identity_model(Index p);
DynamicsModel linear_model(const Matrix& transition);

struct LinearGaussianConfig {
  Matrix transition;          // F
  ProcessNoise process_noise;  // Q
  ObservationOperator obs;
  Vector initial_mean;
  Matrix initial_cov;
};

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

/// Exact Kalman filter for x_t = F x_{t-1} + w, y_t = H x_t + eps, starting
/// from the prior N(initial_mean, initial_cov). Entry t holds the filtering
/// moments after assimilating observations[t].
std::vector<GaussianMoments> exact_kalman_filter(const LinearGaussianConfig& cfg,
                                                 const std::vector<Vector>& observations);

}  // namespace penkf
