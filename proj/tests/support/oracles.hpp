// Independent reference computations used only by tests. Nothing here calls
// the library routine it is meant to check.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Plain std::mt19937_64-backed helpers for generating test inputs.
class TestRng {
 public:
  explicit TestRng(std::uint64_t seed) : engine_(seed) {}
  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  Matrix normal_matrix(Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }
  /// Random SPD matrix A A^T / k + ridge I.
  Matrix spd(Eigen::Index p, double ridge = 0.1) {
    const Matrix a = normal_matrix(p, p + 3);
    Matrix s = a * a.transpose() / static_cast<double>(p + 3);
    s.diagonal().array() += ridge;
    return 0.5 * (s + s.transpose());
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Double loop over members for the unbiased sample covariance.
inline Matrix brute_force_covariance(const Matrix& members) {
  const auto p = members.rows();
  const auto n = members.cols();
  Vector mean = Vector::Zero(p);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < p; ++i) mean[i] += members(i, j);
  mean /= static_cast<double>(n);
  Matrix s = Matrix::Zero(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) acc += (members(a, j) - mean[a]) * (members(b, j) - mean[b]);
      s(a, b) = acc / static_cast<double>(n - 1);
    }
  return s;
}

inline double penalized_objective(const Matrix& s, const Matrix& theta, const Matrix& lambda) {
  Eigen::LDLT<Matrix> ldlt(theta);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < theta.rows(); ++i) logdet += std::log(ldlt.vectorD()[i]);
  return -logdet + (s.array() * theta.array()).sum() + (lambda.array() * theta.array().abs()).sum();
}

inline bool is_pd(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  return es.eigenvalues().minCoeff() > 0.0;
}

/// Proximal gradient with backtracking on the full objective
///   -log det(Theta) + tr(S Theta) + sum Lambda_ij |Theta_ij|,
/// started from diag(1 / (S_ii + Lambda_ii)). Returns the minimizer.
inline Matrix proximal_gradient_glasso(const Matrix& s, const Matrix& lambda, int max_iter = 200000,
                                       double tol = 1e-14) {
  const auto p = s.rows();
  Matrix theta = Matrix::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) theta(i, i) = 1.0 / (s(i, i) + lambda(i, i));
  auto smooth = [&](const Matrix& t) {
    Eigen::LDLT<Matrix> ldlt(t);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) logdet += std::log(ldlt.vectorD()[i]);
    return -logdet + (s.array() * t.array()).sum();
  };
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const Matrix grad = s - theta.inverse();
    const double f0 = smooth(theta);
    Matrix next;
    for (;;) {
      Matrix z = theta - step * grad;
      for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < p; ++i) {
          const double t = step * lambda(i, j);
          const double v = z(i, j);
          z(i, j) = v > t ? v - t : (v < -t ? v + t : 0.0);
        }
      z = 0.5 * (z + z.transpose());
      if (is_pd(z)) {
        const Matrix diff = z - theta;
        const double bound = f0 + (grad.array() * diff.array()).sum() + diff.squaredNorm() / (2.0 * step);
        if (smooth(z) <= bound + 1e-15) {
          next = z;
          break;
        }
      }
      step *= 0.5;
    }
    const double change = (next - theta).cwiseAbs().maxCoeff();
    theta = next;
    step *= 1.5;
    if (change < tol) break;
  }
  return theta;
}

/// K = P H^T (H P H^T + R)^{-1} by explicit inversion.
inline Matrix covariance_form_gain(const Matrix& pf, const Matrix& h, const Matrix& r) {
  return pf * h.transpose() * (h * pf * h.transpose() + r).inverse();
}

/// K = (P^{-1} + H^T R^{-1} H)^{-1} H^T R^{-1} by explicit inversion.
inline Matrix information_form_gain(const Matrix& pf, const Matrix& h, const Matrix& r) {
  const Matrix rinv = r.inverse();
  return (pf.inverse() + h.transpose() * rinv * h).inverse() * h.transpose() * rinv;
}

/// Gaspari-Cohn from the piecewise rational written out term by term.
inline double gaspari_cohn_reference(double z) {
  if (z <= 1.0) return -std::pow(z, 5) / 4 + std::pow(z, 4) / 2 + 5 * std::pow(z, 3) / 8 - 5 * z * z / 3 + 1;
  if (z <= 2.0)
    return std::pow(z, 5) / 12 - std::pow(z, 4) / 2 + 5 * std::pow(z, 3) / 8 + 5 * z * z / 3 - 5 * z + 4 -
           2 / (3 * z);
  return 0.0;
}

/// Lorenz-96 right-hand side evaluated index by index with explicit modular arithmetic.
inline Vector lorenz96_naive(const Vector& x, double forcing) {
  const auto p = x.size();
  Vector dx(p);
  auto at = [&](long i) { return x[((i % p) + p) % p]; };
  for (long i = 0; i < p; ++i) dx[i] = (at(i + 1) - at(i - 2)) * at(i - 1) - at(i) + forcing;
  return dx;
}

}  // namespace oracle
