// Domain types and elementary numerics shared by every filter.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace penkf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

/// p x p matrix that is symmetric by construction: the constructor stores (M + M^T) / 2.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(const Matrix& m);

  static SymmetricMatrix zero(Index p);
  static SymmetricMatrix identity(Index p);

  Index size() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }

 private:
  Matrix m_;
};

/// Diagonal covariance with strictly positive variances (Q or R).
class DiagonalCovariance {
 public:
  DiagonalCovariance() = default;
  explicit DiagonalCovariance(Vector variances);
  static DiagonalCovariance constant(Index dim, double variance);

  Index size() const { return variances_.size(); }
  const Vector& variances() const { return variances_; }
  Vector std_devs() const { return variances_.cwiseSqrt(); }
  Vector inverse() const { return variances_.cwiseInverse(); }
  Matrix dense() const { return variances_.asDiagonal(); }

 private:
  Vector variances_;
};

/// Process noise: std::nullopt is the explicit "no noise" case.
using ProcessNoise = std::optional<DiagonalCovariance>;

/// Reproducible random stream.
///
/// Uniforms come from std::mt19937_64 (whose output sequence is fixed by the
/// standard) using the top 53 bits. Normals use the Box-Muller transform with
/// both outputs of each pair consumed in order, so a seed and call sequence
/// give bit-identical draws on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  /// Independent stream for (seed, stream_id), mixed with splitmix64.
  static RngStream derive(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  double uniform();  // in (0, 1)
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_id);

/// p x n ensemble; column j is member j. Entries must be finite.
class Ensemble {
 public:
  Ensemble() = default;
  explicit Ensemble(Matrix members);

  Index dim() const { return members_.rows(); }
  Index size() const { return members_.cols(); }
  const Matrix& members() const { return members_; }
  auto member(Index j) const { return members_.col(j); }

 private:
  Matrix members_;
};

Vector sample_mean(const Ensemble& ens);

/// (1/(n-1)) sum_j (a_j - abar)(a_j - abar)^T. Throws for n < 2.
SymmetricMatrix sample_covariance(const Ensemble& ens);

double rmse(const Vector& estimate, const Vector& truth);

/// count columns mean + sqrt(cov) * z, drawn member by member, coordinate by coordinate.
Ensemble draw_gaussian(const Vector& mean, const DiagonalCovariance& cov, Index count,
                       RngStream& rng);

/// Standard normal p x count matrix in the same draw order as draw_gaussian.
Matrix standard_normal(Index rows, Index cols, RngStream& rng);

}  // namespace penkf
