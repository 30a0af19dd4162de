#include "penkf/core.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace penkf {

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

SymmetricMatrix::SymmetricMatrix(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw Error("SymmetricMatrix: matrix is not square");
  }
  m_ = 0.5 * (m + m.transpose());
}

SymmetricMatrix SymmetricMatrix::zero(Index p) { return SymmetricMatrix(Matrix::Zero(p, p)); }

SymmetricMatrix SymmetricMatrix::identity(Index p) {
  return SymmetricMatrix(Matrix::Identity(p, p));
}

DiagonalCovariance::DiagonalCovariance(Vector variances) : variances_(std::move(variances)) {
  if (variances_.size() == 0) {
    throw Error("DiagonalCovariance: empty variance vector");
  }
  for (Index i = 0; i < variances_.size(); ++i) {
    if (!(variances_[i] > 0.0) || !std::isfinite(variances_[i])) {
      throw Error("DiagonalCovariance: variances must be positive and finite");
    }
  }
}

DiagonalCovariance DiagonalCovariance::constant(Index dim, double variance) {
  return DiagonalCovariance(Vector::Constant(dim, variance));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_id) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream_id + 0x632be59bd9b4e019ULL));
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

RngStream RngStream::derive(std::uint64_t seed, std::uint64_t stream_id) {
  return RngStream(mix_seed(seed, stream_id));
}

double RngStream::uniform() {
  // 53 random bits mapped to the open interval (0, 1).
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  if (spare_) {
    const double z = *spare_;
    spare_.reset();
    return z;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

Ensemble::Ensemble(Matrix members) : members_(std::move(members)) {
  if (!members_.allFinite()) {
    throw Error("Ensemble: non-finite entry");
  }
}

Vector sample_mean(const Ensemble& ens) {
  if (ens.size() == 0) {
    throw Error("sample_mean: empty ensemble");
  }
  return ens.members().rowwise().mean();
}

SymmetricMatrix sample_covariance(const Ensemble& ens) {
  if (ens.size() < 2) {
    throw Error("sample_covariance: insufficient members (need n >= 2)");
  }
  const Matrix centered = ens.members().colwise() - sample_mean(ens);
  Matrix s = Matrix::Zero(ens.dim(), ens.dim());
  s.selfadjointView<Eigen::Lower>().rankUpdate(centered, 1.0 / static_cast<double>(ens.size() - 1));
  return SymmetricMatrix(Matrix(s.selfadjointView<Eigen::Lower>()));
}

double rmse(const Vector& estimate, const Vector& truth) {
  if (estimate.size() != truth.size()) {
    throw Error("rmse: length mismatch");
  }
  if (estimate.size() == 0) {
    throw Error("rmse: empty state");
  }
  return std::sqrt((estimate - truth).squaredNorm() / static_cast<double>(truth.size()));
}

Matrix standard_normal(Index rows, Index cols, RngStream& rng) {
  Matrix z(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      z(i, j) = rng.normal();
    }
  }
  return z;
}

Ensemble draw_gaussian(const Vector& mean, const DiagonalCovariance& cov, Index count,
                       RngStream& rng) {
  if (count < 1) {
    throw Error("draw_gaussian: count must be >= 1");
  }
  if (mean.size() != cov.size()) {
    throw Error("draw_gaussian: mean and covariance dimensions differ");
  }
  Matrix z = standard_normal(mean.size(), count, rng);
  z = cov.std_devs().asDiagonal() * z;
  z.colwise() += mean;
  return Ensemble(std::move(z));
}

}  // namespace penkf
