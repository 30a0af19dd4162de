#pragma once

#include <Eigen/SparseCore>

#include "penkf/core.hpp"

namespace penkf {

/// Linear observation y = H x + eps, eps ~ N(0, R) with R diagonal.
class ObservationOperator {
 public:
  ObservationOperator(Eigen::SparseMatrix<double> h, DiagonalCovariance noise);

  /// H picks the odd state variables in 1-based numbering: row i has a one at column 2i - 1.
  static ObservationOperator odd_coordinates(Index p, double variance);
  static ObservationOperator full(Index p, double variance);
  static ObservationOperator from_dense(const Matrix& h, DiagonalCovariance noise);

  Index obs_dim() const { return h_.rows(); }
  Index state_dim() const { return h_.cols(); }
  const Eigen::SparseMatrix<double>& h() const { return h_; }
  Matrix h_dense() const { return Matrix(h_); }
  const DiagonalCovariance& noise() const { return noise_; }

  /// H^T R^{-1} H (p x p).
  Eigen::SparseMatrix<double> information() const;

 private:
  Eigen::SparseMatrix<double> h_;
  DiagonalCovariance noise_;
};

}  // namespace penkf
