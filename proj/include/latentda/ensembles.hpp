#pragma once

#include <Eigen/Core>

#include "latentda/errors.hpp"

namespace latentda {

// Orthonormal deviation basis: [1_m/sqrt(m), u] is an m x m orthogonal
// matrix, so the columns of u are orthonormal and sum to zero. forward and
// inverse are the ensemble <-> (mean, deviations) change of variables
//   [mean dev] = ensemble * forward,   ensemble = [mean dev] * inverse.
struct UmBasis {
  Eigen::MatrixXd u;        // m x (m-1)
  Eigen::MatrixXd forward;  // [1/m, u/sqrt(m-1)]
  Eigen::MatrixXd inverse;  // [1, sqrt(m-1) u]^T
  int m = 0;
};

// Deterministic construction via the Householder reflector taking e_1 to
// 1_m/sqrt(m); u is its last m-1 columns.
UmBasis build_um(int m);

struct DeviationPair {
  Eigen::VectorXd mean;
  Eigen::MatrixXd deviation;  // n x (m-1); deviation*deviation^T is the
                              // sample covariance of the ensemble
};

DeviationPair mean_and_deviation(const Eigen::MatrixXd& ensemble,
                                 const UmBasis& basis);

Eigen::MatrixXd reconstruct(const DeviationPair& pair, const UmBasis& basis);

struct TruncatedEig {
  Eigen::MatrixXd vectors;  // n x rank, orthonormal columns
  Eigen::VectorXd values;   // descending, clamped to zero below 1e-14
};

// Leading eigenpairs of a symmetric matrix (dense solve, then truncation).
TruncatedEig truncated_sym_eig(const Eigen::MatrixXd& s, int rank);

// Symmetric inverse square root of an SPD matrix; fails on eigenvalues
// at or below 1e-14.
Eigen::MatrixXd sym_sqrt_inv_factor(const Eigen::MatrixXd& a);

}  // namespace latentda
