#include "latentda/ensembles.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace latentda {

namespace {

void check_symmetric(const Eigen::MatrixXd& s, const char* who) {
  if (s.rows() != s.cols())
    throw ConfigError(std::string(who) + ": matrix must be square");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale)
    throw ConfigError(std::string(who) + ": matrix is not symmetric");
}

}  // namespace

UmBasis build_um(int m) {
  if (m < 2) throw ConfigError("build_um: ensemble size must be >= 2");
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));

  // Householder reflector H = I - 2 v v^T / (v^T v) with v = e_1 - 1/sqrt(m):
  // H e_1 = 1_m/sqrt(m), and H's remaining columns are the deviation basis.
  Eigen::VectorXd v = Eigen::VectorXd::Constant(m, -inv_sqrt_m);
  v(0) += 1.0;
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(m, m);
  h.noalias() -= (2.0 / v.squaredNorm()) * (v * v.transpose());

  UmBasis basis;
  basis.m = m;
  basis.u = h.rightCols(m - 1);
  const double scale = std::sqrt(static_cast<double>(m - 1));
  basis.forward.resize(m, m);
  basis.forward.col(0).setConstant(1.0 / m);
  basis.forward.rightCols(m - 1) = basis.u / scale;
  basis.inverse.resize(m, m);
  basis.inverse.row(0).setOnes();
  basis.inverse.bottomRows(m - 1) = scale * basis.u.transpose();
  return basis;
}

DeviationPair mean_and_deviation(const Eigen::MatrixXd& ensemble,
                                 const UmBasis& basis) {
  if (static_cast<int>(ensemble.cols()) != basis.m)
    throw ConfigError("mean_and_deviation: ensemble size does not match basis");
  Eigen::MatrixXd md = ensemble * basis.forward;
  DeviationPair pair;
  pair.mean = md.col(0);
  pair.deviation = md.rightCols(basis.m - 1);
  return pair;
}

Eigen::MatrixXd reconstruct(const DeviationPair& pair, const UmBasis& basis) {
  if (static_cast<int>(pair.deviation.cols()) != basis.m - 1)
    throw ConfigError("reconstruct: deviation width does not match basis");
  if (pair.mean.size() != pair.deviation.rows())
    throw ConfigError("reconstruct: mean and deviation dimensions differ");
  Eigen::MatrixXd md(pair.mean.size(), basis.m);
  md.col(0) = pair.mean;
  md.rightCols(basis.m - 1) = pair.deviation;
  return md * basis.inverse;
}

TruncatedEig truncated_sym_eig(const Eigen::MatrixXd& s, int rank) {
  check_symmetric(s, "truncated_sym_eig");
  const int n = static_cast<int>(s.rows());
  if (rank < 1 || rank > n)
    throw ConfigError("truncated_sym_eig: rank must be in [1, n]");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (s + s.transpose()));
  if (eig.info() != Eigen::Success)
    throw NumericalError("truncated_sym_eig: eigensolver failed");

  // Eigen returns ascending order; keep the top `rank`, largest first.
  TruncatedEig out;
  out.vectors.resize(n, rank);
  out.values.resize(rank);
  for (int k = 0; k < rank; ++k) {
    const int src = n - 1 - k;
    double val = eig.eigenvalues()(src);
    if (val < 1e-14) val = 0.0;
    out.values(k) = val;
    out.vectors.col(k) = eig.eigenvectors().col(src);
  }
  return out;
}

Eigen::MatrixXd sym_sqrt_inv_factor(const Eigen::MatrixXd& a) {
  check_symmetric(a, "sym_sqrt_inv_factor");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (a + a.transpose()));
  if (eig.info() != Eigen::Success)
    throw NumericalError("sym_sqrt_inv_factor: eigensolver failed");
  if (eig.eigenvalues().minCoeff() <= 1e-14)
    throw NumericalError("sym_sqrt_inv_factor: matrix is not positive definite");
  return eig.eigenvectors() *
         eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace latentda
