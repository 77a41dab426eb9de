#include "latentda/dynamics.hpp"

#include <algorithm>
#include <iostream>

#include <Eigen/Dense>

namespace latentda {

TrajectoryDataset generate_trajectories(const LorenzConfig& cfg, int n_sim,
                                        int n_steps) {
  if (cfg.dim < 4) throw ConfigError("generate_trajectories: dim must be >= 4");
  if (!(cfg.delta_t > 0.0))
    throw ConfigError("generate_trajectories: delta_t must be > 0");
  if (cfg.burn < 0) throw ConfigError("generate_trajectories: burn must be >= 0");
  if (n_sim < 1) throw ConfigError("generate_trajectories: n_sim must be >= 1");
  if (n_steps < 1)
    throw ConfigError("generate_trajectories: n_steps must be >= 1");

  TrajectoryDataset data;
  data.space = SpaceTag::latent40;
  data.config = cfg;
  data.states.assign(n_steps, Eigen::MatrixXd(cfg.dim, n_sim));

  for (int s = 0; s < n_sim; ++s) {
    CounterRng rng(cfg.seed, static_cast<std::uint64_t>(s));
    Eigen::VectorXd x = 0.01 * rng.normal_vector(cfg.dim);
    x.array() += cfg.forcing;
    x += rng.normal_vector(cfg.dim);
    for (int b = 0; b < cfg.burn; ++b) x = rk4_step(x, cfg.delta_t, cfg.forcing);
    for (int t = 0; t < n_steps; ++t) {
      x = rk4_step(x, cfg.delta_t, cfg.forcing);
      data.states[static_cast<std::size_t>(t)].col(s) = x;
    }
  }
  return data;
}

AugmentedMap build_augmented_map(int latent_dim, int full_dim,
                                 std::uint64_t seed, double poly_a,
                                 double poly_b) {
  if (latent_dim < 1 || full_dim < latent_dim)
    throw ConfigError("build_augmented_map: need full_dim >= latent_dim >= 1");
  if (poly_a < 0.0 || poly_b <= 0.0)
    throw ConfigError("build_augmented_map: cubic must be monotone (a >= 0, b > 0)");

  AugmentedMap map;
  map.poly_a = poly_a;
  map.poly_b = poly_b;

  // A Gaussian draw is almost surely full rank; on a degenerate draw move to
  // the next substream and report it.
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (attempt == 16)
      throw NumericalError("build_augmented_map: repeated rank-deficient draws");
    CounterRng rng(seed, attempt);
    Eigen::MatrixXd g = rng.normal_matrix(full_dim, latent_dim);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd r =
        qr.matrixQR().topRows(latent_dim).triangularView<Eigen::Upper>();
    double max_diag = 0.0;
    for (int j = 0; j < latent_dim; ++j)
      max_diag = std::max(max_diag, std::abs(r(j, j)));
    bool degenerate = false;
    for (int j = 0; j < latent_dim; ++j)
      if (std::abs(r(j, j)) <= 1e-12 * max_diag) degenerate = true;
    if (degenerate) {
      std::cerr << "build_augmented_map: rank-deficient draw, retrying with "
                   "substream "
                << attempt + 1 << "\n";
      continue;
    }
    map.lift_basis =
        qr.householderQ() * Eigen::MatrixXd::Identity(full_dim, latent_dim);
    // Fix the sign gauge so the basis is a deterministic function of the seed.
    for (int j = 0; j < latent_dim; ++j)
      if (r(j, j) < 0.0) map.lift_basis.col(j) = -map.lift_basis.col(j);
    return map;
  }
}

double cubic_inverse(double a, double b, double y) {
  if (a == 0.0) return y / b;
  const double q = std::abs(y) / a;
  const double p = b / a;  // > 0, so exactly one real root
  const double half_q = 0.5 * q;
  const double third_p = p / 3.0;
  const double disc = half_q * half_q + third_p * third_p * third_p;
  // Same-sign branch of Cardano avoids cancellation; the second cube root is
  // recovered from the product identity A*B = -p/3.
  const double big = std::cbrt(half_q + std::sqrt(disc));
  double u = big - third_p / big;
  if (y < 0.0) u = -u;

  const double f_tol = 1e-12 * (1.0 + std::abs(y));
  for (int it = 0; it < 100; ++it) {
    const double f = (a * u * u + b) * u - y;
    if (std::abs(f) <= f_tol) break;
    u -= f / (3.0 * a * u * u + b);
  }
  const double resid = std::abs((a * u * u + b) * u - y);
  if (!(resid <= 1e-9 * (1.0 + std::abs(y))))
    throw NumericalError("cubic_inverse: Newton polish did not converge");
  return u;
}

Eigen::MatrixXd lift(const AugmentedMap& map, const Eigen::MatrixXd& x) {
  if (x.rows() != map.latent_dim())
    throw ConfigError("lift: state dimension does not match the map");
  Eigen::MatrixXd u = map.lift_basis * x;
  return ((map.poly_a * u.array().square() + map.poly_b) * u.array()).matrix();
}

Eigen::MatrixXd project(const AugmentedMap& map, const Eigen::MatrixXd& y) {
  if (y.rows() != map.full_dim())
    throw ConfigError("project: state dimension does not match the map");
  Eigen::MatrixXd u(y.rows(), y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      u(i, j) = cubic_inverse(map.poly_a, map.poly_b, y(i, j));
  return map.lift_basis.transpose() * u;
}

Eigen::MatrixXd augmented_rk4_step(const AugmentedMap& map,
                                   const Eigen::MatrixXd& y, double dt,
                                   double forcing) {
  return lift(map, rk4_step(project(map, y), dt, forcing));
}

TrajectoryDataset lift_dataset(const AugmentedMap& map,
                               const TrajectoryDataset& latent) {
  if (latent.dim() != map.latent_dim())
    throw ConfigError("lift_dataset: dataset dimension does not match the map");
  TrajectoryDataset full;
  full.space = SpaceTag::full400;
  full.config = latent.config;
  full.states.reserve(latent.states.size());
  for (const auto& st : latent.states) full.states.push_back(lift(map, st));
  return full;
}

}  // namespace latentda
