#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "latentda/errors.hpp"
#include "latentda/rng.hpp"

namespace latentda {

struct LorenzConfig {
  int dim = 40;          // number of model variables, >= 4
  double forcing = 8.0;  // constant forcing term
  double delta_t = 0.01; // integration step
  int burn = 500;        // spin-up steps discarded before recording
  std::uint64_t seed = 0;
};

enum class SpaceTag { latent40, full400 };

// Provenance of a lifted dataset: the map that produced it, so downstream
// consumers can rebuild the exact lift without re-passing its parameters.
struct LiftInfo {
  int model_dim = 40;
  std::uint64_t map_seed = 0;
  double poly_a = 0.1;
  double poly_b = 1.0;
};

// Time-indexed collection of simulations: states[t] is dim x n_sim, each
// column one simulation's state at step t.
struct TrajectoryDataset {
  std::vector<Eigen::MatrixXd> states;
  SpaceTag space = SpaceTag::latent40;
  LorenzConfig config;
  std::optional<LiftInfo> lift;  // set for full-space data saved with its map

  int n_steps() const { return static_cast<int>(states.size()); }
  int n_sim() const {
    return states.empty() ? 0 : static_cast<int>(states[0].cols());
  }
  int dim() const {
    return states.empty() ? 0 : static_cast<int>(states[0].rows());
  }
};

// Lorenz 96 tendency, columns treated as independent states.
template <typename Derived>
typename Derived::PlainObject lorenz96_rhs(const Eigen::MatrixBase<Derived>& x,
                                           typename Derived::Scalar forcing) {
  const Eigen::Index d = x.rows();
  if (d < 4) throw ConfigError("lorenz96_rhs: dim must be >= 4");
  typename Derived::PlainObject out(d, x.cols());
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index ip1 = (i + 1) % d;
    const Eigen::Index im1 = (i + d - 1) % d;
    const Eigen::Index im2 = (i + d - 2) % d;
    out.row(i) =
        ((x.row(ip1) - x.row(im2)).cwiseProduct(x.row(im1)) - x.row(i))
            .array() +
        forcing;
  }
  return out;
}

// Classical fourth-order Runge-Kutta step of the Lorenz 96 system.
template <typename Derived>
typename Derived::PlainObject rk4_step(const Eigen::MatrixBase<Derived>& x,
                                       typename Derived::Scalar dt,
                                       typename Derived::Scalar forcing) {
  using Plain = typename Derived::PlainObject;
  using Scalar = typename Derived::Scalar;
  if (!(dt > Scalar(0))) throw ConfigError("rk4_step: delta_t must be > 0");
  const Plain k1 = lorenz96_rhs(x, forcing);
  const Plain k2 = lorenz96_rhs((x + (dt / Scalar(2)) * k1).eval(), forcing);
  const Plain k3 = lorenz96_rhs((x + (dt / Scalar(2)) * k2).eval(), forcing);
  const Plain k4 = lorenz96_rhs((x + dt * k3).eval(), forcing);
  return x + (dt / Scalar(6)) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
}

// Integrate n_sim independent simulations: random initial condition near the
// attractor, burn-in discarded, n_steps states recorded. Simulation s draws
// from stream s of cfg.seed, so results are reproducible and order-free.
TrajectoryDataset generate_trajectories(const LorenzConfig& cfg, int n_sim,
                                        int n_steps);

// Observable-space embedding: lift(x) = f(O x) with f an odd cubic applied
// elementwise and O orthonormal (full_dim x latent_dim).
struct AugmentedMap {
  Eigen::MatrixXd lift_basis;
  double poly_a = 0.1;
  double poly_b = 1.0;

  int full_dim() const { return static_cast<int>(lift_basis.rows()); }
  int latent_dim() const { return static_cast<int>(lift_basis.cols()); }
};

// Orthonormal basis from a seeded Gaussian draw + QR, deterministic in seed.
AugmentedMap build_augmented_map(int latent_dim, int full_dim,
                                 std::uint64_t seed, double poly_a = 0.1,
                                 double poly_b = 1.0);

template <typename T>
inline T cubic_forward(T a, T b, T u) {
  return (a * u * u + b) * u;
}

// Inverse of u -> a*u^3 + b*u (monotone for a >= 0, b > 0): closed-form
// Cardano root polished by Newton.
double cubic_inverse(double a, double b, double y);

Eigen::MatrixXd lift(const AugmentedMap& map, const Eigen::MatrixXd& x);
Eigen::MatrixXd project(const AugmentedMap& map, const Eigen::MatrixXd& y);

// One RK4 step of the augmented system: project, step, lift.
Eigen::MatrixXd augmented_rk4_step(const AugmentedMap& map,
                                   const Eigen::MatrixXd& y, double dt,
                                   double forcing);

TrajectoryDataset lift_dataset(const AugmentedMap& map,
                               const TrajectoryDataset& latent);

}  // namespace latentda
