#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace latentda {

// Counter-based generator: every draw is a pure function of (seed, stream,
// counter), so independent streams can be handed to workers and replayed
// without shared state.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed + golden * (stream + 1)) ^ mix(stream + golden)) {}

  // Child generator with its own stream; drawing from the parent is not
  // required for the child to be well-defined.
  CounterRng split(std::uint64_t stream) const {
    CounterRng child(0, 0);
    child.key_ = mix(key_ + golden * (stream + 1));
    child.counter_ = 0;
    child.have_spare_ = false;
    return child;
  }

  std::uint64_t next_u64() { return mix(key_ ^ (golden * ++counter_)); }

  // Uniform on (0, 1]; never returns 0 so log() stays finite.
  double uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename Derived>
  void fill_normal(Eigen::MatrixBase<Derived>& out) {
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal();
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd out(rows, cols);
    fill_normal(out);
    return out;
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd out(n);
    fill_normal(out);
    return out;
  }

 private:
  static constexpr std::uint64_t golden = 0x9e3779b97f4a7c15ull;
  static constexpr double pi = 3.141592653589793238462643383279502884;

  // SplitMix64 finalizer.
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace latentda
