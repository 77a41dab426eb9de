#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "latentda/dynamics.hpp"
#include "latentda/ensembles.hpp"
#include "latentda/rng.hpp"

namespace latentda {

enum class AnalysisSpace { full, latent };

struct DaConfig {
  int members = 40;
  double inflation = 1.0;  // scales analysis deviations, never the mean
  double sigma_r = 1.0;    // observation noise stdev, R = sigma_r^2 I
  double sigma_b = 0.3;    // initial ensemble spread around the truth
  double sigma_q = 0.0;    // additive model-error stdev folded every cycle
  double sigma_m = 0.0;    // stochastic noise the physical propagator injects
  int n_cycles = 1000;
  AnalysisSpace analysis_space = AnalysisSpace::full;
  std::uint64_t seed = 0;
};

void validate(const DaConfig& cfg);

// Pluggable pieces of one assimilation setup. propagate advances all columns
// in place and may draw from the supplied generator; null obs_op, encode and
// decode mean identity. decode maps analysis space to observable space.
struct FilterOperators {
  std::function<void(Eigen::MatrixXd&, CounterRng&)> propagate;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> obs_op;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> encode;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> decode;
};

struct CycleState {
  Eigen::MatrixXd ensemble;       // analysis-space members in columns
  Eigen::VectorXd analysis_mean;  // posterior mean from the last analysis
  int step = 0;
  std::vector<std::string> warnings;
};

// Forecast step: propagate the ensemble, then fold additive model error into
// the deviations by the truncated eigendecomposition of dev*dev^T + sigma_q^2 I.
void propagate_and_correct(CycleState& state, const FilterOperators& ops,
                           const DaConfig& cfg, const UmBasis& basis,
                           CounterRng& rng);

// Deterministic transform update against one observation vector. Inflation
// multiplies the posterior deviations only; the mean update is exact.
void analysis(CycleState& state, const Eigen::VectorXd& obs,
              const FilterOperators& ops, const DaConfig& cfg,
              const UmBasis& basis);

struct RunReport {
  std::string method;
  DaConfig config;
  std::vector<double> rmse_series;  // full-space analysis RMSE per cycle
  double mean_rmse = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  bool aborted = false;
  int abort_step = -1;
  std::string abort_reason;
  std::vector<std::string> warnings;
};

// Complete twin experiment: ensemble initialized around truth.states[0],
// then n_cycles of forecast + analysis scored against truth.states[t] in the
// observable space. observations[t-1] is assimilated at cycle t.
RunReport run_filter(const DaConfig& cfg, const FilterOperators& ops,
                     const TrajectoryDataset& truth,
                     const std::vector<Eigen::VectorXd>& observations);

}  // namespace latentda
