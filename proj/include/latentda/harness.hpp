#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "latentda/assimilation.hpp"
#include "latentda/dynamics.hpp"
#include "latentda/neural.hpp"
#include "latentda/reduction.hpp"

namespace latentda {

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Noisy identity observations of truth.states[1..]: observations[t] is
// truth at step t+1 plus sigma_r * N(0, I), valid for assimilation cycle t+1.
std::vector<Eigen::VectorXd> synthesize_observations(
    const TrajectoryDataset& truth, double sigma_r, std::uint64_t seed);

enum class Method {
  etkf_q,        // physical propagator in observable space
  etkf_q_p,      // neural propagator, full-space analysis
  etkf_q_l,      // neural propagator and analysis in the code space
  pca_s_p,       // PCA surrogate propagator, full-space analysis
  pca_s_l,       // PCA surrogate, analysis in PCA space
  pca_linreg_p,  // PCA linear propagator, full-space analysis
  pca_linreg_l,  // PCA linear propagator, analysis in PCA space
};

std::string method_name(Method method);
Method parse_method(const std::string& name);
AnalysisSpace method_space(Method method);
bool method_uses_physical_model(Method method);

// Loaded artifacts a method's operators are built from; only the pieces the
// method needs must be present. The caller keeps them alive for as long as
// the operators are used.
struct MethodContext {
  LorenzConfig model;  // integration settings for the physical propagator
  const AugmentedMap* map = nullptr;
  const ModelParams* nn = nullptr;
  const PcaModel* pca = nullptr;
  const Mlp* pca_surrogate = nullptr;
  const LinRegModel* linreg = nullptr;
};

FilterOperators make_operators(Method method, const MethodContext& ctx,
                               const DaConfig& cfg);

struct GridSpec {
  std::vector<double> inflations;
  std::vector<double> sigma_qs;
};

struct GridCell {
  double inflation = 1.0;
  double sigma_q = 0.0;
  double mean_rmse = 0.0;  // +inf when the run aborted
  double wall_seconds = 0.0;
  bool aborted = false;
};

struct GridReport {
  std::string method;
  std::vector<GridCell> cells;
  int best_index = -1;  // argmin of mean_rmse; ties take the smallest
                        // inflation, then the smallest sigma_q
};

// Runs the filter on every (inflation, sigma_q) cell with identical seeds,
// so cells differ only through the parameters themselves.
GridReport grid_search(
    const GridSpec& grid, const DaConfig& base,
    const std::function<FilterOperators(const DaConfig&)>& make_ops,
    const TrajectoryDataset& truth,
    const std::vector<Eigen::VectorXd>& observations);

struct TimingReport {
  int repeats = 0;
  double mean_seconds = 0.0;
  double std_seconds = 0.0;  // sample stdev; zero for a single repeat
  double mean_rmse = 0.0;
  std::vector<double> seconds;
};

// Wall-clock of identical full filter runs, model loading excluded.
TimingReport timing_bench(const DaConfig& cfg, const FilterOperators& ops,
                          const TrajectoryDataset& truth,
                          const std::vector<Eigen::VectorXd>& observations,
                          int repeats);

struct KalmanResult {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
};

// Exact linear-Gaussian filter, the reference the ensemble methods are
// checked against on small problems.
KalmanResult kalman_filter_oracle(const Eigen::MatrixXd& m_op,
                                  const Eigen::MatrixXd& h,
                                  const Eigen::MatrixXd& r,
                                  const Eigen::MatrixXd& q,
                                  const Eigen::VectorXd& x0,
                                  const Eigen::MatrixXd& p0,
                                  const std::vector<Eigen::VectorXd>& obs);

// Mean RMSE of an ensemble propagated with no assimilation at all.
double free_run_rmse(const DaConfig& cfg, const FilterOperators& ops,
                     const TrajectoryDataset& truth);

}  // namespace latentda
