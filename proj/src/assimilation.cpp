#include "latentda/assimilation.hpp"

#include <chrono>
#include <cmath>

#include <Eigen/Dense>

namespace latentda {

void validate(const DaConfig& cfg) {
  if (cfg.members < 2) throw ConfigError("DaConfig: members must be >= 2");
  if (!(cfg.inflation > 0.0)) throw ConfigError("DaConfig: inflation must be > 0");
  if (!(cfg.sigma_r > 0.0)) throw ConfigError("DaConfig: sigma_r must be > 0");
  if (cfg.sigma_b < 0.0) throw ConfigError("DaConfig: sigma_b must be >= 0");
  if (cfg.sigma_q < 0.0) throw ConfigError("DaConfig: sigma_q must be >= 0");
  if (cfg.sigma_m < 0.0) throw ConfigError("DaConfig: sigma_m must be >= 0");
  if (cfg.n_cycles < 0) throw ConfigError("DaConfig: n_cycles must be >= 0");
}

namespace {

Eigen::MatrixXd apply_or_identity(
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& f,
    const Eigen::MatrixXd& x) {
  return f ? f(x) : x;
}

void note_warning(CycleState& state, const std::string& msg) {
  if (state.warnings.size() < 16) state.warnings.push_back(msg);
}

}  // namespace

void propagate_and_correct(CycleState& state, const FilterOperators& ops,
                           const DaConfig& cfg, const UmBasis& basis,
                           CounterRng& rng) {
  if (!ops.propagate)
    throw ConfigError("propagate_and_correct: propagate operator missing");
  if (static_cast<int>(state.ensemble.cols()) != cfg.members)
    throw ConfigError("propagate_and_correct: ensemble size mismatch");

  ops.propagate(state.ensemble, rng);
  state.step += 1;
  if (!state.ensemble.allFinite())
    throw NumericalError("propagate_and_correct: non-finite forecast ensemble");

  // Fold additive model error into the deviations: the top m-1 eigenpairs of
  // dev dev^T + sigma_q^2 I replace dev, and the mean is untouched.
  DeviationPair pair = mean_and_deviation(state.ensemble, basis);
  const Eigen::Index n = pair.deviation.rows();
  Eigen::MatrixXd s = pair.deviation * pair.deviation.transpose();
  s.diagonal().array() += cfg.sigma_q * cfg.sigma_q;
  const int rank = static_cast<int>(
      std::min<Eigen::Index>(basis.m - 1, n));
  const TruncatedEig eig = truncated_sym_eig(s, rank);

  Eigen::MatrixXd dev = Eigen::MatrixXd::Zero(n, basis.m - 1);
  dev.leftCols(rank) =
      eig.vectors * eig.values.cwiseSqrt().asDiagonal();
  if (!(std::sqrt(eig.values(rank - 1)) >
        1e-12 * std::sqrt(eig.values(0))))
    note_warning(state, "rank-deficient forecast ensemble at step " +
                            std::to_string(state.step));
  pair.deviation = std::move(dev);
  state.ensemble = reconstruct(pair, basis);
}

void analysis(CycleState& state, const Eigen::VectorXd& obs,
              const FilterOperators& ops, const DaConfig& cfg,
              const UmBasis& basis) {
  if (static_cast<int>(state.ensemble.cols()) != cfg.members)
    throw ConfigError("analysis: ensemble size mismatch");

  const DeviationPair pair = mean_and_deviation(state.ensemble, basis);

  // Observed ensemble: decode to the observable space (identity in
  // full-space mode), then apply the observation operator.
  const Eigen::MatrixXd obs_ens = apply_or_identity(
      ops.obs_op, apply_or_identity(ops.decode, state.ensemble));
  if (obs_ens.rows() != obs.size())
    throw ConfigError("analysis: observation dimension mismatch");
  const DeviationPair ypair = mean_and_deviation(obs_ens, basis);

  const Eigen::VectorXd innovation = obs - ypair.mean;
  if (!innovation.allFinite())
    throw NumericalError("analysis: non-finite innovation");

  const double inv_r = 1.0 / (cfg.sigma_r * cfg.sigma_r);
  const int ell = basis.m - 1;
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(ell, ell);
  s.noalias() += inv_r * (ypair.deviation.transpose() * ypair.deviation);
  const Eigen::MatrixXd omega = sym_sqrt_inv_factor(s);

  const Eigen::VectorXd w =
      omega * (omega * (ypair.deviation.transpose() * (inv_r * innovation)));

  // Exact mean update; inflation scales the posterior deviations only.
  state.analysis_mean = pair.mean + pair.deviation * w;
  DeviationPair post;
  post.mean = state.analysis_mean;
  post.deviation = cfg.inflation * (pair.deviation * omega);
  state.ensemble = reconstruct(post, basis);
}

RunReport run_filter(const DaConfig& cfg, const FilterOperators& ops,
                     const TrajectoryDataset& truth,
                     const std::vector<Eigen::VectorXd>& observations) {
  validate(cfg);
  if (truth.n_steps() < cfg.n_cycles + 1)
    throw ConfigError("run_filter: truth shorter than n_cycles + 1 states");
  if (truth.n_sim() < 1) throw ConfigError("run_filter: empty truth dataset");
  if (static_cast<int>(observations.size()) < cfg.n_cycles)
    throw ConfigError("run_filter: not enough observations");

  RunReport report;
  report.config = cfg;
  const UmBasis basis = build_um(cfg.members);
  const bool latent = (cfg.analysis_space == AnalysisSpace::latent);

  const auto t0 = std::chrono::steady_clock::now();

  CounterRng init_rng(cfg.seed, 100);
  const Eigen::VectorXd x0 = truth.states[0].col(0);
  Eigen::MatrixXd e0 =
      x0.replicate(1, cfg.members) +
      cfg.sigma_b * init_rng.normal_matrix(x0.size(), cfg.members);

  CycleState state;
  state.ensemble = latent ? apply_or_identity(ops.encode, e0) : std::move(e0);

  CounterRng prop_rng(cfg.seed, 200);
  for (int t = 1; t <= cfg.n_cycles; ++t) {
    try {
      propagate_and_correct(state, ops, cfg, basis, prop_rng);
      analysis(state, observations[static_cast<std::size_t>(t - 1)], ops, cfg,
               basis);
      const Eigen::VectorXd estimate =
          latent ? Eigen::VectorXd(apply_or_identity(
                       ops.decode, state.analysis_mean))
                 : state.analysis_mean;
      const Eigen::VectorXd truth_t = truth.states[static_cast<std::size_t>(t)].col(0);
      const double err = std::sqrt((estimate - truth_t).squaredNorm() /
                                   static_cast<double>(truth_t.size()));
      if (!std::isfinite(err))
        throw NumericalError("run_filter: non-finite analysis estimate");
      report.rmse_series.push_back(err);
    } catch (const NumericalError& e) {
      report.aborted = true;
      report.abort_step = t;
      report.abort_reason = e.what();
      break;
    }
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  report.warnings = state.warnings;
  if (report.aborted) {
    report.mean_rmse = std::numeric_limits<double>::infinity();
  } else if (!report.rmse_series.empty()) {
    double sum = 0.0;
    for (double r : report.rmse_series) sum += r;
    report.mean_rmse = sum / static_cast<double>(report.rmse_series.size());
  }
  return report;
}

}  // namespace latentda
