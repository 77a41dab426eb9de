#include "latentda/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace latentda {

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0)
    throw ConfigError("rmse: vectors must share a nonzero length");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

std::vector<Eigen::VectorXd> synthesize_observations(
    const TrajectoryDataset& truth, double sigma_r, std::uint64_t seed) {
  if (sigma_r < 0.0)
    throw ConfigError("synthesize_observations: sigma_r must be >= 0");
  if (truth.n_steps() < 2 || truth.n_sim() < 1)
    throw ConfigError("synthesize_observations: truth needs at least 2 states");
  CounterRng rng(seed, 300);
  std::vector<Eigen::VectorXd> obs;
  obs.reserve(static_cast<std::size_t>(truth.n_steps() - 1));
  for (int t = 1; t < truth.n_steps(); ++t)
    obs.push_back(truth.states[static_cast<std::size_t>(t)].col(0) +
                  sigma_r * rng.normal_vector(truth.dim()));
  return obs;
}

std::string method_name(Method method) {
  switch (method) {
    case Method::etkf_q: return "etkf_q";
    case Method::etkf_q_p: return "etkf_q_p";
    case Method::etkf_q_l: return "etkf_q_l";
    case Method::pca_s_p: return "pca_s_p";
    case Method::pca_s_l: return "pca_s_l";
    case Method::pca_linreg_p: return "pca_linreg_p";
    case Method::pca_linreg_l: return "pca_linreg_l";
  }
  throw ConfigError("method_name: unknown method");
}

Method parse_method(const std::string& name) {
  std::string key;
  for (char c : name)
    key += (c == '-') ? '_' : static_cast<char>(std::tolower(
                                  static_cast<unsigned char>(c)));
  if (key == "etkf_q") return Method::etkf_q;
  if (key == "etkf_q_p") return Method::etkf_q_p;
  if (key == "etkf_q_l") return Method::etkf_q_l;
  if (key == "pca_s_p") return Method::pca_s_p;
  if (key == "pca_s_l") return Method::pca_s_l;
  if (key == "pca_linreg_p") return Method::pca_linreg_p;
  if (key == "pca_linreg_l") return Method::pca_linreg_l;
  throw ConfigError("parse_method: unknown method '" + name + "'");
}

AnalysisSpace method_space(Method method) {
  switch (method) {
    case Method::etkf_q_l:
    case Method::pca_s_l:
    case Method::pca_linreg_l:
      return AnalysisSpace::latent;
    default:
      return AnalysisSpace::full;
  }
}

bool method_uses_physical_model(Method method) {
  return method == Method::etkf_q;
}

FilterOperators make_operators(Method method, const MethodContext& ctx,
                               const DaConfig& cfg) {
  FilterOperators ops;
  auto require = [&](const void* p, const char* what) {
    if (!p)
      throw ConfigError("make_operators: " + method_name(method) +
                        " needs a " + what);
  };

  switch (method) {
    case Method::etkf_q: {
      require(ctx.map, "lift/project map");
      const AugmentedMap* map = ctx.map;
      const double dt = ctx.model.delta_t;
      const double forcing = ctx.model.forcing;
      const double sigma_m = cfg.sigma_m;
      ops.propagate = [map, dt, forcing, sigma_m](Eigen::MatrixXd& e,
                                                  CounterRng& rng) {
        Eigen::MatrixXd z = project(*map, e);
        z = rk4_step(z, dt, forcing);
        // Stochastic model error lives in the low-dimensional space.
        if (sigma_m > 0.0) z += sigma_m * rng.normal_matrix(z.rows(), z.cols());
        e = lift(*map, z);
      };
      break;
    }
    case Method::etkf_q_p: {
      require(ctx.nn, "trained model checkpoint");
      const ModelParams* nn = ctx.nn;
      ops.propagate = [nn](Eigen::MatrixXd& e, CounterRng&) {
        e = mlp_forward(nn->decoder,
                        mlp_forward(nn->surrogate, mlp_forward(nn->encoder, e)));
      };
      break;
    }
    case Method::etkf_q_l: {
      require(ctx.nn, "trained model checkpoint");
      const ModelParams* nn = ctx.nn;
      ops.propagate = [nn](Eigen::MatrixXd& e, CounterRng&) {
        e = mlp_forward(nn->surrogate, e);
      };
      ops.encode = [nn](const Eigen::MatrixXd& x) {
        return mlp_forward(nn->encoder, x);
      };
      ops.decode = [nn](const Eigen::MatrixXd& z) {
        return mlp_forward(nn->decoder, z);
      };
      break;
    }
    case Method::pca_s_p: {
      require(ctx.pca, "PCA model");
      require(ctx.pca_surrogate, "PCA surrogate");
      const PcaModel* pca = ctx.pca;
      const Mlp* sur = ctx.pca_surrogate;
      ops.propagate = [pca, sur](Eigen::MatrixXd& e, CounterRng&) {
        e = pca_decode(*pca, mlp_forward(*sur, pca_encode(*pca, e)));
      };
      break;
    }
    case Method::pca_s_l: {
      require(ctx.pca, "PCA model");
      require(ctx.pca_surrogate, "PCA surrogate");
      const PcaModel* pca = ctx.pca;
      const Mlp* sur = ctx.pca_surrogate;
      ops.propagate = [sur](Eigen::MatrixXd& e, CounterRng&) {
        e = mlp_forward(*sur, e);
      };
      ops.encode = [pca](const Eigen::MatrixXd& x) {
        return pca_encode(*pca, x);
      };
      ops.decode = [pca](const Eigen::MatrixXd& z) {
        return pca_decode(*pca, z);
      };
      break;
    }
    case Method::pca_linreg_p: {
      require(ctx.pca, "PCA model");
      require(ctx.linreg, "linear propagator");
      const PcaModel* pca = ctx.pca;
      const LinRegModel* lr = ctx.linreg;
      ops.propagate = [pca, lr](Eigen::MatrixXd& e, CounterRng&) {
        e = pca_decode(*pca, linreg_apply(*lr, pca_encode(*pca, e)));
      };
      break;
    }
    case Method::pca_linreg_l: {
      require(ctx.pca, "PCA model");
      require(ctx.linreg, "linear propagator");
      const PcaModel* pca = ctx.pca;
      const LinRegModel* lr = ctx.linreg;
      ops.propagate = [lr](Eigen::MatrixXd& e, CounterRng&) {
        e = linreg_apply(*lr, e);
      };
      ops.encode = [pca](const Eigen::MatrixXd& x) {
        return pca_encode(*pca, x);
      };
      ops.decode = [pca](const Eigen::MatrixXd& z) {
        return pca_decode(*pca, z);
      };
      break;
    }
  }
  return ops;
}

GridReport grid_search(
    const GridSpec& grid, const DaConfig& base,
    const std::function<FilterOperators(const DaConfig&)>& make_ops,
    const TrajectoryDataset& truth,
    const std::vector<Eigen::VectorXd>& observations) {
  if (grid.inflations.empty() || grid.sigma_qs.empty())
    throw ConfigError("grid_search: empty grid");
  GridReport report;
  report.cells.reserve(grid.inflations.size() * grid.sigma_qs.size());
  for (double lam : grid.inflations) {
    for (double sq : grid.sigma_qs) {
      DaConfig cfg = base;
      cfg.inflation = lam;
      cfg.sigma_q = sq;
      const RunReport run = run_filter(cfg, make_ops(cfg), truth, observations);
      GridCell cell;
      cell.inflation = lam;
      cell.sigma_q = sq;
      cell.aborted = run.aborted;
      cell.wall_seconds = run.wall_seconds;
      cell.mean_rmse = run.aborted
                           ? std::numeric_limits<double>::infinity()
                           : run.mean_rmse;
      report.cells.push_back(cell);
    }
  }
  // Argmin; ties resolved toward the smallest inflation, then smallest
  // sigma_q, independent of grid order.
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    if (report.best_index < 0) {
      report.best_index = static_cast<int>(i);
      continue;
    }
    const GridCell& c = report.cells[i];
    const GridCell& b = report.cells[static_cast<std::size_t>(report.best_index)];
    const bool better =
        (c.mean_rmse < b.mean_rmse) ||
        (c.mean_rmse == b.mean_rmse &&
         (c.inflation < b.inflation ||
          (c.inflation == b.inflation && c.sigma_q < b.sigma_q)));
    if (better) report.best_index = static_cast<int>(i);
  }
  return report;
}

TimingReport timing_bench(const DaConfig& cfg, const FilterOperators& ops,
                          const TrajectoryDataset& truth,
                          const std::vector<Eigen::VectorXd>& observations,
                          int repeats) {
  if (repeats < 1) throw ConfigError("timing_bench: repeats must be >= 1");
  TimingReport report;
  report.repeats = repeats;
  report.seconds.reserve(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    const RunReport run = run_filter(cfg, ops, truth, observations);
    report.seconds.push_back(run.wall_seconds);
    report.mean_rmse = run.mean_rmse;  // runs are identical by construction
  }
  double sum = 0.0;
  for (double s : report.seconds) sum += s;
  report.mean_seconds = sum / repeats;
  if (repeats > 1) {
    double ss = 0.0;
    for (double s : report.seconds) {
      const double d = s - report.mean_seconds;
      ss += d * d;
    }
    report.std_seconds = std::sqrt(ss / (repeats - 1));
  }
  return report;
}

KalmanResult kalman_filter_oracle(const Eigen::MatrixXd& m_op,
                                  const Eigen::MatrixXd& h,
                                  const Eigen::MatrixXd& r,
                                  const Eigen::MatrixXd& q,
                                  const Eigen::VectorXd& x0,
                                  const Eigen::MatrixXd& p0,
                                  const std::vector<Eigen::VectorXd>& obs) {
  const Eigen::Index n = x0.size();
  const Eigen::Index p = h.rows();
  if (m_op.rows() != n || m_op.cols() != n || h.cols() != n ||
      r.rows() != p || r.cols() != p || q.rows() != n || q.cols() != n ||
      p0.rows() != n || p0.cols() != n)
    throw ConfigError("kalman_filter_oracle: inconsistent shapes");

  KalmanResult result;
  Eigen::VectorXd x = x0;
  Eigen::MatrixXd cov = p0;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  for (const auto& y : obs) {
    if (y.size() != p)
      throw ConfigError("kalman_filter_oracle: observation dimension mismatch");
    x = m_op * x;
    cov = m_op * cov * m_op.transpose() + q;
    const Eigen::MatrixXd s = h * cov * h.transpose() + r;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 0.0)
      throw NumericalError("kalman_filter_oracle: singular innovation covariance");
    const Eigen::MatrixXd gain = ldlt.solve(h * cov).transpose();
    x += gain * (y - h * x);
    cov = (eye - gain * h) * cov;
    cov = 0.5 * (cov + cov.transpose());
    result.means.push_back(x);
    result.covs.push_back(cov);
  }
  return result;
}

double free_run_rmse(const DaConfig& cfg, const FilterOperators& ops,
                     const TrajectoryDataset& truth) {
  validate(cfg);
  if (truth.n_steps() < cfg.n_cycles + 1)
    throw ConfigError("free_run_rmse: truth shorter than n_cycles + 1 states");
  const bool latent = (cfg.analysis_space == AnalysisSpace::latent);

  CounterRng init_rng(cfg.seed, 100);
  const Eigen::VectorXd x0 = truth.states[0].col(0);
  Eigen::MatrixXd e = x0.replicate(1, cfg.members) +
                      cfg.sigma_b * init_rng.normal_matrix(x0.size(), cfg.members);
  if (latent && ops.encode) e = ops.encode(e);

  CounterRng prop_rng(cfg.seed, 200);
  double sum = 0.0;
  for (int t = 1; t <= cfg.n_cycles; ++t) {
    ops.propagate(e, prop_rng);
    Eigen::MatrixXd full = (latent && ops.decode) ? ops.decode(e) : e;
    const Eigen::VectorXd mean = full.rowwise().mean();
    const double err =
        rmse(mean, truth.states[static_cast<std::size_t>(t)].col(0));
    if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
    sum += err;
  }
  return cfg.n_cycles > 0 ? sum / cfg.n_cycles : 0.0;
}

}  // namespace latentda
