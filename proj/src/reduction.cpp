#include "latentda/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <utility>

#include <Eigen/Dense>

namespace latentda {

PcaModel pca_fit(const Eigen::MatrixXd& samples, int n_components) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index dim = samples.cols();
  if (n < 2) throw ConfigError("pca_fit: need at least two samples");
  if (n_components < 1 || n_components > dim)
    throw ConfigError("pca_fit: n_components must be in [1, dim]");

  PcaModel model;
  model.mean = samples.colwise().mean();

  // Sample covariance accumulated in row chunks to avoid a centered copy.
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  const Eigen::Index chunk = 8192;
  for (Eigen::Index lo = 0; lo < n; lo += chunk) {
    const Eigen::Index rows = std::min(chunk, n - lo);
    Eigen::MatrixXd centered = samples.middleRows(lo, rows);
    centered.rowwise() -= model.mean.transpose();
    cov.noalias() += centered.transpose() * centered;
  }
  cov /= static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw NumericalError("pca_fit: eigensolver failed");

  model.components.resize(dim, n_components);
  model.explained_variance.resize(n_components);
  for (int k = 0; k < n_components; ++k) {
    const Eigen::Index src = dim - 1 - k;
    model.explained_variance(k) = std::max(0.0, eig.eigenvalues()(src));
    Eigen::VectorXd comp = eig.eigenvectors().col(src);
    // Sign convention: the entry of largest magnitude is positive.
    Eigen::Index imax;
    comp.cwiseAbs().maxCoeff(&imax);
    if (comp(imax) < 0.0) comp = -comp;
    model.components.col(k) = comp;
  }
  if (model.explained_variance(n_components - 1) <=
      1e-12 * std::max(model.explained_variance(0), 1e-300))
    std::cerr << "pca_fit: kept components include zero-variance directions\n";
  return model;
}

Eigen::MatrixXd pca_encode(const PcaModel& model, const Eigen::MatrixXd& x) {
  if (x.rows() != model.mean.size())
    throw ConfigError("pca_encode: state dimension mismatch");
  return model.components.transpose() * (x.colwise() - model.mean);
}

Eigen::MatrixXd pca_decode(const PcaModel& model, const Eigen::MatrixXd& z) {
  if (z.rows() != model.components.cols())
    throw ConfigError("pca_decode: latent dimension mismatch");
  return (model.components * z).colwise() + model.mean;
}

Eigen::MatrixXd dataset_samples(const TrajectoryDataset& data,
                                const std::vector<int>* sims) {
  std::vector<int> all;
  if (!sims) {
    all.resize(static_cast<std::size_t>(data.n_sim()));
    for (int s = 0; s < data.n_sim(); ++s) all[static_cast<std::size_t>(s)] = s;
    sims = &all;
  }
  const Eigen::Index rows =
      static_cast<Eigen::Index>(data.n_steps()) *
      static_cast<Eigen::Index>(sims->size());
  Eigen::MatrixXd samples(rows, data.dim());
  Eigen::Index r = 0;
  for (int t = 0; t < data.n_steps(); ++t)
    for (int s : *sims)
      samples.row(r++) = data.states[static_cast<std::size_t>(t)].col(s);
  return samples;
}

LinRegModel linreg_fit(const Eigen::MatrixXd& inputs,
                       const Eigen::MatrixXd& targets) {
  const Eigen::Index k = inputs.rows();
  const Eigen::Index n = inputs.cols();
  if (targets.cols() != n)
    throw ConfigError("linreg_fit: inputs and targets disagree on sample count");
  if (n < 1) throw ConfigError("linreg_fit: no samples");

  Eigen::MatrixXd design(k + 1, n);
  design.topRows(k) = inputs;
  design.row(k).setOnes();

  // Normal equations first; column-pivoted QR when they are unreliable.
  Eigen::MatrixXd coef;
  const Eigen::MatrixXd gram = design * design.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  bool ok = (ldlt.info() == Eigen::Success);
  if (ok) {
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    ok = d.minCoeff() > 1e-12 * d.maxCoeff();
  }
  if (ok) {
    coef = ldlt.solve(design * targets.transpose());
    ok = coef.allFinite();
  }
  if (!ok) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.transpose());
    if (qr.rank() < k + 1)
      std::cerr << "linreg_fit: rank-deficient design, using pivoted QR\n";
    coef = qr.solve(targets.transpose());
  }

  LinRegModel model;
  model.a = coef.topRows(k).transpose();
  model.b = coef.row(k).transpose();
  return model;
}

Eigen::MatrixXd linreg_apply(const LinRegModel& model,
                             const Eigen::MatrixXd& z) {
  if (z.rows() != model.a.cols())
    throw ConfigError("linreg_apply: input dimension mismatch");
  return (model.a * z).colwise() + model.b;
}

namespace {

// Chained PCA-space surrogate loss on one window; gradients flow through the
// frozen linear charts into the net only.
double pca_chain_loss(const Mlp& surrogate, const PcaModel& pca,
                      const std::vector<Eigen::MatrixXd>& window,
                      MlpGrads* grads) {
  const int c_len = static_cast<int>(window.size()) - 1;
  const Eigen::Index n = window[0].rows();
  const Eigen::Index cols = window[0].cols();
  const double denom = static_cast<double>(n * cols) * c_len;

  std::vector<MlpTape> tapes(static_cast<std::size_t>(c_len));
  std::vector<Eigen::MatrixXd> errs(static_cast<std::size_t>(c_len));
  Eigen::MatrixXd z = pca_encode(pca, window[0]);
  double loss = 0.0;
  for (int c = 1; c <= c_len; ++c) {
    z = mlp_forward(surrogate, z,
                    grads ? &tapes[static_cast<std::size_t>(c - 1)] : nullptr);
    errs[static_cast<std::size_t>(c - 1)] =
        pca_decode(pca, z) - window[static_cast<std::size_t>(c)];
    loss += errs[static_cast<std::size_t>(c - 1)].squaredNorm() / denom;
  }
  if (grads) {
    const double scale = 2.0 / denom;
    Eigen::MatrixXd acc;
    for (int c = c_len; c >= 1; --c) {
      Eigen::MatrixXd dz =
          pca.components.transpose() *
          (scale * errs[static_cast<std::size_t>(c - 1)]);
      if (acc.size() == 0)
        acc = std::move(dz);
      else
        acc += dz;
      acc = mlp_backward(surrogate, tapes[static_cast<std::size_t>(c - 1)],
                         acc, *grads);
    }
  }
  return loss;
}

}  // namespace

TrainResult train_pca_surrogate(const TrajectoryDataset& data,
                                const PcaModel& pca, const TrainConfig& cfg,
                                const Checkpoint* resume) {
  if (data.dim() != pca.mean.size())
    throw ConfigError("train_pca_surrogate: dataset does not match PCA model");
  if (data.n_steps() <= cfg.chain_len)
    throw ConfigError("train_pca_surrogate: dataset shorter than the window");

  const int n_sim = data.n_sim();
  const std::vector<int> test_sims =
      test_simulations(n_sim, cfg.test_fraction, cfg.seed);
  std::vector<char> is_test(static_cast<std::size_t>(n_sim), 0);
  for (int s : test_sims) is_test[static_cast<std::size_t>(s)] = 1;

  std::vector<std::pair<int, int>> train_windows, test_windows;
  const int last_start = data.n_steps() - 1 - cfg.chain_len;
  for (int s = 0; s < n_sim; ++s)
    for (int k = 0; k <= last_start; ++k)
      (is_test[static_cast<std::size_t>(s)] ? test_windows : train_windows)
          .emplace_back(s, k);
  if (train_windows.empty())
    throw ConfigError("train_pca_surrogate: no training windows");
  const auto& eval_windows =
      test_windows.empty() ? train_windows : test_windows;

  TrainResult result;
  Checkpoint cur;
  int first_epoch = 0;
  if (resume) {
    cur = *resume;
    result.best = *resume;
    first_epoch = resume->epoch + 1;
  } else {
    CounterRng init_rng(cfg.seed, 3);
    cur.params.surrogate =
        make_surrogate(static_cast<int>(pca.components.cols()), 5, init_rng);
    cur.opt = make_adam_state(cur.params);
  }

  auto gather = [&](const std::vector<std::pair<int, int>>& windows,
                    std::size_t lo, std::size_t hi) {
    std::vector<Eigen::MatrixXd> states(
        static_cast<std::size_t>(cfg.chain_len) + 1,
        Eigen::MatrixXd(data.dim(), static_cast<Eigen::Index>(hi - lo)));
    for (std::size_t w = lo; w < hi; ++w) {
      const auto [sim, start] = windows[w];
      for (int c = 0; c <= cfg.chain_len; ++c)
        states[static_cast<std::size_t>(c)].col(
            static_cast<Eigen::Index>(w - lo)) =
            data.states[static_cast<std::size_t>(start + c)].col(sim);
    }
    return states;
  };

  // Fixed PCA reconstruction error, reported as l_ae alongside the curves.
  double recon = 0.0;
  {
    double weight = 0.0;
    for (std::size_t lo = 0; lo < eval_windows.size(); lo += 256) {
      const std::size_t hi = std::min(eval_windows.size(), lo + 256);
      const auto states = gather(eval_windows, lo, hi);
      for (int c = 1; c <= cfg.chain_len; ++c) {
        const auto& x = states[static_cast<std::size_t>(c)];
        recon += (pca_decode(pca, pca_encode(pca, x)) - x).squaredNorm() /
                 static_cast<double>(x.rows());
        weight += static_cast<double>(x.cols());
      }
    }
    recon /= weight;
  }

  auto evaluate = [&](int epoch) {
    EpochStats st;
    st.epoch = epoch;
    st.l_ae = recon;
    double weight = 0.0;
    for (std::size_t lo = 0; lo < eval_windows.size(); lo += 256) {
      const std::size_t hi = std::min(eval_windows.size(), lo + 256);
      const auto states = gather(eval_windows, lo, hi);
      const double w = static_cast<double>(hi - lo);
      st.l_sur +=
          pca_chain_loss(cur.params.surrogate, pca, states, nullptr) * w;
      const Eigen::MatrixXd z1 = mlp_forward(
          cur.params.surrogate, pca_encode(pca, states[0]));
      st.l_sur_unchained += (pca_decode(pca, z1) - states[1]).squaredNorm() /
                            static_cast<double>(states[1].size()) * w;
      weight += w;
    }
    st.l_sur /= weight;
    st.l_sur_unchained /= weight;
    st.total = st.l_sur;
    return st;
  };

  for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    CounterRng shuffle_rng(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch));
    std::vector<std::pair<int, int>> order = train_windows;
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(
          shuffle_rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[i], order[j]);
    }

    bool diverged = false;
    for (std::size_t lo = 0, b = 0; lo < order.size();
         lo += static_cast<std::size_t>(cfg.batch_size), ++b) {
      const std::size_t hi =
          std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      const auto states = gather(order, lo, hi);
      ModelGrads grads = zero_grads(cur.params);
      try {
        const double loss =
            pca_chain_loss(cur.params.surrogate, pca, states, &grads.surrogate);
        if (!std::isfinite(loss))
          throw TrainingDivergence("train_pca_surrogate: non-finite loss",
                                   epoch, static_cast<int>(b));
        adam_step(cur.params, grads, cur.opt, cfg.adam, epoch,
                  static_cast<int>(b));
      } catch (const TrainingDivergence& err) {
        result.aborted = true;
        result.abort_reason = err.what();
        result.abort_epoch = err.epoch;
        result.abort_batch = err.batch;
        diverged = true;
        break;
      }
    }
    if (diverged) break;

    EpochStats stats = evaluate(epoch);
    result.curves.push_back(stats);
    if (cfg.verbose)
      std::cerr << "pca surrogate epoch " << epoch << ": test " << stats.total
                << "\n";
    if (stats.total < result.best.test_loss) {
      cur.epoch = epoch;
      cur.test_loss = stats.total;
      result.best = cur;
      result.best_losses.push_back(stats.total);
    }
  }

  if (result.best.epoch < 0 && !result.aborted)
    throw NumericalError("train_pca_surrogate: no finite test loss");
  return result;
}

}  // namespace latentda
