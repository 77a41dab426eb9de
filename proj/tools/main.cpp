// Command-line front end: data generation, model fitting, assimilation runs,
// hyperparameter grids and timing benchmarks.

#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latentda/dynamics.hpp"
#include "latentda/harness.hpp"
#include "latentda/io.hpp"
#include "latentda/neural.hpp"
#include "latentda/reduction.hpp"

using namespace latentda;

namespace {

// Default hyperparameter grid for the benchmark methods.
const std::vector<double> kDefaultInflations = {
    0.99, 1.0, 1.004, 1.01, 1.02, 1.05, 1.08,
    1.1,  1.12, 1.15, 1.2,  1.3,  1.5,  1.9};
const std::vector<double> kDefaultSigmaQs = {
    1e-7, 1e-6, 1e-5, 5e-5, 1e-4, 1e-3, 1e-2,
    0.05, 0.07, 0.1,  0.3,  0.5,  0.7,  0.9};

struct MapFlags {
  int dim = 40;
  int full_dim = 400;
  std::uint64_t map_seed = 0;
  double poly_a = 0.1;
  double poly_b = 1.0;
};

void add_map_flags(CLI::App* cmd, MapFlags& flags) {
  cmd->add_option("--dim", flags.dim, "model dimension");
  cmd->add_option("--full-dim", flags.full_dim, "observable dimension");
  cmd->add_option("--map-seed", flags.map_seed, "seed of the lift basis");
  cmd->add_option("--poly-a", flags.poly_a, "cubic coefficient a");
  cmd->add_option("--poly-b", flags.poly_b, "linear coefficient b");
}

// Artifact store for assimilate/gridsearch/bench.
struct Artifacts {
  MapFlags map_flags;
  std::string truth_path;
  std::string checkpoint_path;
  std::string pca_path;
  std::string pca_surrogate_path;
  std::string linreg_path;

  AugmentedMap map;
  std::optional<Checkpoint> checkpoint;
  std::optional<PcaModel> pca;
  std::optional<Checkpoint> pca_surrogate;
  std::optional<LinRegModel> linreg;
  TrajectoryDataset truth;
};

void add_artifact_flags(CLI::App* cmd, Artifacts& art) {
  add_map_flags(cmd, art.map_flags);
  cmd->add_option("--truth", art.truth_path, "full-space truth trajectory")
      ->required();
  cmd->add_option("--checkpoint", art.checkpoint_path,
                  "trained autoencoder+surrogate checkpoint");
  cmd->add_option("--pca", art.pca_path, "PCA model file");
  cmd->add_option("--pca-surrogate", art.pca_surrogate_path,
                  "PCA-space surrogate checkpoint");
  cmd->add_option("--linreg", art.linreg_path, "linear propagator file");
}

MethodContext load_context(const CLI::App* cmd, Method method,
                           Artifacts& art) {
  art.truth = load_dataset(art.truth_path);
  // A truth file that carries its lift provenance fills in every map flag the
  // caller did not pass explicitly; flags on the command line still win.
  if (art.truth.lift) {
    const LiftInfo& lift = *art.truth.lift;
    auto defaulted = [&](const std::string& name) {
      return cmd->count(name) == 0;
    };
    if (defaulted("--dim")) art.map_flags.dim = lift.model_dim;
    if (defaulted("--full-dim")) art.map_flags.full_dim = art.truth.config.dim;
    if (defaulted("--map-seed")) art.map_flags.map_seed = lift.map_seed;
    if (defaulted("--poly-a")) art.map_flags.poly_a = lift.poly_a;
    if (defaulted("--poly-b")) art.map_flags.poly_b = lift.poly_b;
  }
  MethodContext ctx;
  ctx.model.dim = art.map_flags.dim;
  ctx.model.delta_t = art.truth.config.delta_t;
  ctx.model.forcing = art.truth.config.forcing;
  switch (method) {
    case Method::etkf_q:
      art.map = build_augmented_map(art.map_flags.dim, art.map_flags.full_dim,
                                    art.map_flags.map_seed,
                                    art.map_flags.poly_a, art.map_flags.poly_b);
      ctx.map = &art.map;
      break;
    case Method::etkf_q_p:
    case Method::etkf_q_l:
      if (art.checkpoint_path.empty())
        throw ConfigError(method_name(method) + " needs --checkpoint");
      art.checkpoint = load_checkpoint(art.checkpoint_path);
      ctx.nn = &art.checkpoint->params;
      break;
    case Method::pca_s_p:
    case Method::pca_s_l:
      if (art.pca_path.empty() || art.pca_surrogate_path.empty())
        throw ConfigError(method_name(method) +
                          " needs --pca and --pca-surrogate");
      art.pca = load_pca(art.pca_path);
      art.pca_surrogate = load_checkpoint(art.pca_surrogate_path);
      ctx.pca = &*art.pca;
      ctx.pca_surrogate = &art.pca_surrogate->params.surrogate;
      break;
    case Method::pca_linreg_p:
    case Method::pca_linreg_l:
      if (art.pca_path.empty() || art.linreg_path.empty())
        throw ConfigError(method_name(method) + " needs --pca and --linreg");
      art.pca = load_pca(art.pca_path);
      art.linreg = load_linreg(art.linreg_path);
      ctx.pca = &*art.pca;
      ctx.linreg = &*art.linreg;
      break;
  }
  return ctx;
}

struct DaFlags {
  DaConfig cfg;
  std::string config_path;
  std::uint64_t obs_seed = 0;
  bool obs_seed_set = false;
};

void add_da_flags(CLI::App* cmd, DaFlags& da) {
  cmd->add_option("--config", da.config_path,
                  "key = value config file (flags override it)");
  cmd->add_option("--members", da.cfg.members, "ensemble size");
  cmd->add_option("--inflation", da.cfg.inflation, "deviation inflation");
  cmd->add_option("--sigma-q", da.cfg.sigma_q, "additive model-error stdev");
  cmd->add_option("--sigma-r", da.cfg.sigma_r, "observation noise stdev");
  cmd->add_option("--sigma-b", da.cfg.sigma_b, "initial ensemble spread");
  cmd->add_option("--sigma-m", da.cfg.sigma_m,
                  "stochastic model noise (physical propagator only)");
  cmd->add_option("--cycles", da.cfg.n_cycles, "assimilation cycles");
  cmd->add_option("--seed", da.cfg.seed, "experiment seed");
  auto* obs = cmd->add_option("--obs-seed", da.obs_seed,
                              "observation noise seed (default: --seed)");
  obs->each([&da](const std::string&) { da.obs_seed_set = true; });
}

DaConfig resolve_da_config(const CLI::App* cmd, DaFlags& da, Method method) {
  DaConfig cfg;
  if (!da.config_path.empty()) apply_kv(load_kv_config(da.config_path), cfg);
  // Explicit flags win over the config file.
  auto given = [&](const std::string& name) {
    return cmd->count(name) > 0;
  };
  if (given("--members")) cfg.members = da.cfg.members;
  if (given("--inflation")) cfg.inflation = da.cfg.inflation;
  if (given("--sigma-q")) cfg.sigma_q = da.cfg.sigma_q;
  if (given("--sigma-r")) cfg.sigma_r = da.cfg.sigma_r;
  if (given("--sigma-b")) cfg.sigma_b = da.cfg.sigma_b;
  if (given("--sigma-m")) cfg.sigma_m = da.cfg.sigma_m;
  if (given("--cycles")) cfg.n_cycles = da.cfg.n_cycles;
  if (given("--seed")) cfg.seed = da.cfg.seed;
  cfg.analysis_space = method_space(method);
  if (!method_uses_physical_model(method)) cfg.sigma_m = 0.0;
  return cfg;
}

int run_generate(int dim, int full_dim, int sims, int steps,
                 std::uint64_t seed, int burn, double forcing, double delta_t,
                 const MapFlags& map_flags, const std::string& out,
                 const std::string& latent_out) {
  LorenzConfig cfg;
  cfg.dim = dim;
  cfg.forcing = forcing;
  cfg.delta_t = delta_t;
  cfg.burn = burn;
  cfg.seed = seed;
  TrajectoryDataset latent = generate_trajectories(cfg, sims, steps);
  if (full_dim > 0) {
    const AugmentedMap map = build_augmented_map(
        dim, full_dim, map_flags.map_seed, map_flags.poly_a, map_flags.poly_b);
    TrajectoryDataset lifted = lift_dataset(map, latent);
    lifted.lift =
        LiftInfo{dim, map_flags.map_seed, map_flags.poly_a, map_flags.poly_b};
    save_dataset(out, lifted);
    if (!latent_out.empty()) save_dataset(latent_out, latent);
  } else {
    save_dataset(out, latent);
  }
  std::cout << "wrote " << out << ": " << steps << " steps x " << sims
            << " simulations\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space ensemble data assimilation benchmark"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "integrate training/truth data");
  int gen_dim = 40, gen_full = 0, gen_sims = 1, gen_steps = 1000;
  std::uint64_t gen_seed = 0;
  int gen_burn = 500;
  double gen_forcing = 8.0, gen_dt = 0.01;
  MapFlags gen_map;
  std::string gen_out, gen_latent_out;
  gen->add_option("--dim", gen_dim, "model dimension");
  gen->add_option("--full-dim", gen_full,
                  "lift to this observable dimension (0 = keep model space)");
  gen->add_option("--sims", gen_sims, "number of simulations")->required();
  gen->add_option("--steps", gen_steps, "recorded steps per simulation")
      ->required();
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--burn", gen_burn, "discarded spin-up steps");
  gen->add_option("--forcing", gen_forcing, "forcing term");
  gen->add_option("--delta-t", gen_dt, "integration step");
  gen->add_option("--map-seed", gen_map.map_seed, "seed of the lift basis");
  gen->add_option("--poly-a", gen_map.poly_a, "cubic coefficient a");
  gen->add_option("--poly-b", gen_map.poly_b, "linear coefficient b");
  gen->add_option("--out", gen_out, "output dataset")->required();
  gen->add_option("--latent-out", gen_latent_out,
                  "also keep the model-space dataset here");

  // train
  auto* train = app.add_subcommand("train", "train networks on a dataset");
  std::string train_data, train_out, train_curves, train_resume, train_pca;
  TrainConfig train_cfg;
  train->add_option("--data", train_data, "full-space dataset")->required();
  train->add_option("--out", train_out, "checkpoint output")->required();
  train->add_option("--curves", train_curves, "loss-curve CSV output");
  train->add_option("--epochs", train_cfg.epochs, "training epochs");
  train->add_option("--rho", train_cfg.rho, "surrogate loss weight");
  train->add_option("--chain-len", train_cfg.chain_len, "chained steps C");
  train->add_option("--seed", train_cfg.seed, "training seed");
  train->add_option("--batch-size", train_cfg.batch_size, "batch size");
  train->add_option("--lr", train_cfg.adam.learning_rate, "Adam learning rate");
  train->add_option("--test-fraction", train_cfg.test_fraction,
                    "held-out simulation fraction");
  train->add_option("--latent-dim", train_cfg.latent_dim, "code dimension");
  train->add_option("--shards", train_cfg.n_shards, "gradient shards");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--pca", train_pca,
                    "train the PCA-space surrogate against this PCA model");
  train->add_flag("--verbose", train_cfg.verbose, "per-epoch progress");

  // pca-fit
  auto* pca_fit_cmd = app.add_subcommand("pca-fit", "fit PCA on a dataset");
  std::string pf_data, pf_out;
  int pf_components = 40;
  double pf_fraction = 0.05;
  std::uint64_t pf_seed = 0;
  pca_fit_cmd->add_option("--data", pf_data, "full-space dataset")->required();
  pca_fit_cmd->add_option("--components", pf_components, "kept components");
  pca_fit_cmd->add_option("--seed", pf_seed, "split seed (as in train)");
  pca_fit_cmd->add_option("--test-fraction", pf_fraction,
                          "held-out simulation fraction");
  pca_fit_cmd->add_option("--out", pf_out, "PCA model output")->required();

  // linreg-fit
  auto* lr_cmd = app.add_subcommand(
      "linreg-fit", "fit the linear propagator in PCA space");
  std::string lr_data, lr_pca, lr_out;
  double lr_fraction = 0.05;
  std::uint64_t lr_seed = 0;
  lr_cmd->add_option("--data", lr_data, "full-space dataset")->required();
  lr_cmd->add_option("--pca", lr_pca, "PCA model file")->required();
  lr_cmd->add_option("--seed", lr_seed, "split seed (as in train)");
  lr_cmd->add_option("--test-fraction", lr_fraction,
                     "held-out simulation fraction");
  lr_cmd->add_option("--out", lr_out, "linear model output")->required();

  // assimilate
  auto* assim = app.add_subcommand("assimilate", "run one filter experiment");
  std::string as_method, as_out, as_csv;
  Artifacts as_art;
  DaFlags as_da;
  assim->add_option("--method", as_method, "assimilation method")->required();
  add_artifact_flags(assim, as_art);
  add_da_flags(assim, as_da);
  assim->add_option("--out", as_out, "JSON run report");
  assim->add_option("--rmse-csv", as_csv, "per-step RMSE CSV");

  // gridsearch
  auto* gs = app.add_subcommand("gridsearch",
                                "tune inflation and sigma_q for a method");
  std::string gs_method, gs_grid, gs_out, gs_csv;
  Artifacts gs_art;
  DaFlags gs_da;
  gs->add_option("--method", gs_method, "assimilation method")->required();
  gs->add_option("--grid", gs_grid, "grid config file (defaults built in)");
  add_artifact_flags(gs, gs_art);
  add_da_flags(gs, gs_da);
  gs->add_option("--out", gs_out, "JSON grid report");
  gs->add_option("--csv", gs_csv, "grid table CSV");

  // bench
  auto* bench = app.add_subcommand("bench", "time repeated filter runs");
  std::string be_method, be_out;
  int be_repeats = 100;
  Artifacts be_art;
  DaFlags be_da;
  bench->add_option("--method", be_method, "assimilation method")->required();
  bench->add_option("--repeats", be_repeats, "repetitions");
  add_artifact_flags(bench, be_art);
  add_da_flags(bench, be_da);
  bench->add_option("--out", be_out, "JSON timing report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return run_generate(gen_dim, gen_full, gen_sims, gen_steps, gen_seed,
                          gen_burn, gen_forcing, gen_dt, gen_map, gen_out,
                          gen_latent_out);

    if (train->parsed()) {
      const TrajectoryDataset data = load_dataset(train_data);
      TrainResult result;
      std::optional<Checkpoint> resume;
      if (!train_resume.empty()) resume = load_checkpoint(train_resume);
      if (!train_pca.empty()) {
        const PcaModel pca = load_pca(train_pca);
        result = train_pca_surrogate(data, pca, train_cfg,
                                     resume ? &*resume : nullptr);
      } else {
        train_cfg.checkpoint_path = train_out;
        result = train_model(data, train_cfg, resume ? &*resume : nullptr);
      }
      save_checkpoint(train_out, result.best);
      if (!train_curves.empty()) save_loss_curves_csv(train_curves, result.curves);
      if (result.aborted) {
        std::cerr << "training aborted (" << result.abort_reason << " at epoch "
                  << result.abort_epoch << ", batch " << result.abort_batch
                  << "); best checkpoint from epoch " << result.best.epoch
                  << " kept\n";
        return 1;
      }
      std::cout << "best epoch " << result.best.epoch << ", test loss "
                << result.best.test_loss << " -> " << train_out << "\n";
      return 0;
    }

    if (pca_fit_cmd->parsed()) {
      const TrajectoryDataset data = load_dataset(pf_data);
      std::vector<int> test = test_simulations(data.n_sim(), pf_fraction, pf_seed);
      std::vector<char> is_test(static_cast<std::size_t>(data.n_sim()), 0);
      for (int s : test) is_test[static_cast<std::size_t>(s)] = 1;
      std::vector<int> train_sims;
      for (int s = 0; s < data.n_sim(); ++s)
        if (!is_test[static_cast<std::size_t>(s)]) train_sims.push_back(s);
      const PcaModel model =
          pca_fit(dataset_samples(data, &train_sims), pf_components);
      save_pca(pf_out, model);
      std::cout << "wrote " << pf_out << " (" << pf_components
                << " components)\n";
      return 0;
    }

    if (lr_cmd->parsed()) {
      const TrajectoryDataset data = load_dataset(lr_data);
      const PcaModel pca = load_pca(lr_pca);
      std::vector<int> test = test_simulations(data.n_sim(), lr_fraction, lr_seed);
      std::vector<char> is_test(static_cast<std::size_t>(data.n_sim()), 0);
      for (int s : test) is_test[static_cast<std::size_t>(s)] = 1;
      // Consecutive encoded pairs from the training simulations.
      const int pairs_per_sim = data.n_steps() - 1;
      std::vector<int> train_sims;
      for (int s = 0; s < data.n_sim(); ++s)
        if (!is_test[static_cast<std::size_t>(s)]) train_sims.push_back(s);
      const Eigen::Index n_pairs =
          static_cast<Eigen::Index>(train_sims.size()) * pairs_per_sim;
      const Eigen::Index k = pca.components.cols();
      Eigen::MatrixXd inputs(k, n_pairs), targets(k, n_pairs);
      Eigen::Index col = 0;
      for (int t = 0; t + 1 < data.n_steps(); ++t) {
        Eigen::MatrixXd cur(data.dim(), static_cast<Eigen::Index>(train_sims.size()));
        Eigen::MatrixXd nxt(data.dim(), static_cast<Eigen::Index>(train_sims.size()));
        for (std::size_t i = 0; i < train_sims.size(); ++i) {
          cur.col(static_cast<Eigen::Index>(i)) =
              data.states[static_cast<std::size_t>(t)].col(train_sims[i]);
          nxt.col(static_cast<Eigen::Index>(i)) =
              data.states[static_cast<std::size_t>(t) + 1].col(train_sims[i]);
        }
        inputs.middleCols(col, cur.cols()) = pca_encode(pca, cur);
        targets.middleCols(col, cur.cols()) = pca_encode(pca, nxt);
        col += cur.cols();
      }
      const LinRegModel model = linreg_fit(inputs, targets);
      save_linreg(lr_out, model);
      std::cout << "wrote " << lr_out << " from " << n_pairs << " pairs\n";
      return 0;
    }

    if (assim->parsed()) {
      const Method method = parse_method(as_method);
      const MethodContext ctx = load_context(assim, method, as_art);
      const DaConfig cfg = resolve_da_config(assim, as_da, method);
      const auto obs = synthesize_observations(
          as_art.truth, cfg.sigma_r,
          as_da.obs_seed_set ? as_da.obs_seed : cfg.seed);
      RunReport report =
          run_filter(cfg, make_operators(method, ctx, cfg), as_art.truth, obs);
      report.method = method_name(method);
      if (!as_out.empty()) save_run_report_json(as_out, report);
      if (!as_csv.empty()) save_rmse_csv(as_csv, report.rmse_series);
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
      if (report.aborted) {
        std::cerr << "aborted at step " << report.abort_step << ": "
                  << report.abort_reason << "\n";
        return 1;
      }
      std::cout << report.method << ": mean RMSE " << report.mean_rmse << " ("
                << cfg.n_cycles << " cycles, " << report.wall_seconds
                << " s)\n";
      return 0;
    }

    if (gs->parsed()) {
      const Method method = parse_method(gs_method);
      const MethodContext ctx = load_context(gs, method, gs_art);
      const DaConfig base = resolve_da_config(gs, gs_da, method);
      GridSpec grid{kDefaultInflations, kDefaultSigmaQs};
      if (!gs_grid.empty()) grid = parse_grid_spec(load_kv_config(gs_grid));
      const auto obs = synthesize_observations(
          gs_art.truth, base.sigma_r,
          gs_da.obs_seed_set ? gs_da.obs_seed : base.seed);
      GridReport report = grid_search(
          grid, base,
          [&](const DaConfig& cfg) { return make_operators(method, ctx, cfg); },
          gs_art.truth, obs);
      report.method = method_name(method);
      if (!gs_out.empty()) save_grid_report_json(gs_out, report, base);
      if (!gs_csv.empty()) save_grid_csv(gs_csv, report);
      const auto& best = report.cells[static_cast<std::size_t>(report.best_index)];
      std::cout << report.method << ": best inflation " << best.inflation
                << ", sigma_q " << best.sigma_q << ", mean RMSE "
                << best.mean_rmse << "\n";
      return 0;
    }

    if (bench->parsed()) {
      const Method method = parse_method(be_method);
      const MethodContext ctx = load_context(bench, method, be_art);
      const DaConfig cfg = resolve_da_config(bench, be_da, method);
      const auto obs = synthesize_observations(
          be_art.truth, cfg.sigma_r,
          be_da.obs_seed_set ? be_da.obs_seed : cfg.seed);
      const TimingReport report = timing_bench(
          cfg, make_operators(method, ctx, cfg), be_art.truth, obs, be_repeats);
      if (!be_out.empty())
        save_timing_report_json(be_out, method_name(method), report, cfg);
      std::cout << method_name(method) << ": " << report.mean_seconds
                << " s/run (std " << report.std_seconds << ", "
                << report.repeats << " repeats), mean RMSE "
                << report.mean_rmse << "\n";
      return 0;
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
