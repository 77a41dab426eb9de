// Acceptance gate for the latent-assimilation benchmark. Re-derives every
// artifact of the study (or loads it from the cache directory given as
// argv[1]), then checks each release criterion and prints one PASS/FAIL line
// per criterion. A cold run trains three networks (a 20-epoch pretrain picks
// each restart point, then 40 retrain epochs resume from it) and sweeps every
// hyperparameter grid, which takes hours; cached reruns replay in minutes.
//
//   1. tuned full-space filter accuracy and cost
//   2. tuned latent filter beats it (majority over training seeds)
//   3. linear baselines trail the latent filter by >= 1.5x
//   4. latent analysis wins the wall-clock comparison
//   5. algebra / gradient / stability property suites
//   6. healthy loss curves
//
// Every tolerance is pinned here, not configurable.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latentda/assimilation.hpp"
#include "latentda/dynamics.hpp"
#include "latentda/ensembles.hpp"
#include "latentda/harness.hpp"
#include "latentda/io.hpp"
#include "latentda/neural.hpp"
#include "latentda/reduction.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latentda;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------- benchmark
// The experiment definition. Changing any value here changes what the gate
// certifies, so everything is a named constant.

constexpr int kModelDim = 40;
constexpr int kFullDim = 400;
constexpr std::uint64_t kMapSeed = 7;

constexpr int kTrainSims = 1000;
constexpr int kTrainSteps = 500;
constexpr std::uint64_t kTrainDataSeed = 1;

constexpr int kTruthSteps = 1001;  // cycle t scores against state t, t <= 1000
constexpr std::uint64_t kTruthSeed = 9001;  // unseen orbit, same lift map

constexpr int kMembers = 40;
constexpr double kSigmaR = 1.0;
constexpr double kSigmaB = 0.3;
constexpr double kSigmaM = 0.3;  // physical propagator only
constexpr int kCycles = 1000;
constexpr std::uint64_t kDaSeed = 42;

const std::vector<double> kInflations = {0.99, 1.0,  1.004, 1.01, 1.02,
                                         1.05, 1.08, 1.1,   1.12, 1.15,
                                         1.2,  1.3,  1.5,   1.9};
const std::vector<double> kSigmaQs = {1e-7, 1e-6, 1e-5, 5e-5, 1e-4, 1e-3, 1e-2,
                                      0.05, 0.07, 0.1,  0.3,  0.5,  0.7,  0.9};

const std::vector<std::uint64_t> kTrainSeeds = {1, 2, 3};
// Two-phase protocol: a short run from scratch picks the restart point, then
// the benchmark networks are retrained for kEpochs more from that best
// checkpoint. Criterion 6 reads the retrain-phase curves.
constexpr int kPretrainEpochs = 20;
constexpr int kEpochs = 40;
constexpr std::uint64_t kPcaSeed = 1;  // split seed shared by the PCA stack
constexpr int kBenchRepeats = 100;

// ------------------------------------------------------------- pass bands

constexpr double kRmseLow = 0.15;
constexpr double kRmseHigh = 0.25;
constexpr double kTunedLambdaLow = 1.05;
constexpr double kTunedLambdaHigh = 1.2;
constexpr double kRunSecondsMax = 120.0;
constexpr double kFullLatentBand = 0.1;   // |tuned P - tuned full|
constexpr double kBaselineFactor = 1.5;   // PCA methods vs latent filter
constexpr double kSpeedupFactor = 0.6;    // latent vs full wall-clock
constexpr int kCurveSettleEpoch = 3;      // transients allowed before this
constexpr double kCurveBalance = 10.0;    // l_ae vs l_sur, order of magnitude
constexpr double kRolloutBound = 3.0;     // times the training-data max |x|

// ------------------------------------------------------------------ output

void say(const std::string& line) { std::cout << line << "\n" << std::flush; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

PropertyResult property(const std::string& name, bool pass,
                        const std::string& detail) {
  PropertyResult r{name, pass, detail};
  say(std::string("property ") + name + ": " + (pass ? "ok" : "FAILED") +
      " (" + detail + ")");
  return r;
}

// ------------------------------------------------------------------- cache

// Writes go to a sibling temp file first so an interrupted run never leaves
// a half-written artifact behind for the next run to trip over.
void atomic_store(const fs::path& path,
                  const std::function<void(const std::string&)>& writer) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  writer(tmp.string());
  fs::rename(tmp, path);
}

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

double json_double(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return kInf;
  return j[key].get<double>();
}

std::uint64_t fnv1a_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << h;
  return os.str();
}

std::vector<EpochStats> load_curves_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<EpochStats> curves;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    EpochStats e;
    std::getline(ss, tok, ',');
    e.epoch = std::stoi(tok);
    std::getline(ss, tok, ',');
    e.total = std::stod(tok);
    std::getline(ss, tok, ',');
    e.l_ae = std::stod(tok);
    std::getline(ss, tok, ',');
    e.l_sur = std::stod(tok);
    std::getline(ss, tok, ',');
    e.l_sur_unchained = std::stod(tok);
    curves.push_back(e);
  }
  return curves;
}

// ------------------------------------------------------------------- study

struct TrainedModel {
  Checkpoint best;
  std::vector<EpochStats> curves;
  bool aborted = false;
};

struct Study {
  fs::path cache;
  AugmentedMap map;
  TrajectoryDataset truth;
  std::vector<Eigen::VectorXd> observations;

  std::optional<TrajectoryDataset> train_full;  // dropped once training ends
  double train_max_abs = 0.0;

  PcaModel pca;
  LinRegModel linreg;
  Checkpoint pca_surrogate;
  std::map<std::uint64_t, TrainedModel> nn;  // keyed by training seed

  std::map<std::string, GridReport> grids;        // keyed by tag
  std::map<std::string, TimingReport> timings;    // keyed by method name
};

const TrajectoryDataset& train_data(Study& st) {
  if (!st.train_full) {
    say("building training data (" + std::to_string(kTrainSims) + " sims x " +
        std::to_string(kTrainSteps) + " steps, lifted to " +
        std::to_string(kFullDim) + ")");
    LorenzConfig cfg;
    cfg.dim = kModelDim;
    cfg.seed = kTrainDataSeed;
    const TrajectoryDataset latent =
        generate_trajectories(cfg, kTrainSims, kTrainSteps);
    st.train_full = lift_dataset(st.map, latent);
  }
  return *st.train_full;
}

double train_max_abs(Study& st) {
  if (st.train_max_abs > 0.0) return st.train_max_abs;
  const fs::path path = st.cache / "train_max_abs.txt";
  if (fs::exists(path)) {
    std::ifstream in(path);
    if (in >> st.train_max_abs && st.train_max_abs > 0.0)
      return st.train_max_abs;
  }
  const TrajectoryDataset& data = train_data(st);
  double mx = 0.0;
  for (const auto& state : data.states)
    mx = std::max(mx, state.cwiseAbs().maxCoeff());
  st.train_max_abs = mx;
  atomic_store(path, [&](const std::string& tmp) {
    std::ofstream out(tmp);
    out << std::setprecision(17) << mx << "\n";
  });
  return st.train_max_abs;
}

std::vector<int> training_simulations(int n_sim, std::uint64_t split_seed) {
  const std::vector<int> test = test_simulations(n_sim, 0.05, split_seed);
  std::vector<char> held(static_cast<std::size_t>(n_sim), 0);
  for (int s : test) held[static_cast<std::size_t>(s)] = 1;
  std::vector<int> train;
  for (int s = 0; s < n_sim; ++s)
    if (!held[static_cast<std::size_t>(s)]) train.push_back(s);
  return train;
}

void build_pca_stack(Study& st) {
  const fs::path pca_path = st.cache / "pca.pca";
  const fs::path lin_path = st.cache / "linreg.linreg";
  const fs::path sur_path = st.cache / "pca_surrogate.mlp";
  const fs::path sur_curves = st.cache / "pca_surrogate_curves.csv";
  if (fs::exists(pca_path) && fs::exists(lin_path) && fs::exists(sur_path) &&
      fs::exists(sur_curves)) {
    st.pca = load_pca(pca_path.string());
    st.linreg = load_linreg(lin_path.string());
    st.pca_surrogate = load_checkpoint(sur_path.string());
    say("pca stack: loaded from cache");
    return;
  }

  const TrajectoryDataset& data = train_data(st);
  const std::vector<int> train_sims =
      training_simulations(data.n_sim(), kPcaSeed);

  say("fitting pca (" + std::to_string(train_sims.size()) +
      " training simulations)");
  {
    const Eigen::MatrixXd samples = dataset_samples(data, &train_sims);
    st.pca = pca_fit(samples, kModelDim);
  }
  atomic_store(pca_path, [&](const std::string& tmp) { save_pca(tmp, st.pca); });

  say("fitting linear propagator");
  {
    const int pairs_per_sim = data.n_steps() - 1;
    const Eigen::Index n_pairs =
        static_cast<Eigen::Index>(train_sims.size()) * pairs_per_sim;
    Eigen::MatrixXd inputs(kModelDim, n_pairs);
    Eigen::MatrixXd targets(kModelDim, n_pairs);
    Eigen::Index col = 0;
    for (int t = 0; t + 1 < data.n_steps(); ++t) {
      Eigen::MatrixXd now(kFullDim, static_cast<Eigen::Index>(train_sims.size()));
      Eigen::MatrixXd next(kFullDim, static_cast<Eigen::Index>(train_sims.size()));
      for (std::size_t i = 0; i < train_sims.size(); ++i) {
        now.col(static_cast<Eigen::Index>(i)) = data.states[t].col(train_sims[i]);
        next.col(static_cast<Eigen::Index>(i)) =
            data.states[t + 1].col(train_sims[i]);
      }
      inputs.middleCols(col, now.cols()) = pca_encode(st.pca, now);
      targets.middleCols(col, now.cols()) = pca_encode(st.pca, next);
      col += now.cols();
    }
    st.linreg = linreg_fit(inputs, targets);
  }
  atomic_store(lin_path,
               [&](const std::string& tmp) { save_linreg(tmp, st.linreg); });

  const fs::path sur_p1 = st.cache / "pca_surrogate_p1.mlp";
  Checkpoint warm;
  if (fs::exists(sur_p1)) {
    warm = load_checkpoint(sur_p1.string());
    say("pca surrogate pretrain: loaded from cache (best epoch " +
        std::to_string(warm.epoch) + ")");
  } else {
    say("pretraining pca surrogate (" + std::to_string(kPretrainEpochs) +
        " epochs)");
    TrainConfig pre;
    pre.epochs = kPretrainEpochs;
    pre.seed = kPcaSeed;
    const TrainResult r1 = train_pca_surrogate(data, st.pca, pre);
    if (r1.aborted)
      say("warning: pca surrogate pretraining aborted (" + r1.abort_reason +
          "); keeping the best checkpoint");
    warm = r1.best;
    atomic_store(sur_p1,
                 [&](const std::string& tmp) { save_checkpoint(tmp, warm); });
  }

  say("retraining pca surrogate (" + std::to_string(kEpochs) +
      " epochs from the phase-1 best)");
  TrainConfig cfg;
  cfg.epochs = warm.epoch + 1 + kEpochs;  // exactly kEpochs retrain epochs
  cfg.seed = kPcaSeed;
  const TrainResult result =
      warm.epoch >= 0 ? train_pca_surrogate(data, st.pca, cfg, &warm)
                      : train_pca_surrogate(data, st.pca, cfg);
  if (result.aborted)
    say("warning: pca surrogate training aborted (" + result.abort_reason +
        "); keeping the best checkpoint");
  st.pca_surrogate = result.best;
  atomic_store(sur_path, [&](const std::string& tmp) {
    save_checkpoint(tmp, result.best);
  });
  atomic_store(sur_curves, [&](const std::string& tmp) {
    save_loss_curves_csv(tmp, result.curves);
  });
}

const TrainedModel& nn_model(Study& st, std::uint64_t seed) {
  auto it = st.nn.find(seed);
  if (it != st.nn.end()) return it->second;

  const std::string tag = "s" + std::to_string(seed);
  const fs::path ckpt_path = st.cache / ("ckpt_" + tag + ".mlp");
  const fs::path curve_path = st.cache / ("curves_" + tag + ".csv");
  TrainedModel model;
  if (fs::exists(ckpt_path) && fs::exists(curve_path)) {
    model.best = load_checkpoint(ckpt_path.string());
    model.curves = load_curves_csv(curve_path);
    say("checkpoint seed " + std::to_string(seed) +
        ": loaded from cache (test loss " + fmt(model.best.test_loss) + ")");
    return st.nn.emplace(seed, std::move(model)).first->second;
  }

  const fs::path p1_path = st.cache / ("ckpt_" + tag + "_p1.mlp");
  Checkpoint warm;
  if (fs::exists(p1_path)) {
    warm = load_checkpoint(p1_path.string());
    say("pretrain seed " + std::to_string(seed) +
        ": loaded from cache (best epoch " + std::to_string(warm.epoch) +
        ", test loss " + fmt(warm.test_loss) + ")");
  } else {
    say("pretraining networks, seed " + std::to_string(seed) + " (" +
        std::to_string(kPretrainEpochs) + " epochs)");
    TrainConfig pre;
    pre.epochs = kPretrainEpochs;
    pre.latent_dim = kModelDim;
    pre.seed = seed;
    pre.verbose = true;
    const TrainResult r1 = train_model(train_data(st), pre);
    if (r1.aborted)
      say("warning: pretraining seed " + std::to_string(seed) + " aborted (" +
          r1.abort_reason + "); keeping the best checkpoint");
    warm = r1.best;
    atomic_store(p1_path,
                 [&](const std::string& tmp) { save_checkpoint(tmp, warm); });
    say("pretrain seed " + std::to_string(seed) + ": best epoch " +
        std::to_string(warm.epoch) + ", test loss " + fmt(warm.test_loss));
  }

  say("retraining networks, seed " + std::to_string(seed) + " (" +
      std::to_string(kEpochs) + " epochs from the phase-1 best)");
  TrainConfig cfg;
  cfg.epochs = warm.epoch + 1 + kEpochs;  // exactly kEpochs retrain epochs
  cfg.latent_dim = kModelDim;
  cfg.seed = seed;
  cfg.checkpoint_path = ckpt_path.string();  // best-so-far mirror
  cfg.verbose = true;
  const TrainResult result =
      warm.epoch >= 0 ? train_model(train_data(st), cfg, &warm)
                      : train_model(train_data(st), cfg);
  model.best = result.best;
  model.curves = result.curves;
  model.aborted = result.aborted;
  if (result.aborted)
    say("warning: training seed " + std::to_string(seed) + " aborted (" +
        result.abort_reason + "); keeping the best checkpoint");
  atomic_store(ckpt_path, [&](const std::string& tmp) {
    save_checkpoint(tmp, model.best);
  });
  atomic_store(curve_path, [&](const std::string& tmp) {
    save_loss_curves_csv(tmp, model.curves);
  });
  say("checkpoint seed " + std::to_string(seed) + ": best epoch " +
      std::to_string(model.best.epoch) + ", test loss " +
      fmt(model.best.test_loss));
  return st.nn.emplace(seed, std::move(model)).first->second;
}

// ------------------------------------------------------------- experiments

DaConfig base_config(Method method) {
  DaConfig cfg;
  cfg.members = kMembers;
  cfg.sigma_r = kSigmaR;
  cfg.sigma_b = kSigmaB;
  cfg.sigma_m = kSigmaM;
  cfg.n_cycles = kCycles;
  cfg.seed = kDaSeed;
  cfg.analysis_space = method_space(method);
  if (!method_uses_physical_model(method)) cfg.sigma_m = 0.0;
  return cfg;
}

MethodContext context_for(Study& st, Method method, const Checkpoint* nn) {
  MethodContext ctx;
  ctx.model.dim = kModelDim;
  ctx.model.delta_t = st.truth.config.delta_t;
  ctx.model.forcing = st.truth.config.forcing;
  switch (method) {
    case Method::etkf_q:
      ctx.map = &st.map;
      break;
    case Method::etkf_q_p:
    case Method::etkf_q_l:
      ctx.nn = &nn->params;
      break;
    case Method::pca_s_p:
    case Method::pca_s_l:
      ctx.pca = &st.pca;
      ctx.pca_surrogate = &st.pca_surrogate.params.surrogate;
      break;
    case Method::pca_linreg_p:
    case Method::pca_linreg_l:
      ctx.pca = &st.pca;
      ctx.linreg = &st.linreg;
      break;
  }
  return ctx;
}

RunReport cell_run(Study& st, const fs::path& path, const DaConfig& cfg,
                   Method method, const MethodContext& ctx) {
  if (fs::exists(path)) {
    try {
      const json j = load_json(path);
      RunReport run;
      run.method = j.value("method", method_name(method));
      run.aborted = j.value("aborted", false);
      run.mean_rmse = run.aborted ? kInf : json_double(j, "mean_rmse");
      run.wall_seconds = json_double(j, "wall_seconds");
      return run;
    } catch (const std::exception&) {
      fs::remove(path);  // half-written by an older interrupted run
    }
  }
  RunReport run =
      run_filter(cfg, make_operators(method, ctx, cfg), st.truth,
                 st.observations);
  run.method = method_name(method);
  atomic_store(path, [&](const std::string& tmp) {
    save_run_report_json(tmp, run);
  });
  return run;
}

// Same sweep and tie rule as the benchmark tool: every cell shares the seeds,
// aborted cells count as +inf, ties fall to the smallest inflation then the
// smallest sigma_q.
const GridReport& tuned_grid(Study& st, Method method, const std::string& tag,
                             const Checkpoint* nn = nullptr) {
  auto it = st.grids.find(tag);
  if (it != st.grids.end()) return it->second;

  const fs::path dir = st.cache / ("grid_" + tag);
  fs::create_directories(dir);
  const MethodContext ctx = context_for(st, method, nn);
  const DaConfig base = base_config(method);

  GridReport report;
  report.method = method_name(method);
  report.cells.reserve(kInflations.size() * kSigmaQs.size());
  for (std::size_t i = 0; i < kInflations.size(); ++i) {
    for (std::size_t j = 0; j < kSigmaQs.size(); ++j) {
      DaConfig cfg = base;
      cfg.inflation = kInflations[i];
      cfg.sigma_q = kSigmaQs[j];
      std::ostringstream name;
      name << "cell_" << std::setfill('0') << std::setw(2) << i << "_"
           << std::setw(2) << j << ".json";
      const RunReport run = cell_run(st, dir / name.str(), cfg, method, ctx);
      GridCell cell;
      cell.inflation = cfg.inflation;
      cell.sigma_q = cfg.sigma_q;
      cell.aborted = run.aborted;
      cell.wall_seconds = run.wall_seconds;
      cell.mean_rmse = run.aborted ? kInf : run.mean_rmse;
      report.cells.push_back(cell);
    }
    double row_best = kInf;
    for (std::size_t j = 0; j < kSigmaQs.size(); ++j)
      row_best = std::min(row_best,
                          report.cells[i * kSigmaQs.size() + j].mean_rmse);
    say("  [" + tag + "] inflation " + fmt(kInflations[i]) + " swept (" +
        std::to_string((i + 1) * kSigmaQs.size()) + "/" +
        std::to_string(kInflations.size() * kSigmaQs.size()) +
        " cells, row best " + fmt(row_best) + ")");
  }
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
  if (!fs::exists(dir / "grid.json"))
    atomic_store(dir / "grid.json", [&](const std::string& tmp) {
      save_grid_report_json(tmp, report, base);
    });
  if (!fs::exists(dir / "grid.csv"))
    atomic_store(dir / "grid.csv", [&](const std::string& tmp) {
      save_grid_csv(tmp, report);
    });
  const GridCell& best =
      report.cells[static_cast<std::size_t>(report.best_index)];
  say("grid " + tag + ": best inflation " + fmt(best.inflation) +
      ", sigma_q " + fmt(best.sigma_q) + ", mean RMSE " + fmt(best.mean_rmse));
  return st.grids.emplace(tag, std::move(report)).first->second;
}

const GridCell& best_cell(const GridReport& report) {
  return report.cells[static_cast<std::size_t>(report.best_index)];
}

const TimingReport& bench_method(Study& st, Method method,
                                 const GridCell& tuned,
                                 const Checkpoint* nn = nullptr) {
  const std::string name = method_name(method);
  auto it = st.timings.find(name);
  if (it != st.timings.end()) return it->second;

  const fs::path path = st.cache / ("bench_" + name + ".json");
  TimingReport report;
  if (fs::exists(path)) {
    try {
      const json j = load_json(path);
      report.repeats = j.value("repeats", 0);
      report.mean_seconds = json_double(j, "mean_seconds");
      report.std_seconds = json_double(j, "std_seconds");
      report.mean_rmse = json_double(j, "mean_rmse");
      if (j.contains("seconds"))
        report.seconds = j["seconds"].get<std::vector<double>>();
      if (report.repeats == kBenchRepeats) {
        say("bench " + name + ": loaded from cache (" +
            fmt(report.mean_seconds) + " s/run)");
        return st.timings.emplace(name, std::move(report)).first->second;
      }
    } catch (const std::exception&) {
    }
    fs::remove(path);
  }

  say("timing " + name + " (" + std::to_string(kBenchRepeats) +
      " repeats at inflation " + fmt(tuned.inflation) + ", sigma_q " +
      fmt(tuned.sigma_q) + ")");
  DaConfig cfg = base_config(method);
  cfg.inflation = tuned.inflation;
  cfg.sigma_q = tuned.sigma_q;
  const MethodContext ctx = context_for(st, method, nn);
  report = timing_bench(cfg, make_operators(method, ctx, cfg), st.truth,
                        st.observations, kBenchRepeats);
  atomic_store(path, [&](const std::string& tmp) {
    save_timing_report_json(tmp, name, report, cfg);
  });
  say("bench " + name + ": " + fmt(report.mean_seconds) + " s/run (std " +
      fmt(report.std_seconds) + ")");
  return st.timings.emplace(name, std::move(report)).first->second;
}

// -------------------------------------------------------- property suites

PropertyResult check_deviation_roundtrip() {
  CounterRng rng(101, 0);
  double worst_mean = 0.0, worst_cov = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 40);
    const int m = 2 + static_cast<int>(rng.next_u64() % 60);
    const double scale = 0.3 + 3.0 * rng.uniform();
    Eigen::MatrixXd e = scale * rng.normal_matrix(n, m);
    e.colwise() += rng.normal_vector(n);
    const UmBasis basis = build_um(m);
    const DeviationPair pair = mean_and_deviation(e, basis);
    const Eigen::MatrixXd back = reconstruct(pair, basis);

    const Eigen::VectorXd mean_a = e.rowwise().mean();
    const Eigen::VectorXd mean_b = back.rowwise().mean();
    worst_mean = std::max(worst_mean, (mean_a - mean_b).cwiseAbs().maxCoeff());

    const Eigen::MatrixXd da = e.colwise() - mean_a;
    const Eigen::MatrixXd db = back.colwise() - mean_b;
    const Eigen::MatrixXd cov_a = da * da.transpose() / double(m - 1);
    const Eigen::MatrixXd cov_b = db * db.transpose() / double(m - 1);
    worst_cov = std::max(worst_cov, (cov_a - cov_b).cwiseAbs().maxCoeff());
  }
  return property("deviation roundtrip", worst_mean < 1e-10 && worst_cov < 1e-10,
                  "1000 ensembles, worst mean err " + fmt(worst_mean, 3) +
                      ", worst cov err " + fmt(worst_cov, 3));
}

PropertyResult check_um_orthonormality() {
  double worst = 0.0;
  for (int m = 2; m <= 100; ++m) {
    const UmBasis basis = build_um(m);
    Eigen::MatrixXd b(m, m);
    b.col(0).setConstant(1.0 / std::sqrt(double(m)));
    b.rightCols(m - 1) = basis.u;
    const Eigen::MatrixXd gram = b.transpose() * b;
    worst = std::max(
        worst, (gram - Eigen::MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff());
  }
  return property("U_m orthonormality", worst < 1e-12,
                  "m in 2..100, worst |B'B - I| " + fmt(worst, 3));
}

PropertyResult check_truncated_eig() {
  CounterRng rng(202, 0);
  double worst_gap = -kInf;
  for (int i = 0; i < 100; ++i) {
    const int n = 5 + static_cast<int>(rng.next_u64() % 56);
    const int k = 1 + static_cast<int>(rng.next_u64() % n);
    const int rank = 1 + static_cast<int>(rng.next_u64() % n);
    const Eigen::MatrixXd a = rng.normal_matrix(n, k);
    const Eigen::MatrixXd s =
        a * a.transpose() +
        (0.01 * rng.uniform()) * Eigen::MatrixXd::Identity(n, n);

    const TruncatedEig t = truncated_sym_eig(s, rank);
    const Eigen::MatrixXd recon =
        t.vectors * t.values.asDiagonal() * t.vectors.transpose();
    const double r_eig = (s - recon).norm();

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        s, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd svd_recon =
        svd.matrixU().leftCols(rank) *
        svd.singularValues().head(rank).asDiagonal() *
        svd.matrixV().leftCols(rank).transpose();
    const double r_svd = (s - svd_recon).norm();
    worst_gap = std::max(worst_gap, r_eig - r_svd);
  }
  return property("truncated eig vs svd oracle", worst_gap <= 1e-9,
                  "100 instances, worst residual excess " + fmt(worst_gap, 3));
}

PropertyResult check_scalar_kalman() {
  const int m = kMembers;
  const int n_cycles = 60;
  const double a = 0.97, sr = 0.4, sq = 0.15, sb = 0.5, x0 = 4.0;
  const double tol = 5.0 / std::sqrt(double(m));

  DaConfig cfg;
  cfg.members = m;
  cfg.inflation = 1.0;
  cfg.sigma_r = sr;
  cfg.sigma_b = sb;
  cfg.sigma_q = sq;
  cfg.n_cycles = n_cycles;
  FilterOperators ops;
  ops.propagate = [a](Eigen::MatrixXd& e, CounterRng&) { e *= a; };
  const UmBasis basis = build_um(m);

  double worst_mean = 0.0, worst_var = 0.0;
  for (int seed = 1; seed <= 100; ++seed) {
    CounterRng rng(5000 + static_cast<std::uint64_t>(seed), 0);
    std::vector<Eigen::VectorXd> obs;
    double truth = x0;
    for (int t = 0; t < n_cycles; ++t) {
      truth *= a;
      Eigen::VectorXd y(1);
      y << truth + sr * rng.normal();
      obs.push_back(y);
    }

    CycleState state;
    state.ensemble = Eigen::MatrixXd(1, m);
    for (int j = 0; j < m; ++j) state.ensemble(0, j) = x0 + sb * rng.normal();
    const double m0 = state.ensemble.row(0).mean();
    const double p0 =
        (state.ensemble.row(0).array() - m0).square().sum() / double(m - 1);

    CounterRng prop_rng = rng.split(1);
    Eigen::VectorXd ens_mean(n_cycles), ens_var(n_cycles);
    for (int t = 0; t < n_cycles; ++t) {
      propagate_and_correct(state, ops, cfg, basis, prop_rng);
      analysis(state, obs[static_cast<std::size_t>(t)], ops, cfg, basis);
      const double mu = state.ensemble.row(0).mean();
      ens_mean(t) = mu;
      ens_var(t) =
          (state.ensemble.row(0).array() - mu).square().sum() / double(m - 1);
    }

    Eigen::MatrixXd m_op(1, 1), h(1, 1), r(1, 1), q(1, 1), p0m(1, 1);
    m_op << a;
    h << 1.0;
    r << sr * sr;
    q << sq * sq;
    p0m << p0;
    Eigen::VectorXd x0v(1);
    x0v << m0;
    const KalmanResult kf = kalman_filter_oracle(m_op, h, r, q, x0v, p0m, obs);

    Eigen::VectorXd kf_mean(n_cycles), kf_var(n_cycles);
    for (int t = 0; t < n_cycles; ++t) {
      kf_mean(t) = kf.means[static_cast<std::size_t>(t)](0);
      kf_var(t) = kf.covs[static_cast<std::size_t>(t)](0, 0);
    }
    worst_mean = std::max(worst_mean,
                          (ens_mean - kf_mean).norm() / kf_mean.norm());
    worst_var =
        std::max(worst_var, (ens_var - kf_var).norm() / kf_var.norm());
  }
  return property(
      "scalar ensemble vs exact kalman", worst_mean < tol && worst_var < tol,
      "100 seeds, worst rel mean err " + fmt(worst_mean, 3) +
          ", worst rel var err " + fmt(worst_var, 3) + ", tol " + fmt(tol, 3));
}

PropertyResult check_gradients() {
  CounterRng rng(77, 0);
  ModelParams params;
  params.encoder = make_encoder({5, 4, 3}, rng);
  params.decoder = make_decoder({3, 4, 5}, rng);
  params.surrogate = make_surrogate(3, 2, rng);
  params.surrogate.alphas << 0.3, -0.2;  // off the identity point

  std::vector<Eigen::MatrixXd> window;
  for (int c = 0; c < 3; ++c) window.push_back(rng.normal_matrix(5, 4));
  const double rho = 1.7;

  ModelGrads grads = zero_grads(params);
  combined_loss(params, window, rho, &grads);

  std::vector<std::pair<double*, double>> slots;
  auto harvest = [&slots](Mlp& net, MlpGrads& g) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto& w = net.layers[l].weight;
      for (Eigen::Index k = 0; k < w.size(); ++k)
        slots.emplace_back(w.data() + k, g.d_weight[l].data()[k]);
      auto& b = net.layers[l].bias;
      for (Eigen::Index k = 0; k < b.size(); ++k)
        slots.emplace_back(b.data() + k, g.d_bias[l].data()[k]);
    }
    for (Eigen::Index k = 0; k < net.alphas.size(); ++k)
      slots.emplace_back(net.alphas.data() + k, g.d_alpha(k));
  };
  harvest(params.encoder, grads.encoder);
  harvest(params.decoder, grads.decoder);
  harvest(params.surrogate, grads.surrogate);

  const double h = 1e-6;
  double worst = 0.0;
  for (const auto& [ptr, analytic] : slots) {
    const double keep = *ptr;
    *ptr = keep + h;
    const double up = combined_loss(params, window, rho).total;
    *ptr = keep - h;
    const double down = combined_loss(params, window, rho).total;
    *ptr = keep;
    const double fd = (up - down) / (2.0 * h);
    const double scale = std::max({1e-8, std::abs(fd), std::abs(analytic)});
    worst = std::max(worst, std::abs(fd - analytic) / scale);
  }
  return property("analytic vs central-difference gradients", worst < 1e-5,
                  std::to_string(slots.size()) + " parameters, worst rel err " +
                      fmt(worst, 3));
}

PropertyResult check_rezero_identity() {
  CounterRng rng(303, 0);
  const Mlp net = make_surrogate(7, 3, rng);
  const Eigen::MatrixXd x = rng.normal_matrix(7, 9);
  const double diff = (mlp_forward(net, x) - x).cwiseAbs().maxCoeff();
  return property("rezero identity at initialization", diff == 0.0,
                  "max |f(x) - x| = " + fmt(diff, 3));
}

PropertyResult check_lift_project(Study& st) {
  LorenzConfig cfg;
  cfg.dim = kModelDim;
  cfg.seed = 424242;
  const TrajectoryDataset sample = generate_trajectories(cfg, 20, 500);
  double worst = 0.0;
  long n_states = 0;
  for (const auto& x : sample.states) {
    const Eigen::MatrixXd back = project(st.map, lift(st.map, x));
    worst = std::max(worst, (back - x).cwiseAbs().maxCoeff());
    n_states += x.cols();
  }
  return property("lift/project roundtrip", worst < 1e-9,
                  std::to_string(n_states) + " states, worst err " +
                      fmt(worst, 3));
}

PropertyResult check_rollout(Study& st, const Checkpoint& champion) {
  const double bound = kRolloutBound * train_max_abs(st);
  const int n_starts = 100;
  Eigen::MatrixXd starts(kFullDim, n_starts);
  for (int i = 0; i < n_starts; ++i)
    starts.col(i) = st.truth.states[static_cast<std::size_t>(i * 10)].col(0);

  Eigen::MatrixXd z = mlp_forward(champion.params.encoder, starts);
  double worst = 0.0;
  bool finite = true;
  for (int step = 0; step < 10; ++step) {
    z = mlp_forward(champion.params.surrogate, z);
    const Eigen::MatrixXd decoded = mlp_forward(champion.params.decoder, z);
    if (!decoded.allFinite() || !z.allFinite()) finite = false;
    worst = std::max(worst, decoded.cwiseAbs().maxCoeff());
  }
  return property("chained surrogate rollout bounded",
                  finite && worst <= bound,
                  "10 steps from 100 states, max |decoded| " + fmt(worst, 4) +
                      " vs bound " + fmt(bound, 4));
}

// ------------------------------------------------------------ loss curves

bool curves_healthy(const std::vector<EpochStats>& curves, std::string& why) {
  if (curves.size() < static_cast<std::size_t>(kEpochs)) {
    why = "only " + std::to_string(curves.size()) + " epochs recorded";
    return false;
  }
  using Series = std::pair<const char*, double EpochStats::*>;
  const Series series[] = {{"total", &EpochStats::total},
                           {"l_ae", &EpochStats::l_ae},
                           {"l_sur", &EpochStats::l_sur},
                           {"l_sur_unchained", &EpochStats::l_sur_unchained}};
  for (const auto& [name, member] : series) {
    for (std::size_t k = kCurveSettleEpoch; k + 1 < curves.size(); ++k) {
      if (curves[k + 1].*member > curves[k].*member) {
        why = std::string(name) + " rises at epoch " +
              std::to_string(curves[k + 1].epoch) + " (" +
              fmt(curves[k].*member, 6) + " -> " + fmt(curves[k + 1].*member, 6) +
              ")";
        return false;
      }
    }
  }
  double worst_ratio = 1.0;
  for (std::size_t k = kCurveSettleEpoch; k < curves.size(); ++k) {
    const double hi = std::max(curves[k].l_ae, curves[k].l_sur);
    const double lo = std::min(curves[k].l_ae, curves[k].l_sur);
    if (lo <= 0.0) continue;
    worst_ratio = std::max(worst_ratio, hi / lo);
  }
  if (worst_ratio > kCurveBalance) {
    why = "l_ae and l_sur drift apart (ratio " + fmt(worst_ratio, 3) + ")";
    return false;
  }
  why = "all four test curves decrease after epoch " +
        std::to_string(kCurveSettleEpoch) + ", worst l_ae/l_sur ratio " +
        fmt(worst_ratio, 3);
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path cache = argc > 1 ? argv[1] : "acceptance_cache";
  fs::create_directories(cache);
  say("acceptance gate; cache " + cache.string());

  Study st;
  st.cache = cache;
  st.map = build_augmented_map(kModelDim, kFullDim, kMapSeed);
  {
    LorenzConfig cfg;
    cfg.dim = kModelDim;
    cfg.seed = kTruthSeed;
    st.truth = lift_dataset(st.map, generate_trajectories(cfg, 1, kTruthSteps));
  }
  st.observations = synthesize_observations(st.truth, kSigmaR, kDaSeed);

  // --- criterion 5, parts that need no trained model ---
  std::vector<PropertyResult> props;
  props.push_back(check_deviation_roundtrip());
  props.push_back(check_um_orthonormality());
  props.push_back(check_truncated_eig());
  props.push_back(check_scalar_kalman());
  props.push_back(check_gradients());
  props.push_back(check_rezero_identity());
  props.push_back(check_lift_project(st));

  // --- artifacts ---
  train_max_abs(st);
  build_pca_stack(st);
  const GridReport& g_full = tuned_grid(st, Method::etkf_q, "etkf_q");

  for (std::uint64_t seed : kTrainSeeds) {
    const TrainedModel& model = nn_model(st, seed);
    const std::string tag = "_s" + std::to_string(seed);
    tuned_grid(st, Method::etkf_q_l, "etkf_q_l" + tag, &model.best);
    tuned_grid(st, Method::etkf_q_p, "etkf_q_p" + tag, &model.best);
  }
  st.train_full.reset();  // grids and timing never touch the training data

  const GridReport& g_pca_s_p = tuned_grid(st, Method::pca_s_p, "pca_s_p");
  const GridReport& g_pca_s_l = tuned_grid(st, Method::pca_s_l, "pca_s_l");
  const GridReport& g_lin_p = tuned_grid(st, Method::pca_linreg_p, "pca_linreg_p");
  const GridReport& g_lin_l = tuned_grid(st, Method::pca_linreg_l, "pca_linreg_l");

  // one checkpoint carries the headline numbers: best held-out loss wins
  std::uint64_t champion_seed = kTrainSeeds.front();
  for (std::uint64_t seed : kTrainSeeds)
    if (nn_model(st, seed).best.test_loss <
        nn_model(st, champion_seed).best.test_loss)
      champion_seed = seed;
  const TrainedModel& champion = nn_model(st, champion_seed);
  const std::string champ_tag = "_s" + std::to_string(champion_seed);
  say("champion checkpoint: seed " + std::to_string(champion_seed) +
      " (test loss " + fmt(champion.best.test_loss) + ")");

  props.push_back(check_rollout(st, champion.best));

  // --- wall-clock ---
  const TimingReport& t_full =
      bench_method(st, Method::etkf_q, best_cell(g_full));
  const TimingReport& t_p = bench_method(
      st, Method::etkf_q_p, best_cell(st.grids.at("etkf_q_p" + champ_tag)),
      &champion.best);
  const TimingReport& t_l = bench_method(
      st, Method::etkf_q_l, best_cell(st.grids.at("etkf_q_l" + champ_tag)),
      &champion.best);
  const TimingReport& t_pca_s_p =
      bench_method(st, Method::pca_s_p, best_cell(g_pca_s_p));
  const TimingReport& t_pca_s_l =
      bench_method(st, Method::pca_s_l, best_cell(g_pca_s_l));
  const TimingReport& t_lin_p =
      bench_method(st, Method::pca_linreg_p, best_cell(g_lin_p));
  const TimingReport& t_lin_l =
      bench_method(st, Method::pca_linreg_l, best_cell(g_lin_l));

  // --- verdicts ---
  json summary;
  summary["cache"] = cache.string();
  std::vector<std::pair<int, bool>> verdicts;
  auto verdict = [&](int id, bool pass, const std::string& detail) {
    verdicts.emplace_back(id, pass);
    summary["criteria"][std::to_string(id)] = {{"pass", pass},
                                               {"detail", detail}};
    say("criterion " + std::to_string(id) + ": " + (pass ? "PASS" : "FAIL") +
        " - " + detail);
  };

  say("");
  say("==== results ====");
  {
    const GridCell& b = best_cell(g_full);
    const bool in_band = b.mean_rmse >= kRmseLow && b.mean_rmse <= kRmseHigh;
    const bool lambda_ok =
        b.inflation >= kTunedLambdaLow && b.inflation <= kTunedLambdaHigh;
    const bool fast = b.wall_seconds <= kRunSecondsMax;
    verdict(1, in_band && lambda_ok && fast,
            "tuned etkf_q mean RMSE " + fmt(b.mean_rmse) + " in [" +
                fmt(kRmseLow) + ", " + fmt(kRmseHigh) + "], inflation " +
                fmt(b.inflation) + " in [" + fmt(kTunedLambdaLow) + ", " +
                fmt(kTunedLambdaHigh) + "], run " + fmt(b.wall_seconds, 3) +
                " s <= " + fmt(kRunSecondsMax, 3) + " s");
  }
  {
    const double full = best_cell(g_full).mean_rmse;
    int wins = 0;
    std::string per_seed;
    for (std::uint64_t seed : kTrainSeeds) {
      const std::string tag = "_s" + std::to_string(seed);
      const double l = best_cell(st.grids.at("etkf_q_l" + tag)).mean_rmse;
      const double p = best_cell(st.grids.at("etkf_q_p" + tag)).mean_rmse;
      const bool ok = l < full && std::abs(p - full) <= kFullLatentBand;
      wins += ok ? 1 : 0;
      per_seed += " s" + std::to_string(seed) + ": L " + fmt(l) + (l < full ? " < " : " >= ") +
                  fmt(full) + ", |P-full| " + fmt(std::abs(p - full)) +
                  (ok ? " (ok)" : " (miss)") + ";";
      summary["per_seed"][std::to_string(seed)] = {
          {"latent_rmse", l}, {"p_rmse", p}, {"ok", ok}};
    }
    const int need = static_cast<int>(kTrainSeeds.size()) / 2 + 1;
    verdict(2, wins >= need,
            std::to_string(wins) + "/" + std::to_string(kTrainSeeds.size()) +
                " seeds give tuned latent < tuned full and |P - full| <= " +
                fmt(kFullLatentBand) + ":" + per_seed);
  }
  {
    const double latent =
        best_cell(st.grids.at("etkf_q_l" + champ_tag)).mean_rmse;
    const double floor = kBaselineFactor * latent;
    bool all = true;
    std::string detail = "latent " + fmt(latent) + ", floor " + fmt(floor) + ";";
    const std::pair<const char*, const GridReport*> baselines[] = {
        {"pca_s_p", &g_pca_s_p},
        {"pca_s_l", &g_pca_s_l},
        {"pca_linreg_p", &g_lin_p},
        {"pca_linreg_l", &g_lin_l}};
    for (const auto& [name, report] : baselines) {
      const double v = best_cell(*report).mean_rmse;
      all = all && v >= floor;
      detail += std::string(" ") + name + " " + fmt(v);
    }
    verdict(3, all, detail);
  }
  {
    const double ratio = t_l.mean_seconds / t_full.mean_seconds;
    const bool twins = t_l.mean_seconds < t_full.mean_seconds &&
                       t_pca_s_l.mean_seconds < t_pca_s_p.mean_seconds &&
                       t_lin_l.mean_seconds < t_lin_p.mean_seconds;
    verdict(4, ratio <= kSpeedupFactor && twins,
            "etkf_q_l/etkf_q wall-clock ratio " + fmt(ratio, 3) + " <= " +
                fmt(kSpeedupFactor) + " over " +
                std::to_string(kBenchRepeats) + " repeats; latent twins faster: pca_s " +
                fmt(t_pca_s_l.mean_seconds, 3) + " < " +
                fmt(t_pca_s_p.mean_seconds, 3) + ", pca_linreg " +
                fmt(t_lin_l.mean_seconds, 3) + " < " +
                fmt(t_lin_p.mean_seconds, 3));
  }
  {
    bool all = true;
    std::string failed;
    for (const auto& p : props) {
      all = all && p.pass;
      if (!p.pass) failed += " " + p.name + ";";
      summary["properties"][p.name] = {{"pass", p.pass}, {"detail", p.detail}};
    }
    verdict(5, all,
            all ? std::to_string(props.size()) + "/" +
                      std::to_string(props.size()) + " property suites hold"
                : "failing suites:" + failed);
  }
  {
    std::string why;
    const bool ok = curves_healthy(champion.curves, why);
    verdict(6, ok,
            "champion seed " + std::to_string(champion_seed) + ": " + why);
  }

  // --- context for the record ---
  say("");
  say("method        inflation  sigma_q    mean RMSE   s/run");
  auto row = [&](const std::string& name, const GridCell& cell,
                 const TimingReport& t) {
    std::ostringstream os;
    os << std::left << std::setw(14) << name << std::setw(11)
       << fmt(cell.inflation) << std::setw(11) << fmt(cell.sigma_q)
       << std::setw(12) << fmt(cell.mean_rmse) << fmt(t.mean_seconds, 4);
    say(os.str());
    summary["table"][name] = {{"inflation", cell.inflation},
                              {"sigma_q", cell.sigma_q},
                              {"mean_rmse", cell.mean_rmse},
                              {"mean_seconds", t.mean_seconds}};
  };
  row("etkf_q", best_cell(g_full), t_full);
  row("etkf_q_p", best_cell(st.grids.at("etkf_q_p" + champ_tag)), t_p);
  row("etkf_q_l", best_cell(st.grids.at("etkf_q_l" + champ_tag)), t_l);
  row("pca_s_p", best_cell(g_pca_s_p), t_pca_s_p);
  row("pca_s_l", best_cell(g_pca_s_l), t_pca_s_l);
  row("pca_linreg_p", best_cell(g_lin_p), t_lin_p);
  row("pca_linreg_l", best_cell(g_lin_l), t_lin_l);

  summary["champion"] = {
      {"seed", champion_seed},
      {"test_loss", champion.best.test_loss},
      {"checkpoint",
       (cache / ("ckpt_s" + std::to_string(champion_seed) + ".mlp")).string()},
      {"checkpoint_fnv1a",
       hex64(fnv1a_file(cache / ("ckpt_s" + std::to_string(champion_seed) +
                                 ".mlp")))}};

  bool all_pass = true;
  for (const auto& [id, pass] : verdicts) all_pass = all_pass && pass;
  summary["all_pass"] = all_pass;
  atomic_store(cache / "summary.json", [&](const std::string& tmp) {
    std::ofstream out(tmp);
    out << summary.dump(2) << "\n";
  });

  say("");
  say(all_pass ? "acceptance: ALL CRITERIA PASS"
               : "acceptance: CRITERIA FAILED");
  return all_pass ? 0 : 1;
}
