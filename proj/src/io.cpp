#include "latentda/io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace latentda {

namespace {

using json = nlohmann::json;

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw FormatError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw FormatError("cannot open for reading: " + path);
  return in;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_block(std::ostream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

void read_block(std::istream& in, double* data, std::size_t count,
                const std::string& path) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw FormatError("truncated data block in " + path);
}

void expect_eof(std::istream& in, const std::string& path) {
  char extra;
  if (in.read(&extra, 1))
    throw FormatError("trailing bytes after data block in " + path);
}

double to_double(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw FormatError("bad number for " + what + ": '" + s + "'");
  }
  if (pos != s.size())
    throw FormatError("bad number for " + what + ": '" + s + "'");
  return v;
}

long long to_int(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw FormatError("bad integer for " + what + ": '" + s + "'");
  }
  if (pos != s.size())
    throw FormatError("bad integer for " + what + ": '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw FormatError("bad integer for " + what + ": '" + s + "'");
  }
  if (pos != s.size())
    throw FormatError("bad integer for " + what + ": '" + s + "'");
  return v;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::string space_tag_name(SpaceTag tag) {
  return tag == SpaceTag::latent40 ? "latent40" : "full400";
}

SpaceTag parse_space_tag(const std::string& name) {
  if (name == "latent40") return SpaceTag::latent40;
  if (name == "full400") return SpaceTag::full400;
  throw FormatError("unknown space tag '" + name + "'");
}

void save_dataset(const std::string& path, const TrajectoryDataset& data) {
  if (data.n_steps() < 1 || data.n_sim() < 1 || data.dim() < 1)
    throw ConfigError("save_dataset: empty dataset");
  for (const auto& st : data.states) {
    if (st.rows() != data.dim() || st.cols() != data.n_sim())
      throw ConfigError("save_dataset: ragged dataset");
    if (!st.allFinite())
      throw ConfigError("save_dataset: dataset holds non-finite values");
  }
  auto out = open_out(path, true);
  out << "al96 v1 " << data.n_steps() << ' ' << data.n_sim() << ' '
      << data.dim() << ' ' << space_tag_name(data.space) << ' '
      << data.config.seed << ' ' << fmt(data.config.delta_t) << ' '
      << fmt(data.config.forcing) << ' ' << data.config.burn;
  // Optional trailing map block keeps the lift's provenance with the data.
  if (data.lift)
    out << " map " << data.lift->model_dim << ' ' << data.lift->map_seed << ' '
        << fmt(data.lift->poly_a) << ' ' << fmt(data.lift->poly_b);
  out << '\n';
  // Column-major dim x n_sim per step is exactly (sim, dim) row-major.
  for (const auto& st : data.states)
    write_block(out, st.data(), static_cast<std::size_t>(st.size()));
  if (!out) throw FormatError("write failed: " + path);
}

TrajectoryDataset load_dataset(const std::string& path) {
  auto in = open_in(path, true);
  std::string header;
  if (!std::getline(in, header))
    throw FormatError("missing header in " + path);
  const auto tok = tokens(header);
  if ((tok.size() != 10 && tok.size() != 15) || tok[0] != "al96" ||
      tok[1] != "v1")
    throw FormatError("not an al96 v1 file: " + path);
  const long long n_steps = to_int(tok[2], "time");
  const long long n_sim = to_int(tok[3], "n_sim");
  const long long dim = to_int(tok[4], "dim");
  if (n_steps < 1 || n_sim < 1 || dim < 1)
    throw FormatError("non-positive dimensions in header of " + path);

  TrajectoryDataset data;
  data.space = parse_space_tag(tok[5]);
  data.config.seed = to_u64(tok[6], "seed");
  data.config.delta_t = to_double(tok[7], "delta_t");
  data.config.forcing = to_double(tok[8], "forcing");
  data.config.burn = static_cast<int>(to_int(tok[9], "burn"));
  data.config.dim = static_cast<int>(dim);
  if (!(data.config.delta_t > 0.0) || !std::isfinite(data.config.forcing) ||
      data.config.burn < 0)
    throw FormatError("invalid header values in " + path);
  if (tok.size() == 15) {
    if (tok[10] != "map")
      throw FormatError("unknown header block '" + tok[10] + "' in " + path);
    LiftInfo lift;
    lift.model_dim = static_cast<int>(to_int(tok[11], "map model_dim"));
    lift.map_seed = to_u64(tok[12], "map seed");
    lift.poly_a = to_double(tok[13], "map poly_a");
    lift.poly_b = to_double(tok[14], "map poly_b");
    if (lift.model_dim < 1 || lift.model_dim > dim || !(lift.poly_b > 0.0) ||
        lift.poly_a < 0.0 || !std::isfinite(lift.poly_a) ||
        !std::isfinite(lift.poly_b))
      throw FormatError("invalid map block in " + path);
    data.lift = lift;
  }

  data.states.assign(static_cast<std::size_t>(n_steps),
                     Eigen::MatrixXd(dim, n_sim));
  for (auto& st : data.states) {
    read_block(in, st.data(), static_cast<std::size_t>(st.size()), path);
    if (!st.allFinite())
      throw FormatError("non-finite state values in " + path);
  }
  expect_eof(in, path);
  return data;
}

namespace {

void write_net_header(std::ostream& out, const std::string& name,
                      const Mlp& net) {
  out << "net " << name << " layers " << net.layers.size() << " alphas "
      << net.alphas.size() << '\n';
  for (const auto& layer : net.layers)
    out << "layer " << layer.weight.cols() << ' ' << layer.weight.rows() << ' '
        << activation_name(layer.act) << '\n';
}

void write_net_blob(std::ostream& out, const Mlp& net) {
  for (const auto& layer : net.layers) {
    write_block(out, layer.weight.data(),
                static_cast<std::size_t>(layer.weight.size()));
    write_block(out, layer.bias.data(),
                static_cast<std::size_t>(layer.bias.size()));
  }
  if (net.alphas.size() > 0)
    write_block(out, net.alphas.data(),
                static_cast<std::size_t>(net.alphas.size()));
}

void write_grads_blob(std::ostream& out, const MlpGrads& g) {
  for (std::size_t i = 0; i < g.d_weight.size(); ++i) {
    write_block(out, g.d_weight[i].data(),
                static_cast<std::size_t>(g.d_weight[i].size()));
    write_block(out, g.d_bias[i].data(),
                static_cast<std::size_t>(g.d_bias[i].size()));
  }
  if (g.d_alpha.size() > 0)
    write_block(out, g.d_alpha.data(),
                static_cast<std::size_t>(g.d_alpha.size()));
}

Mlp read_net_header(std::istream& in, const std::string& expected,
                    const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("missing net header in " + path);
  auto tok = tokens(line);
  if (tok.size() != 6 || tok[0] != "net" || tok[1] != expected ||
      tok[2] != "layers" || tok[4] != "alphas")
    throw FormatError("bad net header '" + line + "' in " + path);
  const long long n_layers = to_int(tok[3], "layers");
  const long long n_alphas = to_int(tok[5], "alphas");
  if (n_layers < 0 || (n_alphas != 0 && n_alphas != n_layers))
    throw FormatError("inconsistent alpha count in " + path);
  Mlp net;
  net.rezero = (n_alphas > 0);
  for (long long i = 0; i < n_layers; ++i) {
    if (!std::getline(in, line)) throw FormatError("missing layer in " + path);
    tok = tokens(line);
    if (tok.size() != 4 || tok[0] != "layer")
      throw FormatError("bad layer line '" + line + "' in " + path);
    const long long cols = to_int(tok[1], "layer in");
    const long long rows = to_int(tok[2], "layer out");
    if (cols < 1 || rows < 1)
      throw FormatError("non-positive layer size in " + path);
    DenseLayer layer;
    layer.weight.resize(rows, cols);
    layer.bias.resize(rows);
    layer.act = parse_activation(tok[3]);
    net.layers.push_back(std::move(layer));
  }
  net.alphas.resize(n_alphas);
  return net;
}

void read_net_blob(std::istream& in, Mlp& net, const std::string& path) {
  for (auto& layer : net.layers) {
    read_block(in, layer.weight.data(),
               static_cast<std::size_t>(layer.weight.size()), path);
    read_block(in, layer.bias.data(),
               static_cast<std::size_t>(layer.bias.size()), path);
  }
  if (net.alphas.size() > 0)
    read_block(in, net.alphas.data(),
               static_cast<std::size_t>(net.alphas.size()), path);
}

void read_grads_blob(std::istream& in, MlpGrads& g, const std::string& path) {
  for (std::size_t i = 0; i < g.d_weight.size(); ++i) {
    read_block(in, g.d_weight[i].data(),
               static_cast<std::size_t>(g.d_weight[i].size()), path);
    read_block(in, g.d_bias[i].data(),
               static_cast<std::size_t>(g.d_bias[i].size()), path);
  }
  if (g.d_alpha.size() > 0)
    read_block(in, g.d_alpha.data(),
               static_cast<std::size_t>(g.d_alpha.size()), path);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt,
                     bool include_moments) {
  auto out = open_out(path, true);
  out << "mlp v1\n";
  out << "epoch " << ckpt.epoch << '\n';
  out << "test_loss " << fmt(ckpt.test_loss) << '\n';
  out << "moments " << (include_moments ? 1 : 0) << '\n';
  out << "adam_t " << ckpt.opt.t << '\n';
  out << "nets 3\n";
  write_net_header(out, "encoder", ckpt.params.encoder);
  write_net_header(out, "decoder", ckpt.params.decoder);
  write_net_header(out, "surrogate", ckpt.params.surrogate);
  out << "end\n";
  write_net_blob(out, ckpt.params.encoder);
  write_net_blob(out, ckpt.params.decoder);
  write_net_blob(out, ckpt.params.surrogate);
  if (include_moments) {
    write_grads_blob(out, ckpt.opt.m.encoder);
    write_grads_blob(out, ckpt.opt.m.decoder);
    write_grads_blob(out, ckpt.opt.m.surrogate);
    write_grads_blob(out, ckpt.opt.v.encoder);
    write_grads_blob(out, ckpt.opt.v.decoder);
    write_grads_blob(out, ckpt.opt.v.surrogate);
  }
  if (!out) throw FormatError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto in = open_in(path, true);
  std::string line;
  if (!std::getline(in, line) || line != "mlp v1")
    throw FormatError("not an mlp v1 file: " + path);

  auto next_kv = [&](const std::string& key) {
    if (!std::getline(in, line))
      throw FormatError("missing '" + key + "' in " + path);
    const auto tok = tokens(line);
    if (tok.size() != 2 || tok[0] != key)
      throw FormatError("expected '" + key + "' line in " + path);
    return tok[1];
  };

  Checkpoint ckpt;
  ckpt.epoch = static_cast<int>(to_int(next_kv("epoch"), "epoch"));
  ckpt.test_loss = to_double(next_kv("test_loss"), "test_loss");
  const long long moments = to_int(next_kv("moments"), "moments");
  ckpt.opt.t = to_int(next_kv("adam_t"), "adam_t");
  if (to_int(next_kv("nets"), "nets") != 3)
    throw FormatError("expected 3 nets in " + path);

  ckpt.params.encoder = read_net_header(in, "encoder", path);
  ckpt.params.decoder = read_net_header(in, "decoder", path);
  ckpt.params.surrogate = read_net_header(in, "surrogate", path);
  if (!std::getline(in, line) || line != "end")
    throw FormatError("missing 'end' marker in " + path);

  read_net_blob(in, ckpt.params.encoder, path);
  read_net_blob(in, ckpt.params.decoder, path);
  read_net_blob(in, ckpt.params.surrogate, path);
  ckpt.opt.m = zero_grads(ckpt.params);
  ckpt.opt.v = zero_grads(ckpt.params);
  if (moments == 1) {
    read_grads_blob(in, ckpt.opt.m.encoder, path);
    read_grads_blob(in, ckpt.opt.m.decoder, path);
    read_grads_blob(in, ckpt.opt.m.surrogate, path);
    read_grads_blob(in, ckpt.opt.v.encoder, path);
    read_grads_blob(in, ckpt.opt.v.decoder, path);
    read_grads_blob(in, ckpt.opt.v.surrogate, path);
  } else if (moments != 0) {
    throw FormatError("bad moments flag in " + path);
  }
  expect_eof(in, path);
  return ckpt;
}

void save_pca(const std::string& path, const PcaModel& model) {
  auto out = open_out(path, true);
  out << "pca v1 " << model.mean.size() << ' ' << model.components.cols()
      << '\n';
  write_block(out, model.mean.data(),
              static_cast<std::size_t>(model.mean.size()));
  write_block(out, model.components.data(),
              static_cast<std::size_t>(model.components.size()));
  write_block(out, model.explained_variance.data(),
              static_cast<std::size_t>(model.explained_variance.size()));
  if (!out) throw FormatError("write failed: " + path);
}

PcaModel load_pca(const std::string& path) {
  auto in = open_in(path, true);
  std::string header;
  if (!std::getline(in, header)) throw FormatError("missing header in " + path);
  const auto tok = tokens(header);
  if (tok.size() != 4 || tok[0] != "pca" || tok[1] != "v1")
    throw FormatError("not a pca v1 file: " + path);
  const long long dim = to_int(tok[2], "dim");
  const long long k = to_int(tok[3], "components");
  if (dim < 1 || k < 1 || k > dim)
    throw FormatError("bad pca dimensions in " + path);
  PcaModel model;
  model.mean.resize(dim);
  model.components.resize(dim, k);
  model.explained_variance.resize(k);
  read_block(in, model.mean.data(), static_cast<std::size_t>(dim), path);
  read_block(in, model.components.data(), static_cast<std::size_t>(dim * k),
             path);
  read_block(in, model.explained_variance.data(), static_cast<std::size_t>(k),
             path);
  expect_eof(in, path);
  return model;
}

void save_linreg(const std::string& path, const LinRegModel& model) {
  auto out = open_out(path, true);
  out << "linreg v1 " << model.a.cols() << ' ' << model.a.rows() << '\n';
  write_block(out, model.a.data(), static_cast<std::size_t>(model.a.size()));
  write_block(out, model.b.data(), static_cast<std::size_t>(model.b.size()));
  if (!out) throw FormatError("write failed: " + path);
}

LinRegModel load_linreg(const std::string& path) {
  auto in = open_in(path, true);
  std::string header;
  if (!std::getline(in, header)) throw FormatError("missing header in " + path);
  const auto tok = tokens(header);
  if (tok.size() != 4 || tok[0] != "linreg" || tok[1] != "v1")
    throw FormatError("not a linreg v1 file: " + path);
  const long long in_dim = to_int(tok[2], "in");
  const long long out_dim = to_int(tok[3], "out");
  if (in_dim < 1 || out_dim < 1)
    throw FormatError("bad linreg dimensions in " + path);
  LinRegModel model;
  model.a.resize(out_dim, in_dim);
  model.b.resize(out_dim);
  read_block(in, model.a.data(), static_cast<std::size_t>(model.a.size()),
             path);
  read_block(in, model.b.data(), static_cast<std::size_t>(model.b.size()),
             path);
  expect_eof(in, path);
  return model;
}

void save_loss_curves_csv(const std::string& path,
                          const std::vector<EpochStats>& curves) {
  auto out = open_out(path, false);
  out << "epoch,total,l_ae,l_sur,l_sur_unchained\n";
  for (const auto& st : curves)
    out << st.epoch << ',' << fmt(st.total) << ',' << fmt(st.l_ae) << ','
        << fmt(st.l_sur) << ',' << fmt(st.l_sur_unchained) << '\n';
  if (!out) throw FormatError("write failed: " + path);
}

void save_rmse_csv(const std::string& path, const std::vector<double>& series) {
  auto out = open_out(path, false);
  out << "step,rmse\n";
  for (std::size_t i = 0; i < series.size(); ++i)
    out << i + 1 << ',' << fmt(series[i]) << '\n';
  if (!out) throw FormatError("write failed: " + path);
}

void save_grid_csv(const std::string& path, const GridReport& report) {
  auto out = open_out(path, false);
  out << "inflation,sigma_q,mean_rmse,wall_seconds,aborted\n";
  for (const auto& cell : report.cells)
    out << fmt(cell.inflation) << ',' << fmt(cell.sigma_q) << ','
        << fmt(cell.mean_rmse) << ',' << fmt(cell.wall_seconds) << ','
        << (cell.aborted ? 1 : 0) << '\n';
  if (!out) throw FormatError("write failed: " + path);
}

namespace {

json config_json(const DaConfig& cfg) {
  return json{{"members", cfg.members},
              {"inflation", cfg.inflation},
              {"sigma_r", cfg.sigma_r},
              {"sigma_b", cfg.sigma_b},
              {"sigma_q", cfg.sigma_q},
              {"sigma_m", cfg.sigma_m},
              {"n_cycles", cfg.n_cycles},
              {"analysis_space",
               cfg.analysis_space == AnalysisSpace::latent ? "latent" : "full"},
              {"seed", cfg.seed}};
}

}  // namespace

void save_run_report_json(const std::string& path, const RunReport& report) {
  json j;
  j["method"] = report.method;
  j["config"] = config_json(report.config);
  j["mean_rmse"] = report.mean_rmse;
  j["wall_seconds"] = report.wall_seconds;
  j["rmse"] = report.rmse_series;
  j["aborted"] = report.aborted;
  if (report.aborted) {
    j["abort_step"] = report.abort_step;
    j["abort_reason"] = report.abort_reason;
  }
  j["warnings"] = report.warnings;
  auto out = open_out(path, false);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed: " + path);
}

void save_grid_report_json(const std::string& path, const GridReport& report,
                           const DaConfig& base) {
  json cells = json::array();
  for (const auto& cell : report.cells)
    cells.push_back(json{{"inflation", cell.inflation},
                         {"sigma_q", cell.sigma_q},
                         {"mean_rmse", cell.mean_rmse},
                         {"wall_seconds", cell.wall_seconds},
                         {"aborted", cell.aborted}});
  json j;
  j["method"] = report.method;
  j["config"] = config_json(base);
  j["cells"] = cells;
  if (report.best_index >= 0) {
    const auto& best = report.cells[static_cast<std::size_t>(report.best_index)];
    j["best"] = json{{"inflation", best.inflation},
                     {"sigma_q", best.sigma_q},
                     {"mean_rmse", best.mean_rmse}};
  }
  auto out = open_out(path, false);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed: " + path);
}

void save_timing_report_json(const std::string& path, const std::string& method,
                             const TimingReport& report, const DaConfig& cfg) {
  json j;
  j["method"] = method;
  j["config"] = config_json(cfg);
  j["repeats"] = report.repeats;
  j["mean_seconds"] = report.mean_seconds;
  j["std_seconds"] = report.std_seconds;
  j["mean_rmse"] = report.mean_rmse;
  j["seconds"] = report.seconds;
  auto out = open_out(path, false);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed: " + path);
}

std::map<std::string, std::string> load_kv_config(const std::string& path) {
  auto in = open_in(path, false);
  std::map<std::string, std::string> kv;
  std::string line;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw FormatError(path + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

void apply_kv(const std::map<std::string, std::string>& kv, DaConfig& cfg) {
  for (const auto& [key, value] : kv) {
    if (key == "members")
      cfg.members = static_cast<int>(to_int(value, key));
    else if (key == "inflation")
      cfg.inflation = to_double(value, key);
    else if (key == "sigma_r")
      cfg.sigma_r = to_double(value, key);
    else if (key == "sigma_b")
      cfg.sigma_b = to_double(value, key);
    else if (key == "sigma_q")
      cfg.sigma_q = to_double(value, key);
    else if (key == "sigma_m")
      cfg.sigma_m = to_double(value, key);
    else if (key == "n_cycles")
      cfg.n_cycles = static_cast<int>(to_int(value, key));
    else if (key == "seed")
      cfg.seed = to_u64(value, key);
    else if (key == "analysis_space") {
      if (value == "full")
        cfg.analysis_space = AnalysisSpace::full;
      else if (value == "latent")
        cfg.analysis_space = AnalysisSpace::latent;
      else
        throw ConfigError("analysis_space must be 'full' or 'latent'");
    } else if (key == "inflations" || key == "sigma_qs" || key == "method") {
      // grid/method keys live in the same files; handled elsewhere
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

GridSpec parse_grid_spec(const std::map<std::string, std::string>& kv) {
  auto parse_list = [](const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
      const auto a = item.find_first_not_of(" \t");
      const auto b = item.find_last_not_of(" \t");
      if (a == std::string::npos)
        throw FormatError("empty entry in " + what);
      out.push_back(to_double(item.substr(a, b - a + 1), what));
    }
    if (out.empty()) throw FormatError(what + " must list at least one value");
    return out;
  };
  GridSpec grid;
  const auto inf = kv.find("inflations");
  const auto sq = kv.find("sigma_qs");
  if (inf == kv.end() || sq == kv.end())
    throw ConfigError("grid config needs 'inflations' and 'sigma_qs'");
  grid.inflations = parse_list(inf->second, "inflations");
  grid.sigma_qs = parse_list(sq->second, "sigma_qs");
  return grid;
}

}  // namespace latentda
