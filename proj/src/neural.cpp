#include "latentda/neural.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <thread>
#include <utility>

#include "latentda/io.hpp"

namespace latentda {

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh_act: return "tanh";
    case Activation::identity: return "identity";
  }
  throw ConfigError("activation_name: unknown activation");
}

Activation parse_activation(const std::string& name) {
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "tanh") return Activation::tanh_act;
  if (name == "identity") return Activation::identity;
  throw FormatError("parse_activation: unknown activation '" + name + "'");
}

namespace {

void apply_activation(Activation act, Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::leaky_relu:
      z = z.unaryExpr([](double v) { return v > 0.0 ? v : leaky_slope * v; });
      break;
    case Activation::tanh_act:
      z = z.array().tanh().matrix();
      break;
    case Activation::identity:
      break;
  }
}

// grad <- grad .* act'(preact)
void chain_activation(Activation act, const Eigen::MatrixXd& preact,
                      Eigen::MatrixXd& grad) {
  switch (act) {
    case Activation::leaky_relu:
      grad = grad.cwiseProduct(preact.unaryExpr(
          [](double v) { return v > 0.0 ? 1.0 : leaky_slope; }));
      break;
    case Activation::tanh_act:
      grad = grad.cwiseProduct(
          (1.0 - preact.array().tanh().square()).matrix());
      break;
    case Activation::identity:
      break;
  }
}

void fill_uniform(Eigen::MatrixXd& w, double bound, CounterRng& rng) {
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
}

DenseLayer init_layer(int in, int out, Activation act, CounterRng& rng) {
  if (in < 1 || out < 1) throw ConfigError("init_layer: widths must be >= 1");
  DenseLayer layer;
  layer.act = act;
  layer.weight.resize(out, in);
  // Kaiming fan-in bound for the LeakyReLU layers, Xavier otherwise.
  double bound;
  if (act == Activation::leaky_relu) {
    const double gain = std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope));
    bound = gain * std::sqrt(3.0 / in);
  } else {
    bound = std::sqrt(6.0 / (in + out));
  }
  fill_uniform(layer.weight, bound, rng);
  layer.bias = Eigen::VectorXd::Zero(out);
  return layer;
}

Mlp make_stack(const std::vector<int>& widths, Activation last,
               CounterRng& rng) {
  if (widths.size() < 2)
    throw ConfigError("make_stack: need at least input and output widths");
  Mlp net;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool is_last = (i + 2 == widths.size());
    net.layers.push_back(init_layer(widths[i], widths[i + 1],
                                    is_last ? last : Activation::leaky_relu,
                                    rng));
  }
  return net;
}

double mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).squaredNorm() /
         static_cast<double>(a.rows() * a.cols());
}

}  // namespace

Mlp make_encoder(const std::vector<int>& widths, CounterRng& rng) {
  return make_stack(widths, Activation::tanh_act, rng);
}

Mlp make_decoder(const std::vector<int>& widths, CounterRng& rng) {
  return make_stack(widths, Activation::identity, rng);
}

Mlp make_surrogate(int dim, int blocks, CounterRng& rng) {
  if (blocks < 1) throw ConfigError("make_surrogate: need at least one block");
  Mlp net;
  net.rezero = true;
  for (int i = 0; i < blocks; ++i) {
    const bool is_last = (i + 1 == blocks);
    net.layers.push_back(init_layer(
        dim, dim, is_last ? Activation::identity : Activation::leaky_relu,
        rng));
  }
  // alpha = 0 makes the stack exactly the identity at initialization.
  net.alphas = Eigen::VectorXd::Zero(blocks);
  return net;
}

ModelParams make_default_model(int full_dim, int latent_dim, CounterRng& rng) {
  if (full_dim < 1 || latent_dim < 1 || latent_dim > full_dim)
    throw ConfigError("make_default_model: bad dimensions");
  // Reference sizes 400 -> 300 -> 200 -> 150 -> 40, scaled proportionally
  // for other dimensions.
  auto hidden = [&](double f) {
    return std::max(latent_dim,
                    static_cast<int>(std::lround(f * full_dim)));
  };
  std::vector<int> enc = {full_dim, hidden(0.75), hidden(0.5), hidden(0.375),
                          latent_dim};
  std::vector<int> dec(enc.rbegin(), enc.rend());
  ModelParams params;
  params.encoder = make_encoder(enc, rng);
  params.decoder = make_decoder(dec, rng);
  params.surrogate = make_surrogate(latent_dim, 5, rng);
  return params;
}

Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x,
                            MlpTape* tape) {
  if (net.layers.empty()) return x;
  if (x.rows() != net.in_dim())
    throw ConfigError("mlp_forward: input dimension mismatch");
  if (net.rezero &&
      static_cast<int>(net.layers.size()) != net.alphas.size())
    throw ConfigError("mlp_forward: alpha count does not match layers");
  if (tape) {
    tape->inputs.clear();
    tape->preacts.clear();
    tape->inputs.reserve(net.layers.size());
    tape->preacts.reserve(net.layers.size());
  }
  Eigen::MatrixXd cur = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const DenseLayer& layer = net.layers[i];
    if (tape) tape->inputs.push_back(cur);
    Eigen::MatrixXd z = layer.weight * cur;
    z.colwise() += layer.bias;
    if (tape) tape->preacts.push_back(z);
    apply_activation(layer.act, z);
    if (net.rezero)
      cur += net.alphas(static_cast<Eigen::Index>(i)) * z;
    else
      cur = std::move(z);
  }
  return cur;
}

MlpGrads zero_grads(const Mlp& net) {
  MlpGrads g;
  g.d_weight.reserve(net.layers.size());
  g.d_bias.reserve(net.layers.size());
  for (const auto& layer : net.layers) {
    g.d_weight.emplace_back(
        Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
    g.d_bias.emplace_back(Eigen::VectorXd::Zero(layer.bias.size()));
  }
  g.d_alpha = Eigen::VectorXd::Zero(net.alphas.size());
  return g;
}

ModelGrads zero_grads(const ModelParams& params) {
  return {zero_grads(params.encoder), zero_grads(params.decoder),
          zero_grads(params.surrogate)};
}

Eigen::MatrixXd mlp_backward(const Mlp& net, const MlpTape& tape,
                             const Eigen::MatrixXd& grad_out,
                             MlpGrads& grads) {
  if (net.layers.empty()) return grad_out;
  if (tape.inputs.size() != net.layers.size() ||
      tape.preacts.size() != net.layers.size())
    throw ConfigError("mlp_backward: tape does not match network");
  Eigen::MatrixXd grad = grad_out;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    const DenseLayer& layer = net.layers[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd& pre = tape.preacts[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd& in = tape.inputs[static_cast<std::size_t>(i)];
    if (net.rezero) {
      // y = x + alpha * act(z)
      Eigen::MatrixXd post = pre;
      apply_activation(layer.act, post);
      grads.d_alpha(i) += grad.cwiseProduct(post).sum();
      Eigen::MatrixXd dz = net.alphas(i) * grad;
      chain_activation(layer.act, pre, dz);
      grads.d_weight[static_cast<std::size_t>(i)].noalias() +=
          dz * in.transpose();
      grads.d_bias[static_cast<std::size_t>(i)] += dz.rowwise().sum();
      grad.noalias() += layer.weight.transpose() * dz;
    } else {
      Eigen::MatrixXd dz = std::move(grad);
      chain_activation(layer.act, pre, dz);
      grads.d_weight[static_cast<std::size_t>(i)].noalias() +=
          dz * in.transpose();
      grads.d_bias[static_cast<std::size_t>(i)] += dz.rowwise().sum();
      grad = layer.weight.transpose() * dz;
    }
  }
  return grad;
}

namespace {

// Loss on one window, normalized as if the batch had norm_cols columns, so
// column shards of a batch sum exactly to the whole-batch result.
LossTerms combined_loss_normed(const ModelParams& params,
                               const std::vector<Eigen::MatrixXd>& window,
                               double rho, ModelGrads* grads,
                               Eigen::Index norm_cols) {
  if (window.size() < 2)
    throw ConfigError("combined_loss: window must hold x_k and x_{k+1} at least");
  const int c_len = static_cast<int>(window.size()) - 1;
  const Eigen::Index n = window[0].rows();
  const Eigen::Index cols = window[0].cols();
  for (const auto& w : window)
    if (w.rows() != n || w.cols() != cols)
      throw ConfigError("combined_loss: window states must share shape");
  if (cols < 1) throw ConfigError("combined_loss: empty batch");
  if (rho < 0.0) throw ConfigError("combined_loss: rho must be >= 0");

  const double denom =
      static_cast<double>(n) * static_cast<double>(norm_cols) * c_len;

  LossTerms terms;
  std::vector<MlpTape> ae_enc(c_len), ae_dec(c_len);
  std::vector<Eigen::MatrixXd> ae_err(c_len);
  for (int c = 1; c <= c_len; ++c) {
    const Eigen::MatrixXd z = mlp_forward(
        params.encoder, window[static_cast<std::size_t>(c)],
        grads ? &ae_enc[c - 1] : nullptr);
    const Eigen::MatrixXd xh =
        mlp_forward(params.decoder, z, grads ? &ae_dec[c - 1] : nullptr);
    ae_err[c - 1] = xh - window[static_cast<std::size_t>(c)];
    terms.l_ae += ae_err[c - 1].squaredNorm() / denom;
  }

  MlpTape enc0;
  std::vector<MlpTape> sur_tape(c_len), dec_tape(c_len);
  std::vector<Eigen::MatrixXd> sur_err(c_len);
  const bool sur_grads = grads && rho > 0.0;
  Eigen::MatrixXd z =
      mlp_forward(params.encoder, window[0], sur_grads ? &enc0 : nullptr);
  for (int c = 1; c <= c_len; ++c) {
    z = mlp_forward(params.surrogate, z,
                    sur_grads ? &sur_tape[c - 1] : nullptr);
    const Eigen::MatrixXd xh =
        mlp_forward(params.decoder, z, sur_grads ? &dec_tape[c - 1] : nullptr);
    sur_err[c - 1] = xh - window[static_cast<std::size_t>(c)];
    terms.l_sur += sur_err[c - 1].squaredNorm() / denom;
  }
  terms.total = terms.l_ae + rho * terms.l_sur;

  if (grads) {
    const double ae_scale = 2.0 / denom;
    for (int c = c_len; c >= 1; --c) {
      const Eigen::MatrixXd dxh = ae_scale * ae_err[c - 1];
      const Eigen::MatrixXd dz =
          mlp_backward(params.decoder, ae_dec[c - 1], dxh, grads->decoder);
      mlp_backward(params.encoder, ae_enc[c - 1], dz, grads->encoder);
    }
    if (sur_grads) {
      const double sur_scale = rho * 2.0 / denom;
      Eigen::MatrixXd acc;
      for (int c = c_len; c >= 1; --c) {
        const Eigen::MatrixXd dxh = sur_scale * sur_err[c - 1];
        Eigen::MatrixXd dz =
            mlp_backward(params.decoder, dec_tape[c - 1], dxh, grads->decoder);
        if (acc.size() == 0)
          acc = std::move(dz);
        else
          acc += dz;
        acc = mlp_backward(params.surrogate, sur_tape[c - 1], acc,
                           grads->surrogate);
      }
      mlp_backward(params.encoder, enc0, acc, grads->encoder);
    }
  }
  return terms;
}

void add_grads(MlpGrads& into, const MlpGrads& from) {
  for (std::size_t i = 0; i < into.d_weight.size(); ++i) {
    into.d_weight[i] += from.d_weight[i];
    into.d_bias[i] += from.d_bias[i];
  }
  if (into.d_alpha.size() > 0) into.d_alpha += from.d_alpha;
}

void add_grads(ModelGrads& into, const ModelGrads& from) {
  add_grads(into.encoder, from.encoder);
  add_grads(into.decoder, from.decoder);
  add_grads(into.surrogate, from.surrogate);
}

}  // namespace

LossTerms combined_loss(const ModelParams& params,
                        const std::vector<Eigen::MatrixXd>& window, double rho,
                        ModelGrads* grads) {
  return combined_loss_normed(params, window, rho, grads, window[0].cols());
}

double unchained_surrogate_mse(const ModelParams& params,
                               const Eigen::MatrixXd& x0,
                               const Eigen::MatrixXd& x1) {
  const Eigen::MatrixXd z = mlp_forward(params.encoder, x0);
  const Eigen::MatrixXd xh =
      mlp_forward(params.decoder, mlp_forward(params.surrogate, z));
  return mse(xh, x1);
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState state;
  state.m = zero_grads(params);
  state.v = zero_grads(params);
  state.t = 0;
  return state;
}

namespace {

template <typename T>
void adam_update_tensor(T& param, const T& grad, T& m, T& v,
                        const AdamConfig& cfg, double bc1, double bc2,
                        int epoch, int batch) {
  if (!grad.allFinite())
    throw TrainingDivergence("adam_step: non-finite gradient", epoch, batch);
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  param.array() -=
      cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

void adam_update_mlp(Mlp& net, const MlpGrads& g, MlpGrads& m, MlpGrads& v,
                     const AdamConfig& cfg, double bc1, double bc2, int epoch,
                     int batch) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    adam_update_tensor(net.layers[i].weight, g.d_weight[i], m.d_weight[i],
                       v.d_weight[i], cfg, bc1, bc2, epoch, batch);
    adam_update_tensor(net.layers[i].bias, g.d_bias[i], m.d_bias[i],
                       v.d_bias[i], cfg, bc1, bc2, epoch, batch);
  }
  if (net.rezero)
    adam_update_tensor(net.alphas, g.d_alpha, m.d_alpha, v.d_alpha, cfg, bc1,
                       bc2, epoch, batch);
}

}  // namespace

void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
               const AdamConfig& cfg, int epoch, int batch) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  adam_update_mlp(params.encoder, grads.encoder, state.m.encoder,
                  state.v.encoder, cfg, bc1, bc2, epoch, batch);
  adam_update_mlp(params.decoder, grads.decoder, state.m.decoder,
                  state.v.decoder, cfg, bc1, bc2, epoch, batch);
  adam_update_mlp(params.surrogate, grads.surrogate, state.m.surrogate,
                  state.v.surrogate, cfg, bc1, bc2, epoch, batch);
}

std::vector<int> test_simulations(int n_sim, double test_fraction,
                                  std::uint64_t seed) {
  if (n_sim < 1) throw ConfigError("test_simulations: empty dataset");
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw ConfigError("test_simulations: fraction must be in [0, 1)");
  std::vector<int> order(static_cast<std::size_t>(n_sim));
  for (int i = 0; i < n_sim; ++i) order[static_cast<std::size_t>(i)] = i;
  CounterRng rng(seed, 0);
  for (int i = n_sim - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_u64() %
                                   static_cast<std::uint64_t>(i + 1));
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(j)]);
  }
  int n_test = 0;
  // A single simulation always stays in the training split.
  if (test_fraction > 0.0 && n_sim > 1) {
    n_test = static_cast<int>(std::llround(test_fraction * n_sim));
    n_test = std::clamp(n_test, 1, n_sim - 1);
  }
  std::vector<int> test(order.begin(), order.begin() + n_test);
  std::sort(test.begin(), test.end());
  return test;
}

namespace {

struct WindowBatch {
  std::vector<Eigen::MatrixXd> states;  // chain_len + 1 matrices, n x batch
};

WindowBatch gather_windows(const TrajectoryDataset& data,
                           const std::vector<std::pair<int, int>>& windows,
                           std::size_t lo, std::size_t hi, int c_len) {
  WindowBatch batch;
  const int n = data.dim();
  const Eigen::Index cols = static_cast<Eigen::Index>(hi - lo);
  batch.states.assign(static_cast<std::size_t>(c_len) + 1,
                      Eigen::MatrixXd(n, cols));
  for (std::size_t w = lo; w < hi; ++w) {
    const auto [sim, start] = windows[w];
    for (int c = 0; c <= c_len; ++c)
      batch.states[static_cast<std::size_t>(c)].col(
          static_cast<Eigen::Index>(w - lo)) =
          data.states[static_cast<std::size_t>(start + c)].col(sim);
  }
  return batch;
}

// Batch gradient, optionally computed in column shards on worker threads;
// shard contributions are summed in a fixed order so the result matches the
// single-shard gradient to rounding.
LossTerms sharded_loss(const ModelParams& params, const WindowBatch& batch,
                       double rho, ModelGrads* grads, int n_shards) {
  const Eigen::Index cols = batch.states[0].cols();
  if (n_shards <= 1 || cols < n_shards)
    return combined_loss_normed(params, batch.states, rho, grads, cols);

  std::vector<ModelGrads> shard_grads;
  std::vector<LossTerms> shard_terms(static_cast<std::size_t>(n_shards));
  for (int s = 0; s < n_shards; ++s) shard_grads.push_back(zero_grads(params));

  std::vector<std::thread> workers;
  const Eigen::Index chunk = (cols + n_shards - 1) / n_shards;
  for (int s = 0; s < n_shards; ++s) {
    workers.emplace_back([&, s]() {
      const Eigen::Index lo = s * chunk;
      const Eigen::Index hi = std::min(cols, lo + chunk);
      if (lo >= hi) return;
      std::vector<Eigen::MatrixXd> slice;
      slice.reserve(batch.states.size());
      for (const auto& st : batch.states)
        slice.push_back(st.middleCols(lo, hi - lo));
      shard_terms[static_cast<std::size_t>(s)] = combined_loss_normed(
          params, slice, rho,
          grads ? &shard_grads[static_cast<std::size_t>(s)] : nullptr, cols);
    });
  }
  for (auto& w : workers) w.join();

  LossTerms total;
  for (int s = 0; s < n_shards; ++s) {
    total.total += shard_terms[static_cast<std::size_t>(s)].total;
    total.l_ae += shard_terms[static_cast<std::size_t>(s)].l_ae;
    total.l_sur += shard_terms[static_cast<std::size_t>(s)].l_sur;
    if (grads) add_grads(*grads, shard_grads[static_cast<std::size_t>(s)]);
  }
  return total;
}

EpochStats evaluate_split(const ModelParams& params,
                          const TrajectoryDataset& data,
                          const std::vector<std::pair<int, int>>& windows,
                          double rho, int c_len, int epoch) {
  EpochStats st;
  st.epoch = epoch;
  const std::size_t total = windows.size();
  if (total == 0) return st;
  const std::size_t eval_batch = 256;
  double weight_sum = 0.0;
  for (std::size_t lo = 0; lo < total; lo += eval_batch) {
    const std::size_t hi = std::min(total, lo + eval_batch);
    const WindowBatch batch = gather_windows(data, windows, lo, hi, c_len);
    const LossTerms terms = combined_loss(params, batch.states, rho, nullptr);
    const double w = static_cast<double>(hi - lo);
    st.total += terms.total * w;
    st.l_ae += terms.l_ae * w;
    st.l_sur += terms.l_sur * w;
    st.l_sur_unchained +=
        unchained_surrogate_mse(params, batch.states[0], batch.states[1]) * w;
    weight_sum += w;
  }
  st.total /= weight_sum;
  st.l_ae /= weight_sum;
  st.l_sur /= weight_sum;
  st.l_sur_unchained /= weight_sum;
  return st;
}

}  // namespace

TrainResult train_model(const TrajectoryDataset& data, const TrainConfig& cfg,
                        const Checkpoint* resume) {
  if (data.n_steps() <= cfg.chain_len)
    throw ConfigError("train_model: dataset shorter than the training window");
  if (cfg.chain_len < 1) throw ConfigError("train_model: chain_len must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("train_model: epochs must be >= 1");
  if (cfg.batch_size < 1)
    throw ConfigError("train_model: batch_size must be >= 1");
  if (cfg.rho < 0.0) throw ConfigError("train_model: rho must be >= 0");

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
    throw ConfigError("train_model: no training windows");
  // With no held-out simulations, curves monitor the training split.
  const auto& eval_windows = test_windows.empty() ? train_windows : test_windows;

  TrainResult result;
  Checkpoint cur;
  int first_epoch = 0;
  if (resume) {
    cur = *resume;
    result.best = *resume;
    first_epoch = resume->epoch + 1;
  } else {
    CounterRng init_rng(cfg.seed, 1);
    cur.params = make_default_model(data.dim(), cfg.latent_dim, init_rng);
    cur.opt = make_adam_state(cur.params);
  }

  for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    // Per-epoch shuffle stream, so resumed runs see the same order.
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
      const WindowBatch batch =
          gather_windows(data, order, lo, hi, cfg.chain_len);
      ModelGrads grads = zero_grads(cur.params);
      LossTerms terms;
      try {
        terms = sharded_loss(cur.params, batch, cfg.rho, &grads, cfg.n_shards);
        if (!std::isfinite(terms.total))
          throw TrainingDivergence("train_model: non-finite loss", epoch,
                                   static_cast<int>(b));
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

    EpochStats stats = evaluate_split(cur.params, data, eval_windows, cfg.rho,
                                      cfg.chain_len, epoch);
    result.curves.push_back(stats);
    if (cfg.verbose)
      std::cerr << "epoch " << epoch << ": test total " << stats.total
                << " (ae " << stats.l_ae << ", sur " << stats.l_sur << ")\n";

    if (stats.total < result.best.test_loss) {
      cur.epoch = epoch;
      cur.test_loss = stats.total;
      result.best = cur;
      result.best_losses.push_back(stats.total);
      if (!cfg.checkpoint_path.empty())
        save_checkpoint(cfg.checkpoint_path, result.best);
    }
  }

  if (result.best.epoch < 0 && !result.aborted)
    throw NumericalError("train_model: no epoch produced a finite test loss");
  return result;
}

}  // namespace latentda
