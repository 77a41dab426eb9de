#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "latentda/dynamics.hpp"
#include "latentda/errors.hpp"
#include "latentda/rng.hpp"

namespace latentda {

enum class Activation { leaky_relu, tanh_act, identity };

// Negative-side slope shared by every LeakyReLU in the models.
constexpr double leaky_slope = 0.2;

std::string activation_name(Activation act);
Activation parse_activation(const std::string& name);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation act = Activation::identity;
};

// Plain feed-forward stack, or a ReZero residual stack when rezero is set:
// each block computes x + alpha_i * act(W_i x + b_i), with all alpha_i
// starting at zero so the whole network is the identity at initialization.
struct Mlp {
  std::vector<DenseLayer> layers;
  bool rezero = false;
  Eigen::VectorXd alphas;  // one per layer when rezero, else empty

  int in_dim() const {
    return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
  }
  int out_dim() const {
    return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
  }
};

// widths = {in, hidden..., out}; LeakyReLU on hidden layers, tanh output.
Mlp make_encoder(const std::vector<int>& widths, CounterRng& rng);
// widths = {in, hidden..., out}; LeakyReLU on hidden layers, linear output.
Mlp make_decoder(const std::vector<int>& widths, CounterRng& rng);
// ReZero stack of `blocks` square layers; LeakyReLU blocks, linear last.
Mlp make_surrogate(int dim, int blocks, CounterRng& rng);

// Per-application activation record; one tape per forward pass through a net.
struct MlpTape {
  std::vector<Eigen::MatrixXd> inputs;   // input to each layer
  std::vector<Eigen::MatrixXd> preacts;  // W x + b for each layer
};

// Columns of x are independent samples.
Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x,
                            MlpTape* tape = nullptr);

struct MlpGrads {
  std::vector<Eigen::MatrixXd> d_weight;
  std::vector<Eigen::VectorXd> d_bias;
  Eigen::VectorXd d_alpha;
};

MlpGrads zero_grads(const Mlp& net);

// Backpropagate grad_out through one recorded application; parameter
// gradients accumulate into grads, the return value is the input gradient.
Eigen::MatrixXd mlp_backward(const Mlp& net, const MlpTape& tape,
                             const Eigen::MatrixXd& grad_out, MlpGrads& grads);

struct ModelParams {
  Mlp encoder;
  Mlp decoder;
  Mlp surrogate;
};

struct ModelGrads {
  MlpGrads encoder;
  MlpGrads decoder;
  MlpGrads surrogate;
};

ModelGrads zero_grads(const ModelParams& params);

// Default benchmark model: 400 -> 300/200/150 -> 40 encoder, mirrored
// decoder, five-block ReZero surrogate in the 40-dim code space.
ModelParams make_default_model(int full_dim, int latent_dim, CounterRng& rng);

struct LossTerms {
  double total = 0.0;
  double l_ae = 0.0;
  double l_sur = 0.0;
};

// Combined objective on one window {x_k, ..., x_{k+C}} (each N x batch):
//   l_ae  = mean_c MSE(D(E(x_{k+c})), x_{k+c})          over c = 1..C
//   l_sur = mean_c MSE((D∘S^c∘E)(x_k), x_{k+c})          over c = 1..C
//   total = l_ae + rho * l_sur
// When grads is non-null, parameter gradients of `total` are accumulated
// into it (chained surrogate applications share weights).
LossTerms combined_loss(const ModelParams& params,
                        const std::vector<Eigen::MatrixXd>& window, double rho,
                        ModelGrads* grads = nullptr);

// Single-step surrogate MSE without chaining, for monitoring.
double unchained_surrogate_mse(const ModelParams& params,
                               const Eigen::MatrixXd& x0,
                               const Eigen::MatrixXd& x1);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers mirror the gradient layout; t counts completed steps.
struct AdamState {
  ModelGrads m;
  ModelGrads v;
  long long t = 0;
};

AdamState make_adam_state(const ModelParams& params);

// One bias-corrected Adam update. epoch/batch only label the error context.
void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
               const AdamConfig& cfg, int epoch = -1, int batch = -1);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double rho = 5.0;
  int chain_len = 2;            // C in the combined loss
  int latent_dim = 40;          // code dimension of a freshly built model
  double test_fraction = 0.05;  // held-out simulations
  AdamConfig adam;
  std::uint64_t seed = 0;
  int n_shards = 1;  // batch gradient computed in n_shards column slices
  std::string checkpoint_path;  // when set, best checkpoint mirrored to disk
  bool verbose = false;
};

struct EpochStats {
  int epoch = 0;
  double total = 0.0;
  double l_ae = 0.0;
  double l_sur = 0.0;
  double l_sur_unchained = 0.0;
};

struct Checkpoint {
  ModelParams params;
  AdamState opt;
  int epoch = -1;
  double test_loss = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochStats> curves;       // per-epoch held-out losses
  std::vector<double> best_losses;      // losses at checkpoint saves
  bool aborted = false;
  std::string abort_reason;
  int abort_epoch = -1;
  int abort_batch = -1;
};

// Jointly trains autoencoder and surrogate on a full-space dataset.
// Simulations are split train/test by a seeded shuffle; windows are all
// (simulation, start) pairs, reshuffled every epoch. Single-threaded runs
// are bit-reproducible for a fixed config.
TrainResult train_model(const TrajectoryDataset& data, const TrainConfig& cfg,
                        const Checkpoint* resume = nullptr);

// Held-out simulation indices for a given split seed (shared with PCA fits).
std::vector<int> test_simulations(int n_sim, double test_fraction,
                                  std::uint64_t seed);

}  // namespace latentda
