#pragma once

#include <Eigen/Core>

#include "latentda/dynamics.hpp"
#include "latentda/neural.hpp"

namespace latentda {

struct PcaModel {
  Eigen::VectorXd mean;                // dim
  Eigen::MatrixXd components;          // dim x n_components, orthonormal
  Eigen::VectorXd explained_variance;  // descending
};

// Principal components of row-sample data (samples x dim), via the sample
// covariance eigendecomposition. Component signs are fixed so the entry of
// largest magnitude is positive.
PcaModel pca_fit(const Eigen::MatrixXd& samples, int n_components);

// States in columns, like everywhere else.
Eigen::MatrixXd pca_encode(const PcaModel& model, const Eigen::MatrixXd& x);
Eigen::MatrixXd pca_decode(const PcaModel& model, const Eigen::MatrixXd& z);

// Flatten a dataset into the samples x dim layout pca_fit expects,
// optionally restricted to a subset of simulations.
Eigen::MatrixXd dataset_samples(const TrajectoryDataset& data,
                                const std::vector<int>* sims = nullptr);

struct LinRegModel {
  Eigen::MatrixXd a;  // out x in
  Eigen::VectorXd b;  // out
};

// Least-squares fit of targets ~ a * inputs + b (samples in columns), by
// normal equations with a column-pivoted QR fallback for rank-deficient
// designs.
LinRegModel linreg_fit(const Eigen::MatrixXd& inputs,
                       const Eigen::MatrixXd& targets);

Eigen::MatrixXd linreg_apply(const LinRegModel& model, const Eigen::MatrixXd& z);

// ReZero surrogate in PCA space, trained with the chained objective through
// the frozen PCA charts:  mean_c MSE(decode(S^c(encode(x_k))), x_{k+c}).
// The result's model keeps the net in params.surrogate; curves report the
// chained loss as l_sur and the fixed PCA reconstruction error as l_ae.
TrainResult train_pca_surrogate(const TrajectoryDataset& data,
                                const PcaModel& pca, const TrainConfig& cfg,
                                const Checkpoint* resume = nullptr);

}  // namespace latentda
