#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "latentda/reduction.hpp"

using namespace latentda;

namespace {

// Row-sample data confined to an exact 3-dim affine subspace of R^8.
struct SubspaceData {
  Eigen::MatrixXd samples;  // n x 8
  Eigen::MatrixXd basis;    // 8 x 3 orthonormal
  Eigen::VectorXd mean;
};

SubspaceData make_subspace_data(int n, CounterRng& rng) {
  SubspaceData d;
  const Eigen::MatrixXd raw = rng.normal_matrix(8, 3);
  d.basis = Eigen::HouseholderQR<Eigen::MatrixXd>(raw)
                .householderQ() *
            Eigen::MatrixXd::Identity(8, 3);
  d.mean = rng.normal_vector(8);
  Eigen::MatrixXd coeffs = rng.normal_matrix(3, n);
  coeffs.row(0) *= 4.0;
  coeffs.row(1) *= 2.0;
  d.samples = ((d.basis * coeffs).colwise() + d.mean).transpose();
  return d;
}

TrajectoryDataset tiny_dataset(int n_sim = 5, int n_steps = 40) {
  LorenzConfig cfg;
  cfg.dim = 6;
  cfg.seed = 21;
  cfg.burn = 30;
  return generate_trajectories(cfg, n_sim, n_steps);
}

}  // namespace

TEST_CASE("pca recovers an exact low-rank subspace") {
  CounterRng rng(31, 0);
  const SubspaceData d = make_subspace_data(500, rng);
  const PcaModel model = pca_fit(d.samples, 3);

  // Kept components span the generating basis.
  const Eigen::MatrixXd proj =
      d.basis * (d.basis.transpose() * model.components);
  CHECK((proj - model.components).cwiseAbs().maxCoeff() < 1e-9);

  // Reconstruction in the subspace is exact.
  const Eigen::MatrixXd x = d.samples.topRows(40).transpose();
  CHECK((pca_decode(model, pca_encode(model, x)) - x).cwiseAbs().maxCoeff() <
        1e-9);

  CHECK(model.explained_variance(0) >= model.explained_variance(1));
  CHECK(model.explained_variance(1) >= model.explained_variance(2));
  CHECK(model.explained_variance(2) > 0.5);  // unit-variance direction
}

TEST_CASE("pca charts are consistent linear maps") {
  CounterRng rng(32, 0);
  const Eigen::MatrixXd samples = rng.normal_matrix(300, 6);
  const PcaModel model = pca_fit(samples, 4);

  CHECK((model.components.transpose() * model.components -
         Eigen::MatrixXd::Identity(4, 4))
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  // The mean encodes to zero, and encode inverts decode on the code space.
  CHECK(pca_encode(model, model.mean).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd z = rng.normal_matrix(4, 9);
  CHECK((pca_encode(model, pca_decode(model, z)) - z).cwiseAbs().maxCoeff() <
        1e-12);

  // Sign gauge: the largest-magnitude entry of every component is positive.
  for (int k = 0; k < 4; ++k) {
    Eigen::Index imax;
    model.components.col(k).cwiseAbs().maxCoeff(&imax);
    CHECK(model.components(imax, k) > 0.0);
  }

  const PcaModel again = pca_fit(samples, 4);
  CHECK(again.components == model.components);
  CHECK(again.explained_variance == model.explained_variance);
}

TEST_CASE("discarded variance accounts for the reconstruction error") {
  CounterRng rng(33, 0);
  const Eigen::Index n = 400;
  Eigen::MatrixXd samples = rng.normal_matrix(n, 5);
  samples.col(0) *= 3.0;
  samples.col(1) *= 2.0;
  samples.col(3) *= 0.5;

  const PcaModel full = pca_fit(samples, 5);
  const Eigen::MatrixXd centered =
      samples.rowwise() - full.mean.transpose();
  const double total_var =
      (centered.transpose() * centered).trace() / static_cast<double>(n - 1);
  CHECK(full.explained_variance.sum() ==
        doctest::Approx(total_var).epsilon(1e-12));

  for (int k = 1; k <= 4; ++k) {
    const PcaModel model = pca_fit(samples, k);
    const Eigen::MatrixXd x = samples.transpose();
    const double err2 =
        (pca_decode(model, pca_encode(model, x)) - x).squaredNorm() /
        static_cast<double>(n);
    const double discarded =
        full.explained_variance.tail(5 - k).sum() *
        static_cast<double>(n - 1) / static_cast<double>(n);
    CHECK(err2 == doctest::Approx(discarded).epsilon(1e-9));
  }
}

TEST_CASE("reconstruction error shrinks as components are added") {
  CounterRng rng(34, 0);
  Eigen::MatrixXd samples = rng.normal_matrix(300, 6);
  for (int c = 0; c < 6; ++c) samples.col(c) *= (6.0 - c);
  const Eigen::MatrixXd x = samples.transpose();
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 6; ++k) {
    const PcaModel model = pca_fit(samples, k);
    const double err =
        (pca_decode(model, pca_encode(model, x)) - x).squaredNorm();
    CHECK(err < prev);
    prev = err;
  }
  CHECK(prev < 1e-18);  // all six components reproduce the data exactly
}

TEST_CASE("isotropic data yields a flat spectrum") {
  CounterRng rng(35, 0);
  const PcaModel model = pca_fit(rng.normal_matrix(50000, 2), 2);
  CHECK(model.explained_variance(0) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(model.explained_variance(1) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("pca validates its inputs") {
  CounterRng rng(36, 0);
  const Eigen::MatrixXd samples = rng.normal_matrix(10, 4);
  CHECK_THROWS_AS(pca_fit(samples.topRows(1), 2), ConfigError);
  CHECK_THROWS_AS(pca_fit(samples, 0), ConfigError);
  CHECK_THROWS_AS(pca_fit(samples, 5), ConfigError);
  const PcaModel model = pca_fit(samples, 2);
  CHECK_THROWS_AS(pca_encode(model, rng.normal_matrix(3, 2)), ConfigError);
  CHECK_THROWS_AS(pca_decode(model, rng.normal_matrix(3, 2)), ConfigError);
}

TEST_CASE("dataset flattening preserves order and subsets") {
  const TrajectoryDataset data = tiny_dataset(3, 4);
  const Eigen::MatrixXd all = dataset_samples(data);
  REQUIRE(all.rows() == 12);
  REQUIRE(all.cols() == 6);
  for (int t = 0; t < 4; ++t)
    for (int s = 0; s < 3; ++s)
      CHECK(all.row(t * 3 + s).transpose() == data.states[t].col(s));

  const std::vector<int> subset = {2, 0};
  const Eigen::MatrixXd part = dataset_samples(data, &subset);
  REQUIRE(part.rows() == 8);
  for (int t = 0; t < 4; ++t) {
    CHECK(part.row(t * 2 + 0).transpose() == data.states[t].col(2));
    CHECK(part.row(t * 2 + 1).transpose() == data.states[t].col(0));
  }
}

TEST_CASE("linear regression recovers an exact affine map") {
  CounterRng rng(37, 0);
  const Eigen::MatrixXd a_true = rng.normal_matrix(4, 3);
  const Eigen::VectorXd b_true = rng.normal_vector(4);
  const Eigen::MatrixXd inputs = rng.normal_matrix(3, 50);
  const Eigen::MatrixXd targets = (a_true * inputs).colwise() + b_true;

  const LinRegModel model = linreg_fit(inputs, targets);
  CHECK((model.a - a_true).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((model.b - b_true).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((linreg_apply(model, inputs) - targets).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("linear regression matches the least-squares oracle under noise") {
  CounterRng rng(38, 0);
  const Eigen::MatrixXd inputs = rng.normal_matrix(3, 80);
  const Eigen::MatrixXd targets =
      rng.normal_matrix(2, 3) * inputs + 0.1 * rng.normal_matrix(2, 80);

  const LinRegModel model = linreg_fit(inputs, targets);

  Eigen::MatrixXd design(4, 80);
  design.topRows(3) = inputs;
  design.row(3).setOnes();
  const Eigen::MatrixXd coef =
      design.transpose().colPivHouseholderQr().solve(targets.transpose());
  CHECK((model.a - coef.topRows(3).transpose()).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((model.b - coef.row(3).transpose()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("rank-deficient designs still interpolate the seen samples") {
  Eigen::MatrixXd inputs(2, 6);
  inputs.row(0).setConstant(1.5);
  inputs.row(1).setConstant(-0.5);
  Eigen::MatrixXd targets(2, 6);
  targets.row(0).setConstant(3.0);
  targets.row(1).setConstant(7.0);

  const LinRegModel model = linreg_fit(inputs, targets);
  const Eigen::MatrixXd pred = linreg_apply(model, inputs);
  CHECK((pred - targets).cwiseAbs().maxCoeff() < 1e-8);

  CHECK_THROWS_AS(linreg_fit(inputs, targets.leftCols(3)), ConfigError);
  CHECK_THROWS_AS(linreg_apply(model, Eigen::MatrixXd::Zero(3, 2)),
                  ConfigError);
}

TEST_CASE("pca surrogate training is deterministic and improves") {
  const TrajectoryDataset data = tiny_dataset();
  const PcaModel pca = pca_fit(dataset_samples(data), 3);

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.chain_len = 2;
  cfg.test_fraction = 0.2;
  cfg.seed = 4;

  const TrainResult a = train_pca_surrogate(data, pca, cfg);
  const TrainResult b = train_pca_surrogate(data, pca, cfg);
  REQUIRE(a.curves.size() == 3);
  CHECK(!a.aborted);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.curves[e].total == b.curves[e].total);
    CHECK(a.curves[e].l_sur == b.curves[e].l_sur);
    // l_ae carries the fixed PCA reconstruction error of the eval split.
    CHECK(a.curves[e].l_ae == a.curves[0].l_ae);
    CHECK(a.curves[e].l_ae > 0.0);
    CHECK(a.curves[e].total == a.curves[e].l_sur);
  }
  CHECK(a.curves.back().total <= a.curves.front().total);
  CHECK(a.best.params.surrogate.in_dim() == 3);
  CHECK(a.best.params.encoder.layers.empty());
  CHECK(a.best.epoch >= 0);

  PcaModel wrong = pca;
  wrong.mean = Eigen::VectorXd::Zero(9);
  CHECK_THROWS_AS(train_pca_surrogate(data, wrong, cfg), ConfigError);
}
