#include <doctest.h>

#include <cmath>
#include <set>

#include "gvn/anchors.hpp"
#include "gvn/rng.hpp"

using namespace gvn;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                              double hi = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

// Cofactor-expansion determinant, the independent oracle for small matrices.
double det_cofactor(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  if (n == 1) return m(0, 0);
  double det = 0.0;
  double sign = 1.0;
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::MatrixXd minor(n - 1, n - 1);
    for (Eigen::Index i = 1; i < n; ++i) {
      Eigen::Index dst = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == c) continue;
        minor(i - 1, dst++) = m(i, j);
      }
    }
    det += sign * m(0, c) * det_cofactor(minor);
    sign = -sign;
  }
  return det;
}

LabeledDataset tiny_two_region_data(Eigen::Index n, std::uint64_t seed) {
  std::vector<Region> regions(2);
  regions[0].center = Eigen::VectorXd::Zero(2);
  regions[0].radius = 1.0;
  regions[0].conditional = Eigen::VectorXd::Zero(2);
  regions[0].conditional(0) = 1.0;
  regions[0].weight = 0.5;
  regions[1].center = Eigen::VectorXd::Zero(2);
  regions[1].center(0) = 2.5;
  regions[1].radius = 1.0;
  regions[1].conditional = Eigen::VectorXd::Zero(2);
  regions[1].conditional(1) = 1.0;
  regions[1].weight = 0.5;
  return sample_regioned(RegionSpec(std::move(regions), 0.0), n, seed);
}

GraphLayer inner_layer(const Eigen::MatrixXd& anchors, Activation act) {
  return GraphLayer(anchors, Eigen::VectorXd::Zero(anchors.cols()), PairwiseFunction::inner_product(),
                    act);
}

}  // namespace

TEST_CASE("sample_anchors_iid basics") {
  Eigen::MatrixXd single(1, 3);
  single << 1.5, -2.0, 0.25;
  const Eigen::MatrixXd anchors = sample_anchors_iid(single, 4, 99);
  for (Eigen::Index j = 0; j < 4; ++j) CHECK(anchors.col(j) == single.row(0).transpose());

  CHECK_THROWS_AS(sample_anchors_iid(single, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(sample_anchors_iid(Eigen::MatrixXd(0, 3), 2, 0), std::invalid_argument);
}

TEST_CASE("sample_anchors_iid is deterministic and resamples data rows exactly") {
  Rng rng(3);
  const Eigen::MatrixXd data = random_matrix(rng, 1000, 2, 0.0, 1.0);
  const Eigen::MatrixXd a = sample_anchors_iid(data, 100, 42);
  const Eigen::MatrixXd b = sample_anchors_iid(data, 100, 42);
  CHECK(a == b);
  const Eigen::MatrixXd c = sample_anchors_iid(data, 100, 43);
  CHECK(a != c);

  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    bool found = false;
    for (Eigen::Index i = 0; i < data.rows() && !found; ++i) {
      found = a.col(j) == data.row(i).transpose();
    }
    CHECK(found);
  }
}

TEST_CASE("covering_radius on a line of anchors") {
  Eigen::MatrixXd anchors(1, 3);
  anchors << 0.0, 0.5, 1.0;
  Eigen::MatrixXd probes(101, 1);
  for (int i = 0; i <= 100; ++i) probes(i, 0) = i / 100.0;
  CHECK(covering_radius(anchors, probes) == 0.25);

  // Every probe on an anchor.
  CHECK(covering_radius(anchors, anchors.transpose()) == 0.0);

  CHECK_THROWS_AS(covering_radius(anchors, Eigen::MatrixXd(0, 1)), std::invalid_argument);
  CHECK_THROWS_AS(covering_radius(anchors, Eigen::MatrixXd::Zero(2, 2)), std::invalid_argument);
}

TEST_CASE("covering_radius shrinks with more anchors (median over seeds)") {
  Eigen::MatrixXd probes(400, 2);
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 20; ++j) {
      probes(i * 20 + j, 0) = i / 19.0;
      probes(i * 20 + j, 1) = j / 19.0;
    }
  }
  std::vector<double> r_small;
  std::vector<double> r_large;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    r_small.push_back(covering_radius(random_matrix(rng, 2, 10, 0.0, 1.0), probes));
    r_large.push_back(covering_radius(random_matrix(rng, 2, 1000, 0.0, 1.0), probes));
  }
  std::sort(r_small.begin(), r_small.end());
  std::sort(r_large.begin(), r_large.end());
  CHECK(r_large[10] < r_small[10]);
}

TEST_CASE("covering_radius is monotone under anchor enlargement") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd a = random_matrix(rng, 3, 5);
    const Eigen::MatrixXd b = random_matrix(rng, 3, 4);
    Eigen::MatrixXd both(3, 9);
    both << a, b;
    const Eigen::MatrixXd probes = random_matrix(rng, 30, 3);
    CHECK(covering_radius(both, probes) <= covering_radius(a, probes));
  }
}

TEST_CASE("check_general_position") {
  const auto basis = check_general_position(Eigen::MatrixXd::Identity(3, 3));
  CHECK(basis.ok);
  CHECK(basis.gram_det_magnitude == doctest::Approx(1.0));

  Eigen::MatrixXd dup(3, 2);
  dup.col(0) << 1, 2, 3;
  dup.col(1) << 1, 2, 3;
  const auto degenerate = check_general_position(dup);
  CHECK_FALSE(degenerate.ok);
  CHECK(degenerate.gram_det_magnitude <= 1e-12);

  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd pts(5, 5);
    for (Eigen::Index j = 0; j < 5; ++j) {
      for (Eigen::Index i = 0; i < 5; ++i) pts(i, j) = rng.normal();
    }
    const auto result = check_general_position(pts);
    CHECK(result.ok);
    const double oracle = std::abs(det_cofactor(pts.transpose() * pts));
    CHECK(result.gram_det_magnitude == doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("zero learning rate is the identity update") {
  const LabeledDataset data = tiny_two_region_data(60, 12);
  Rng rng(8);
  const Eigen::MatrixXd anchors = sample_anchors_iid(data.inputs, 4, 21);
  const GraphLayer layer = inner_layer(anchors, Activation::ReLU);
  const Eigen::MatrixXd readout = random_matrix(rng, 4, 2, -0.2, 0.2);

  TrainingConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 5;
  const TrainResult result = train_layer_sgd(layer, readout, data, cfg);
  CHECK(result.layer.anchors() == anchors);
  CHECK(result.readout == readout);
  for (double r : result.trace.covering_radii) CHECK(r == result.trace.covering_radii.front());
  CHECK(result.trace.losses.size() == 4);
  CHECK(result.trace.anchor_snapshots.size() == 4);
}

TEST_CASE("one full-batch epoch equals a finite-difference gradient step") {
  const LabeledDataset data = tiny_two_region_data(24, 77);
  const Eigen::MatrixXd anchors = sample_anchors_iid(data.inputs, 3, 9);
  const GraphLayer layer = inner_layer(anchors, Activation::Identity);
  Rng rng(14);
  const Eigen::MatrixXd readout = random_matrix(rng, 3, 2, -0.3, 0.3);

  TrainingConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 1;
  cfg.batch_size = static_cast<int>(data.size());
  cfg.loss = LossKind::MeanSquaredError;
  cfg.seed = 1;
  const TrainResult result = train_layer_sgd(layer, readout, data, cfg);

  const double h = 1e-6;
  // Central differences of the full-data loss, coordinate by coordinate.
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
    for (Eigen::Index j = 0; j < anchors.cols(); ++j) {
      Eigen::MatrixXd plus = anchors;
      Eigen::MatrixXd minus = anchors;
      plus(i, j) += h;
      minus(i, j) -= h;
      const double fd = (training_loss(inner_layer(plus, Activation::Identity), readout, data.inputs,
                                       data.labels, cfg.loss) -
                         training_loss(inner_layer(minus, Activation::Identity), readout, data.inputs,
                                       data.labels, cfg.loss)) /
                        (2.0 * h);
      const double step = (anchors(i, j) - result.layer.anchors()(i, j)) / cfg.learning_rate;
      CHECK(std::abs(step - fd) <=
            1e-5 * std::max({std::abs(step), std::abs(fd), 1e-3}));
    }
  }
}

TEST_CASE("analytic gradients match central differences on random small instances") {
  Rng meta(2024);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index p = 1 + static_cast<Eigen::Index>(meta.index(4));
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(meta.index(4));
    const Eigen::Index k = 2 + static_cast<Eigen::Index>(meta.index(3));
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(meta.index(7));
    const LossKind loss = trial % 2 == 0 ? LossKind::MeanSquaredError : LossKind::CrossEntropy;
    const Activation act =
        trial % 3 == 0 ? Activation::Identity : (trial % 3 == 1 ? Activation::ReLU : Activation::Sigmoid);

    LabeledDataset data;
    data.inputs = random_matrix(meta, n, p);
    data.labels.resize(static_cast<std::size_t>(n));
    data.region_ids.assign(static_cast<std::size_t>(n), 1);
    data.true_conditionals = Eigen::MatrixXd::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      data.labels[static_cast<std::size_t>(i)] = static_cast<int>(meta.index(static_cast<std::size_t>(k)));
      data.true_conditionals(i, data.labels[static_cast<std::size_t>(i)]) = 1.0;
    }

    const Eigen::MatrixXd anchors = random_matrix(meta, p, m);
    const Eigen::VectorXd bias = random_matrix(meta, m, 1).col(0);
    const Eigen::MatrixXd readout = random_matrix(meta, m, k);
    const GraphLayer layer(anchors, bias, PairwiseFunction::inner_product(), act);

    TrainingConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 1;
    cfg.batch_size = static_cast<int>(n);
    cfg.loss = loss;
    cfg.seed = 3;
    const TrainResult result = train_layer_sgd(layer, readout, data, cfg);

    const double h = 1e-6;
    auto loss_at = [&](const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& r) {
      return training_loss(GraphLayer(a, b, PairwiseFunction::inner_product(), act), r, data.inputs,
                           data.labels, loss);
    };
    auto check_close = [&](double analytic, double fd) {
      CHECK(std::abs(analytic - fd) <= 1e-5 * std::max({std::abs(analytic), std::abs(fd), 1e-3}));
    };

    for (Eigen::Index i = 0; i < p; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        Eigen::MatrixXd plus = anchors;
        Eigen::MatrixXd minus = anchors;
        plus(i, j) += h;
        minus(i, j) -= h;
        const double fd = (loss_at(plus, bias, readout) - loss_at(minus, bias, readout)) / (2 * h);
        check_close((anchors(i, j) - result.layer.anchors()(i, j)) / cfg.learning_rate, fd);
      }
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      Eigen::VectorXd plus = bias;
      Eigen::VectorXd minus = bias;
      plus(j) += h;
      minus(j) -= h;
      const double fd = (loss_at(anchors, plus, readout) - loss_at(anchors, minus, readout)) / (2 * h);
      check_close((bias(j) - result.layer.bias()(j)) / cfg.learning_rate, fd);
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::MatrixXd plus = readout;
        Eigen::MatrixXd minus = readout;
        plus(i, j) += h;
        minus(i, j) -= h;
        const double fd = (loss_at(anchors, bias, plus) - loss_at(anchors, bias, minus)) / (2 * h);
        check_close((readout(i, j) - result.readout(i, j)) / cfg.learning_rate, fd);
      }
    }
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("gradient clip bounds the per-step anchor displacement") {
  const LabeledDataset data = tiny_two_region_data(40, 5);
  const Eigen::MatrixXd anchors = sample_anchors_iid(data.inputs, 3, 2);
  Rng rng(6);
  const Eigen::MatrixXd readout = random_matrix(rng, 3, 2, -3.0, 3.0);

  TrainingConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 8;
  cfg.batch_size = static_cast<int>(data.size());  // one step per epoch
  cfg.gradient_clip = 0.2;
  cfg.seed = 10;
  const TrainResult result =
      train_layer_sgd(inner_layer(anchors, Activation::Identity), readout, data, cfg);
  const double limit = cfg.learning_rate * *cfg.gradient_clip + 1e-12;
  for (std::size_t e = 1; e < result.trace.anchor_snapshots.size(); ++e) {
    const Eigen::MatrixXd step =
        result.trace.anchor_snapshots[e] - result.trace.anchor_snapshots[e - 1];
    for (Eigen::Index j = 0; j < step.cols(); ++j) CHECK(step.col(j).norm() <= limit);
  }
}

TEST_CASE("trace covering radii recompute exactly from the snapshots") {
  const LabeledDataset data = tiny_two_region_data(50, 33);
  const Eigen::MatrixXd anchors = sample_anchors_iid(data.inputs, 5, 4);
  Rng rng(9);
  TrainingConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 5;
  cfg.batch_size = 10;
  cfg.seed = 44;
  const TrainResult result = train_layer_sgd(inner_layer(anchors, Activation::ReLU),
                                             random_matrix(rng, 5, 2, -0.2, 0.2), data, cfg);
  REQUIRE(result.trace.anchor_snapshots.size() == result.trace.covering_radii.size());
  for (std::size_t e = 0; e < result.trace.anchor_snapshots.size(); ++e) {
    CHECK(covering_radius(result.trace.anchor_snapshots[e], data.inputs) ==
          result.trace.covering_radii[e]);
  }
  for (const TraceFlag& flag : result.trace.flags) {
    CHECK(flag.epoch >= 0);
    CHECK(flag.epoch <= cfg.epochs);
  }
}

TEST_CASE("short reference training run raises no flags") {
  const LabeledDataset data = tiny_two_region_data(300, 71);
  const Eigen::MatrixXd anchors = sample_anchors_iid(data.inputs, 8, 13);
  Rng rng(15);
  TrainingConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 5;
  cfg.batch_size = 50;
  cfg.gradient_clip = 1.0;
  cfg.seed = 7;
  const TrainResult result = train_layer_sgd(inner_layer(anchors, Activation::ReLU),
                                             random_matrix(rng, 8, 2, -0.1, 0.1), data, cfg);
  CHECK(result.trace.flags.empty());
  CHECK(result.trace.losses.back() <= result.trace.losses.front());
}

TEST_CASE("exploding training aborts with a diagnostic") {
  const LabeledDataset data = tiny_two_region_data(40, 2);
  const Eigen::MatrixXd anchors = sample_anchors_iid(data.inputs, 3, 1);
  Rng rng(20);
  TrainingConfig cfg;
  cfg.learning_rate = 1e150;
  cfg.epochs = 50;
  cfg.batch_size = 40;
  cfg.seed = 0;
  CHECK_THROWS_AS(train_layer_sgd(inner_layer(anchors, Activation::Identity),
                                  random_matrix(rng, 3, 2, -0.5, 0.5), data, cfg),
                  std::runtime_error);
}

TEST_CASE("train_layer_sgd validates its inputs") {
  const LabeledDataset data = tiny_two_region_data(20, 4);
  const Eigen::MatrixXd anchors = sample_anchors_iid(data.inputs, 3, 0);
  Rng rng(1);
  const Eigen::MatrixXd readout = random_matrix(rng, 3, 2);
  TrainingConfig cfg;

  GraphLayer kernel_layer(anchors, Eigen::VectorXd::Zero(3), PairwiseFunction::gaussian_kernel(1.0),
                          Activation::Identity);
  CHECK_THROWS_AS(train_layer_sgd(kernel_layer, readout, data, cfg), std::invalid_argument);

  cfg.epochs = 0;
  CHECK_THROWS_AS(train_layer_sgd(inner_layer(anchors, Activation::ReLU), readout, data, cfg),
                  std::invalid_argument);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train_layer_sgd(inner_layer(anchors, Activation::ReLU), readout, data, cfg),
                  std::invalid_argument);
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train_layer_sgd(inner_layer(anchors, Activation::ReLU),
                                  random_matrix(rng, 4, 2), data, cfg),
                  std::invalid_argument);
}
