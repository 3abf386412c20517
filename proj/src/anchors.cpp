#include "gvn/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "check.hpp"
#include "gvn/rng.hpp"

namespace gvn {

using detail::require;

Eigen::MatrixXd sample_anchors_iid(const Eigen::Ref<const Eigen::MatrixXd>& data, Eigen::Index m,
                                   std::uint64_t seed) {
  require(data.rows() >= 1, "sample_anchors_iid: empty dataset");
  require(m >= 1, "sample_anchors_iid: m must be positive");
  Rng rng(seed);
  Eigen::MatrixXd anchors(data.cols(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto row = rng.index(static_cast<std::size_t>(data.rows()));
    anchors.col(j) = data.row(static_cast<Eigen::Index>(row)).transpose();
  }
  return anchors;
}

double covering_radius(const Eigen::Ref<const Eigen::MatrixXd>& anchors,
                       const Eigen::Ref<const Eigen::MatrixXd>& probes) {
  require(anchors.cols() >= 1 && probes.rows() >= 1, "covering_radius: empty inputs");
  require(anchors.rows() == probes.cols(), "covering_radius: dimension mismatch");
  double worst_sq = 0.0;
  for (Eigen::Index i = 0; i < probes.rows(); ++i) {
    double best_sq = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < anchors.cols(); ++j) {
      const double d = (anchors.col(j) - probes.row(i).transpose()).squaredNorm();
      best_sq = std::min(best_sq, d);
    }
    worst_sq = std::max(worst_sq, best_sq);
  }
  return std::sqrt(worst_sq);
}

GeneralPositionResult check_general_position(const Eigen::Ref<const Eigen::MatrixXd>& points) {
  require(points.cols() >= 1, "check_general_position: need at least one column");
  require(points.allFinite(), "check_general_position: non-finite points");
  const Eigen::MatrixXd gram = points.transpose() * points;
  const double det = gram.fullPivLu().determinant();
  GeneralPositionResult result;
  result.gram_det_magnitude = std::abs(det);
  result.ok = result.gram_det_magnitude > 1e-10;
  return result;
}

namespace {

Eigen::MatrixXd one_hot(const std::vector<int>& labels, Eigen::Index k) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) t(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return t;
}

Eigen::MatrixXd apply_activation_matrix(Activation act, const Eigen::MatrixXd& u) {
  switch (act) {
    case Activation::Identity:
      return u;
    case Activation::ReLU:
      return u.cwiseMax(0.0);
    case Activation::Sigmoid:
      return u.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
  }
  throw std::logic_error("apply_activation_matrix: unreachable");
}

// Derivative in terms of pre-activation u and activation value z.
Eigen::MatrixXd activation_derivative(Activation act, const Eigen::MatrixXd& u, const Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::Identity:
      return Eigen::MatrixXd::Ones(u.rows(), u.cols());
    case Activation::ReLU:
      return (u.array() > 0.0).cast<double>().matrix();
    case Activation::Sigmoid:
      return (z.array() * (1.0 - z.array())).matrix();
  }
  throw std::logic_error("activation_derivative: unreachable");
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (s.row(i).array() - mx).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

double loss_value(LossKind loss, const Eigen::MatrixXd& scores, const Eigen::MatrixXd& targets,
                  const std::vector<int>& labels) {
  const double n = static_cast<double>(scores.rows());
  if (loss == LossKind::MeanSquaredError) {
    return 0.5 * (scores - targets).squaredNorm() / n;
  }
  // Cross-entropy with a softmax link, computed via log-sum-exp.
  double total = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    const double lse = mx + std::log((scores.row(i).array() - mx).exp().sum());
    total += lse - scores(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / n;
}

void clip_columns(Eigen::MatrixXd& g, double limit) {
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    const double norm = g.col(j).norm();
    if (norm > limit) g.col(j) *= limit / norm;
  }
}

struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

Box inflate_twice(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const Eigen::VectorXd center = 0.5 * (lo + hi);
  const Eigen::VectorXd half = 0.5 * (hi - lo);
  return {center - 2.0 * half, center + 2.0 * half};
}

bool any_anchor_outside(const Eigen::MatrixXd& anchors, const Box& box) {
  for (Eigen::Index j = 0; j < anchors.cols(); ++j) {
    for (Eigen::Index d = 0; d < anchors.rows(); ++d) {
      if (anchors(d, j) < box.lo(d) || anchors(d, j) > box.hi(d)) return true;
    }
  }
  return false;
}

bool any_column_collision(const Eigen::MatrixXd& anchors, double tol) {
  for (Eigen::Index a = 0; a < anchors.cols(); ++a) {
    for (Eigen::Index b = a + 1; b < anchors.cols(); ++b) {
      if ((anchors.col(a) - anchors.col(b)).cwiseAbs().maxCoeff() <= tol) return true;
    }
  }
  return false;
}

}  // namespace

double training_loss(const GraphLayer& layer, const Eigen::Ref<const Eigen::MatrixXd>& readout,
                     const Eigen::Ref<const Eigen::MatrixXd>& inputs, const std::vector<int>& labels,
                     LossKind loss) {
  require(layer.pairwise().kind() == PairwiseKind::InnerProduct,
          "training_loss: inner-product layers only");
  const Eigen::MatrixXd u =
      (inputs * layer.anchors()).rowwise() + layer.bias().transpose();
  const Eigen::MatrixXd z = apply_activation_matrix(layer.activation(), u);
  const Eigen::MatrixXd scores = z * readout;
  return loss_value(loss, scores, one_hot(labels, readout.cols()), labels);
}

TrainResult train_layer_sgd(const GraphLayer& layer, const Eigen::Ref<const Eigen::MatrixXd>& readout,
                            const LabeledDataset& data, const TrainingConfig& cfg) {
  data.validate();
  require(layer.pairwise().kind() == PairwiseKind::InnerProduct,
          "train_layer_sgd: inner-product layers only");
  require(layer.input_dim() == data.dim(), "train_layer_sgd: layer/data dimension mismatch");
  require(readout.rows() == layer.width(), "train_layer_sgd: readout rows must equal layer width");
  require(readout.cols() == data.num_classes(), "train_layer_sgd: readout cols must equal class count");
  require(std::isfinite(cfg.learning_rate) && cfg.learning_rate >= 0.0,
          "train_layer_sgd: learning rate must be >= 0");
  require(cfg.epochs >= 1, "train_layer_sgd: epochs must be >= 1");
  require(cfg.batch_size >= 1, "train_layer_sgd: batch size must be >= 1");
  if (cfg.gradient_clip) {
    require(std::isfinite(*cfg.gradient_clip) && *cfg.gradient_clip > 0.0,
            "train_layer_sgd: gradient clip must be positive");
  }

  const Eigen::Index n = data.size();
  const Eigen::Index k = data.num_classes();
  const Activation act = layer.activation();
  const Eigen::MatrixXd targets = one_hot(data.labels, k);

  Eigen::MatrixXd anchors = layer.anchors();
  Eigen::VectorXd bias = layer.bias();
  Eigen::MatrixXd r = readout;

  const Eigen::VectorXd data_lo = data.inputs.colwise().minCoeff().transpose();
  const Eigen::VectorXd data_hi = data.inputs.colwise().maxCoeff().transpose();
  const Box bound = inflate_twice(data_lo, data_hi);

  TrainingTrace trace;
  auto record = [&](int epoch) {
    const GraphLayer snapshot(anchors, bias, PairwiseFunction::inner_product(), act);
    trace.anchor_snapshots.push_back(anchors);
    trace.losses.push_back(training_loss(snapshot, r, data.inputs, data.labels, cfg.loss));
    trace.covering_radii.push_back(covering_radius(anchors, data.inputs));
    trace.bbox_min.push_back(anchors.rowwise().minCoeff());
    trace.bbox_max.push_back(anchors.rowwise().maxCoeff());
    if (any_anchor_outside(anchors, bound)) trace.flags.push_back({kFlagUnboundedIterates, epoch});
    if (any_column_collision(anchors, 1e-9)) trace.flags.push_back({kFlagSnapshotCollision, epoch});
  };
  record(0);

  Rng rng(cfg.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.index(i)]);
    }
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index nb = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Eigen::MatrixXd xb(nb, data.dim());
      Eigen::MatrixXd tb(nb, k);
      for (Eigen::Index b = 0; b < nb; ++b) {
        const Eigen::Index row = order[static_cast<std::size_t>(start + b)];
        xb.row(b) = data.inputs.row(row);
        tb.row(b) = targets.row(row);
      }

      const Eigen::MatrixXd u = (xb * anchors).rowwise() + bias.transpose();
      const Eigen::MatrixXd z = apply_activation_matrix(act, u);
      const Eigen::MatrixXd scores = z * r;
      const Eigen::MatrixXd gs =
          (cfg.loss == LossKind::MeanSquaredError ? Eigen::MatrixXd(scores - tb)
                                                  : Eigen::MatrixXd(softmax_rows(scores) - tb)) /
          static_cast<double>(nb);

      Eigen::MatrixXd grad_readout = z.transpose() * gs;
      const Eigen::MatrixXd gu =
          ((gs * r.transpose()).array() * activation_derivative(act, u, z).array()).matrix();
      Eigen::MatrixXd grad_bias = gu.colwise().sum().transpose();
      Eigen::MatrixXd grad_anchors = xb.transpose() * gu;

      if (!grad_anchors.allFinite() || !grad_bias.allFinite() || !grad_readout.allFinite()) {
        throw std::runtime_error("train_layer_sgd: non-finite gradient at epoch " +
                                 std::to_string(epoch) + ", batch offset " + std::to_string(start));
      }

      if (cfg.gradient_clip) {
        clip_columns(grad_anchors, *cfg.gradient_clip);
        clip_columns(grad_bias, *cfg.gradient_clip);
        clip_columns(grad_readout, *cfg.gradient_clip);
      }

      anchors -= cfg.learning_rate * grad_anchors;
      bias -= cfg.learning_rate * grad_bias.col(0);
      r -= cfg.learning_rate * grad_readout;
      if (!anchors.allFinite() || !bias.allFinite() || !r.allFinite()) {
        throw std::runtime_error("train_layer_sgd: parameters became non-finite at epoch " +
                                 std::to_string(epoch) + ", batch offset " + std::to_string(start));
      }
    }
    record(epoch);
  }

  return {GraphLayer(anchors, bias, PairwiseFunction::inner_product(), act), r, std::move(trace)};
}

}  // namespace gvn
