#include "gvn/graph_layer.hpp"

#include <cmath>
#include <utility>

#include "check.hpp"

namespace gvn {

using detail::require;

PairwiseFunction PairwiseFunction::gaussian_kernel(double bandwidth) {
  require(std::isfinite(bandwidth) && bandwidth > 0.0,
          "gaussian_kernel: bandwidth must be a positive finite real");
  return PairwiseFunction(PairwiseKind::GaussianKernel, bandwidth);
}

double pairwise_eval(const PairwiseFunction& fn, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& a) {
  require(x.size() == a.size(), "pairwise_eval: dimension mismatch");
  require(x.allFinite() && a.allFinite(), "pairwise_eval: non-finite input");
  switch (fn.kind()) {
    case PairwiseKind::InnerProduct:
      return x.dot(a);
    case PairwiseKind::EuclideanDistance:
      return (x - a).norm();
    case PairwiseKind::SquaredEuclideanDistance:
      return (x - a).squaredNorm();
    case PairwiseKind::GaussianKernel: {
      const double bw = fn.bandwidth();
      return std::exp(-(x - a).squaredNorm() / (2.0 * bw * bw));
    }
    case PairwiseKind::CosineSimilarity: {
      const double nx = x.norm();
      const double na = a.norm();
      require(nx > 0.0 && na > 0.0, "pairwise_eval: cosine similarity is undefined at the zero vector");
      return x.dot(a) / (nx * na);
    }
  }
  throw std::logic_error("pairwise_eval: unreachable");
}

Eigen::VectorXd activation_apply(Activation kind, const Eigen::Ref<const Eigen::VectorXd>& v) {
  require(v.allFinite(), "activation_apply: non-finite input");
  switch (kind) {
    case Activation::Identity:
      return v;
    case Activation::ReLU:
      return v.cwiseMax(0.0);
    case Activation::Sigmoid:
      return v.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
  }
  throw std::logic_error("activation_apply: unreachable");
}

GraphLayer::GraphLayer(Eigen::MatrixXd anchors, Eigen::VectorXd bias, PairwiseFunction pairwise,
                       Activation activation)
    : anchors_(std::move(anchors)), bias_(std::move(bias)), pairwise_(pairwise), activation_(activation) {
  require(anchors_.cols() >= 1, "GraphLayer: need at least one anchor");
  require(anchors_.rows() >= 1, "GraphLayer: input dimension must be positive");
  require(bias_.size() == anchors_.cols(), "GraphLayer: bias length must equal anchor count");
  require(anchors_.allFinite() && bias_.allFinite(), "GraphLayer: non-finite parameters");
}

Eigen::VectorXd layer_forward(const GraphLayer& layer, const Eigen::Ref<const Eigen::VectorXd>& x) {
  require(x.size() == layer.input_dim(), "layer_forward: input dimension mismatch");
  require(x.allFinite(), "layer_forward: non-finite input");
  const Eigen::Index m = layer.width();
  Eigen::VectorXd z(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    z(j) = pairwise_eval(layer.pairwise(), x, layer.anchors().col(j));
  }
  z += layer.bias();
  return activation_apply(layer.activation(), z);
}

Eigen::MatrixXd layer_forward_batch(const GraphLayer& layer, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  Eigen::MatrixXd out(inputs.rows(), layer.width());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    out.row(i) = layer_forward(layer, inputs.row(i).transpose()).transpose();
  }
  return out;
}

Network::Network(std::vector<GraphLayer> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), "Network: need at least one layer");
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    require(layers_[l].input_dim() == layers_[l - 1].width(),
            "Network: layer " + std::to_string(l) + " input dim does not match previous width");
  }
}

Eigen::VectorXd network_forward(const Network& net, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::VectorXd z = x;
  for (const GraphLayer& layer : net.layers()) {
    z = layer_forward(layer, z);
  }
  return z;
}

Eigen::MatrixXd network_forward_batch(const Network& net, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  Eigen::MatrixXd out(inputs.rows(), net.output_dim());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    out.row(i) = network_forward(net, inputs.row(i).transpose()).transpose();
  }
  return out;
}

Eigen::VectorXd augment_with_norm(const Eigen::Ref<const Eigen::VectorXd>& codes,
                                  const Eigen::Ref<const Eigen::VectorXd>& x) {
  require(x.size() >= 1, "augment_with_norm: x must be nonempty");
  require(codes.allFinite() && x.allFinite(), "augment_with_norm: non-finite input");
  Eigen::VectorXd out(codes.size() + 1);
  out.head(codes.size()) = codes;
  out(codes.size()) = x.norm();
  return out;
}

}  // namespace gvn
