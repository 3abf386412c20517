#pragma once

#include <Eigen/Dense>

#include <vector>

namespace gvn {

// ---------------------------------------------------------------------------
// A layer is a set of anchor points paired with the input through a pairwise
// function, shifted by a bias and passed through an elementwise activation:
//
//   z = sigma([A(x, a_1), ..., A(x, a_m)] + b)
//
// Anchors are columns of a p x m matrix; the layer output has length m.
// This single evaluation path covers plain affine layers (inner product,
// identity activation, zero bias) as well as kernel and distance features.
// ---------------------------------------------------------------------------

enum class PairwiseKind {
  InnerProduct,
  EuclideanDistance,
  SquaredEuclideanDistance,
  GaussianKernel,
  CosineSimilarity,
};

class PairwiseFunction {
 public:
  static PairwiseFunction inner_product() { return PairwiseFunction(PairwiseKind::InnerProduct, 0.0); }
  static PairwiseFunction euclidean_distance() { return PairwiseFunction(PairwiseKind::EuclideanDistance, 0.0); }
  static PairwiseFunction squared_euclidean_distance() {
    return PairwiseFunction(PairwiseKind::SquaredEuclideanDistance, 0.0);
  }
  // bandwidth must be positive.
  static PairwiseFunction gaussian_kernel(double bandwidth);
  static PairwiseFunction cosine_similarity() { return PairwiseFunction(PairwiseKind::CosineSimilarity, 0.0); }

  PairwiseKind kind() const { return kind_; }
  double bandwidth() const { return bandwidth_; }

 private:
  PairwiseFunction(PairwiseKind kind, double bandwidth) : kind_(kind), bandwidth_(bandwidth) {}
  PairwiseKind kind_;
  double bandwidth_;  // meaningful for GaussianKernel only
};

// Evaluates A(x, a). Errors on dimension mismatch, non-finite input, and on
// cosine similarity with a zero vector on either side (never a silent value).
double pairwise_eval(const PairwiseFunction& fn, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& a);

enum class Activation { Identity, ReLU, Sigmoid };

// Coordinate-wise activation; errors on non-finite input.
Eigen::VectorXd activation_apply(Activation kind, const Eigen::Ref<const Eigen::VectorXd>& v);

class GraphLayer {
 public:
  // anchors: p x m, column j is the j-th anchor point; bias: length m.
  // Requires m >= 1 and finite entries.
  GraphLayer(Eigen::MatrixXd anchors, Eigen::VectorXd bias, PairwiseFunction pairwise,
             Activation activation);

  Eigen::Index input_dim() const { return anchors_.rows(); }
  Eigen::Index width() const { return anchors_.cols(); }
  const Eigen::MatrixXd& anchors() const { return anchors_; }
  const Eigen::VectorXd& bias() const { return bias_; }
  const PairwiseFunction& pairwise() const { return pairwise_; }
  Activation activation() const { return activation_; }

 private:
  Eigen::MatrixXd anchors_;
  Eigen::VectorXd bias_;
  PairwiseFunction pairwise_;
  Activation activation_;
};

// sigma([A(x, a_1), ..., A(x, a_m)] + b); length-m output.
Eigen::VectorXd layer_forward(const GraphLayer& layer, const Eigen::Ref<const Eigen::VectorXd>& x);

// Row-wise batch form: each sample row is mapped independently through
// layer_forward, so batch outputs match the single-row path exactly.
Eigen::MatrixXd layer_forward_batch(const GraphLayer& layer, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

// An ordered stack of layers. The dimension chain (layer l input dim equals
// layer l-1 width) is validated here, at construction, not at forward time.
class Network {
 public:
  explicit Network(std::vector<GraphLayer> layers);

  const std::vector<GraphLayer>& layers() const { return layers_; }
  Eigen::Index depth() const { return static_cast<Eigen::Index>(layers_.size()); }
  Eigen::Index input_dim() const { return layers_.front().input_dim(); }
  Eigen::Index output_dim() const { return layers_.back().width(); }

 private:
  std::vector<GraphLayer> layers_;
};

Eigen::VectorXd network_forward(const Network& net, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::MatrixXd network_forward_batch(const Network& net, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

// Appends ||x|| to a code vector; used when the pairwise map discards scale
// (cosine similarity) but the norm still carries label information.
Eigen::VectorXd augment_with_norm(const Eigen::Ref<const Eigen::VectorXd>& codes,
                                  const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace gvn
