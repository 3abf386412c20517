#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvn/graph_layer.hpp"
#include "gvn/regions.hpp"

namespace gvn {

// Sparse reference pattern for one region: a coordinate subset and the
// values the region takes there, up to noise_bound in Euclidean norm.
struct Patch {
  std::vector<int> coords;   // sorted, unique, within [0, ambient_dim)
  Eigen::VectorXd pattern;   // indexed by coords
};

// Raised when two patches with overlapping coordinates agree everywhere on
// the overlap, which makes the corresponding detectors indistinguishable.
class PatchConditionError : public std::invalid_argument {
 public:
  PatchConditionError(int first, int second, std::vector<int> shared);
  int first;
  int second;
  std::vector<int> shared_coords;
};

// Raised when two constructed representative codes coincide within 1e-9;
// the caller must re-select representatives.
class CodeCollisionError : public std::invalid_argument {
 public:
  CodeCollisionError(int first, int second, const std::string& what);
  int first;
  int second;
};

// Raised by the discrete construction when the support Gram matrix is
// numerically singular.
class SingularGramError : public std::invalid_argument {
 public:
  explicit SingularGramError(double det_magnitude);
  double det_magnitude;
};

class PatchSpec {
 public:
  // Validates coordinate subsets, nonzero finite patterns, and the patch
  // condition: overlapping patches must disagree on at least one shared
  // coordinate (throws PatchConditionError otherwise).
  PatchSpec(Eigen::Index ambient_dim, std::vector<Patch> patches, double noise_bound);

  Eigen::Index ambient_dim() const { return ambient_dim_; }
  const std::vector<Patch>& patches() const { return patches_; }
  Eigen::Index num_regions() const { return static_cast<Eigen::Index>(patches_.size()); }
  double noise_bound() const { return noise_bound_; }

  // Same patches with a different noise bound.
  PatchSpec with_noise_bound(double noise_bound) const;

 private:
  Eigen::Index ambient_dim_;
  std::vector<Patch> patches_;
  double noise_bound_;
};

// Inner-product layer with the support points as anchors, zero bias and
// identity activation; injective on the support when the Gram matrix is
// nonsingular.
GraphLayer construct_discrete_separator(const Eigen::Ref<const Eigen::MatrixXd>& support_points);

// Inner-product layer with anchors c_j and bias -||c_j||^2, identity
// activation. Verifies that the representative codes are pairwise distinct
// (tolerance 1e-9) and throws CodeCollisionError otherwise.
GraphLayer construct_linear_separator(const Eigen::Ref<const Eigen::MatrixXd>& representatives);

enum class ReluBiasMode {
  HalfSquaredNorm,  // bias -||c||^2 / 2; default, own coordinate stays positive
  FullSquaredNorm,  // bias -||c||^2; collapses orthogonal representatives
};

GraphLayer construct_relu_separator(const Eigen::Ref<const Eigen::MatrixXd>& representatives,
                                    ReluBiasMode mode = ReluBiasMode::HalfSquaredNorm);

// ReLU inner-product layer with sparse anchors: anchor i equals pattern i on
// its coordinate subset and zero elsewhere, bias -||pattern||^2 / 2. Inputs
// matching a pattern exactly map coordinate i to ||pattern||^2 / 2 exactly.
GraphLayer construct_conv_separator(const PatchSpec& spec);

struct PairMargin {
  int i = 0;  // detector region
  int j = 0;  // contrasting region
  double gap = 0.0;    // realized worst-case inner-product gap Delta_ij
  double gamma = 0.0;  // gap - 2 delta ||x_i||
  // Guaranteed separation of coordinate i across the pair:
  // min(gamma, ||x_i||^2 / 2 - delta ||x_i||). The second term binds when
  // ReLU clips the contrasting region to zero, where gamma overstates the
  // realized separation.
  double margin = 0.0;
  double empirical_min_margin = 0.0;  // min_i-region code_i minus max_j-region code_i
  bool guaranteed = false;            // margin > 0
};

struct MarginReport {
  double noise_bound = 0.0;
  std::vector<PairMargin> pairs;  // all ordered pairs i != j
};

// Margin diagnostics for codes produced by construct_conv_separator on this
// spec. The worst-case gap treats inputs as confined to [0,1]^p off-patch.
MarginReport conv_pair_margin(const PatchSpec& spec, const LabeledDataset& data,
                              const Eigen::Ref<const Eigen::MatrixXd>& codes);

struct ConvShape {
  int height = 0;
  int width = 0;
};

// floor((size - kernel + 2 * padding) / stride) + 1 per spatial dimension.
ConvShape conv_output_shape(int height, int width, int kernel_h, int kernel_w, int stride, int padding);

// Samples inputs in [0,1]^p: region by weight, patch coordinates set to the
// region pattern plus noise of Euclidean norm <= noise_bound (clamped to the
// box), remaining coordinates uniform. With noise_bound 0 the patch values
// are bit-exact copies of the pattern.
LabeledDataset sample_patched(const PatchSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& conditionals,
                              const Eigen::Ref<const Eigen::VectorXd>& weights, Eigen::Index n,
                              std::uint64_t seed);

}  // namespace gvn
