#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace gvn {

// One ball-shaped region: uniform mass inside the closed ball, a conditional
// label distribution attached to it, and a mixture weight.
struct Region {
  Eigen::VectorXd center;
  double radius = 0.0;           // > 0
  Eigen::VectorXd conditional;   // probability vector over the K classes
  double weight = 0.0;           // > 0; weights sum to 1 across regions
};

// Within-region conditional perturbation: the conditional is tilted linearly
// along coordinate 0, with mass moved between classes 0 and 1 and clamped to
// the simplex. The L1 variation inside a ball of radius r is then bounded by
// 4 * slope * r, which the RegionSpec constructor validates against epsilon.
struct LipschitzTilt {
  double slope = 0.0;
};

class RegionSpec {
 public:
  // Validates: conditionals on the simplex (1e-12), weights summing to 1
  // (1e-12), pairwise disjoint closed balls, and for a tilt the bound
  // 4 * slope * radius <= epsilon for every region.
  RegionSpec(std::vector<Region> regions, double epsilon,
             std::optional<LipschitzTilt> perturbation = std::nullopt);

  const std::vector<Region>& regions() const { return regions_; }
  double epsilon() const { return epsilon_; }
  const std::optional<LipschitzTilt>& perturbation() const { return perturbation_; }
  Eigen::Index dim() const { return regions_.front().center.size(); }
  Eigen::Index num_regions() const { return static_cast<Eigen::Index>(regions_.size()); }
  Eigen::Index num_classes() const { return regions_.front().conditional.size(); }

  // Conditional distribution at a point of the given region (applies the
  // tilt when configured).
  Eigen::VectorXd conditional_at(int region_index, const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  std::vector<Region> regions_;
  double epsilon_;
  std::optional<LipschitzTilt> perturbation_;
};

// Sampled observations with the generator's ground truth attached: inputs,
// integer labels in {0..K-1}, 1-based region ids, and the exact conditional
// P(Y | X = x_i) each label was drawn from.
struct LabeledDataset {
  Eigen::MatrixXd inputs;             // n x p
  std::vector<int> labels;            // 0..K-1
  std::vector<int> region_ids;        // 1..m
  Eigen::MatrixXd true_conditionals;  // n x K

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }
  Eigen::Index num_classes() const { return true_conditionals.cols(); }
  int num_regions() const;  // max region id

  // Shape and simplex checks.
  void validate() const;
  // Additionally checks geometric consistency: each sample lies in the
  // closed ball of its region id.
  void validate_against(const RegionSpec& spec) const;
};

// Draws n samples: region by weight, input uniform in the region's ball,
// label from the (possibly tilted) conditional. Deterministic given seed;
// each sample uses its own counter-derived substream.
LabeledDataset sample_regioned(const RegionSpec& spec, Eigen::Index n, std::uint64_t seed);

// Discrete-support sampler: X takes exactly the given points (rows), one
// region per point. Inputs are bit-exact copies of the point rows.
LabeledDataset sample_discrete(const Eigen::MatrixXd& points, const Eigen::MatrixXd& conditionals,
                               const Eigen::VectorXd& weights, Eigen::Index n, std::uint64_t seed);

struct VariationReport {
  std::vector<double> per_region;    // indexed by region id - 1; 0 for skipped
  double overall = 0.0;              // max over regions with >= 2 samples
  std::vector<int> skipped_regions;  // region ids with fewer than 2 samples
};

// Max over same-region sample pairs of || q(x) - q(x') ||_1, computed from
// the stored true conditionals.
VariationReport within_region_variation(const LabeledDataset& data);

struct Partition {
  std::vector<int> cell_ids;  // per sample, 1..cell_count
  int cell_count = 0;
  double cell_side = 0.0;     // grid side length used (0 for the single-cell shortcut)
  Eigen::VectorXd box_min;
  Eigen::VectorXd box_max;
};

// Constructive grid partition: checks the Lipschitz hypothesis
// ||q(x)-q(x')||_1 <= lipschitz_bound * ||x-x'|| on the sample (error on
// violation), then covers the data bounding box with axis-aligned cells of
// diameter <= eps / lipschitz_bound, so within-cell L1 variation <= eps.
// If the global variation is already <= eps a single cell is returned.
Partition epsilon_partition(const LabeledDataset& data, double eps, double lipschitz_bound);

}  // namespace gvn
