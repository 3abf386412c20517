#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gvn/regions.hpp"

namespace gvn {

// Row i is the representation Z(x_i) of sample i.
struct CodeMatrix {
  Eigen::MatrixXd codes;  // n x d, finite
  std::string provenance;

  explicit CodeMatrix(Eigen::MatrixXd c, std::string prov = "");
};

struct CollisionReport {
  double tolerance = 0.0;
  long long pair_count = 0;                       // unordered pairs within tolerance
  std::vector<std::pair<int, int>> sample_pairs;  // capped at 100
  double min_nonzero_distance = 0.0;              // Chebyshev; 0 when no positive distance exists
};

// Exact O(n^2) scan; a pair collides when the max-coordinate distance is
// within tol.
CollisionReport collision_report(const CodeMatrix& codes, double tol);

// Collision count only, with per-pair early exit. Same count as
// collision_report's pair_count.
long long count_collisions(const Eigen::Ref<const Eigen::MatrixXd>& codes, double tol);

struct SeparationReport {
  long long cross_region_collisions = 0;
  long long cross_region_pairs = 0;
  double fraction = 0.0;
};

// Counts colliding pairs whose region ids differ; within-region collisions
// are permitted and not counted.
SeparationReport region_separation_report(const CodeMatrix& codes, const std::vector<int>& region_ids,
                                          double tol = 1e-9);

// Plug-in kNN conditional estimator: P(Y = c | z) is the frequency of class
// c among the k nearest stored codes (Euclidean), with distance ties broken
// by lower row index. Deterministic.
class ConditionalEstimator {
 public:
  ConditionalEstimator(Eigen::MatrixXd codes, std::vector<int> labels, int num_classes, int k);

  Eigen::VectorXd posterior(const Eigen::Ref<const Eigen::VectorXd>& z) const;

  // Row i: the estimate at codes.row(i) with sample i excluded from its own
  // neighborhood. Requires k <= n - 1.
  Eigen::MatrixXd posterior_loo() const;

  int k() const { return k_; }
  Eigen::Index size() const { return codes_.rows(); }
  int num_classes() const { return num_classes_; }

 private:
  Eigen::MatrixXd codes_;
  std::vector<int> labels_;
  int num_classes_;
  int k_;
};

ConditionalEstimator estimate_conditional(const CodeMatrix& codes, const std::vector<int>& labels,
                                          int num_classes, int k);

struct GapReport {
  double l2_gap = 0.0;       // sqrt of the mean squared L2 error against the true conditionals
  double max_tv_gap = 0.0;   // max over samples of the L1 error
  double noise_floor = 0.0;  // l2 metric with the raw inputs as their own representation
  int k = 0;
  Eigen::Index n = 0;
  std::string estimator;
};

// Leave-one-out kNN estimates on the codes, compared against the stored
// generator conditionals. The noise floor runs the identical estimator on
// the raw inputs, isolating estimation error from information loss.
GapReport sufficiency_gap(const LabeledDataset& data, const CodeMatrix& codes, int k);

// Same, with the (data, k)-only noise floor supplied by the caller; avoids
// recomputing it when many code matrices are scored against one dataset.
GapReport sufficiency_gap_with_floor(const LabeledDataset& data, const CodeMatrix& codes, int k,
                                     double noise_floor);

// ceil(sqrt(n)).
int default_neighbor_count(Eigen::Index n);

}  // namespace gvn
