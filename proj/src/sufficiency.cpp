#include "gvn/sufficiency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "check.hpp"

namespace gvn {

using detail::require;

CodeMatrix::CodeMatrix(Eigen::MatrixXd c, std::string prov)
    : codes(std::move(c)), provenance(std::move(prov)) {
  require(codes.rows() >= 1 && codes.cols() >= 1, "CodeMatrix: empty");
  require(codes.allFinite(), "CodeMatrix: non-finite entries");
}

CollisionReport collision_report(const CodeMatrix& code_matrix, double tol) {
  require(std::isfinite(tol) && tol > 0.0, "collision_report: tolerance must be positive");
  const Eigen::MatrixXd& z = code_matrix.codes;
  const Eigen::Index n = z.rows();
  require(n >= 2, "collision_report: need at least two rows");
  const Eigen::Index d = z.cols();

  // Row-major copy for cache-friendly pair scans.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = z;

  CollisionReport report;
  report.tolerance = tol;
  double min_nonzero = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* a = rows.row(i).data();
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double* b = rows.row(j).data();
      // Once the partial max exceeds both the tolerance and the current
      // minimum, the pair can affect neither statistic.
      const double cutoff = std::max(tol, min_nonzero);
      double dist = 0.0;
      bool truncated = false;
      for (Eigen::Index c = 0; c < d; ++c) {
        dist = std::max(dist, std::abs(a[c] - b[c]));
        if (dist > cutoff) {
          truncated = true;
          break;
        }
      }
      if (truncated) continue;
      if (dist <= tol) {
        ++report.pair_count;
        if (report.sample_pairs.size() < 100) {
          report.sample_pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
        }
      }
      if (dist > 0.0) min_nonzero = std::min(min_nonzero, dist);
    }
  }
  report.min_nonzero_distance = std::isfinite(min_nonzero) ? min_nonzero : 0.0;
  return report;
}

long long count_collisions(const Eigen::Ref<const Eigen::MatrixXd>& codes, double tol) {
  const Eigen::Index n = codes.rows();
  const Eigen::Index d = codes.cols();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = codes;
  long long count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* a = rows.row(i).data();
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double* b = rows.row(j).data();
      bool hit = true;
      for (Eigen::Index c = 0; c < d; ++c) {
        if (std::abs(a[c] - b[c]) > tol) {
          hit = false;
          break;
        }
      }
      if (hit) ++count;
    }
  }
  return count;
}

SeparationReport region_separation_report(const CodeMatrix& code_matrix, const std::vector<int>& region_ids,
                                          double tol) {
  const Eigen::MatrixXd& z = code_matrix.codes;
  const Eigen::Index n = z.rows();
  require(static_cast<Eigen::Index>(region_ids.size()) == n,
          "region_separation_report: region id count mismatch");
  const Eigen::Index d = z.cols();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = z;

  SeparationReport report;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* a = rows.row(i).data();
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (region_ids[static_cast<std::size_t>(i)] == region_ids[static_cast<std::size_t>(j)]) continue;
      ++report.cross_region_pairs;
      const double* b = rows.row(j).data();
      bool hit = true;
      for (Eigen::Index c = 0; c < d; ++c) {
        if (std::abs(a[c] - b[c]) > tol) {
          hit = false;
          break;
        }
      }
      if (hit) ++report.cross_region_collisions;
    }
  }
  report.fraction = report.cross_region_pairs == 0
                        ? 0.0
                        : static_cast<double>(report.cross_region_collisions) /
                              static_cast<double>(report.cross_region_pairs);
  return report;
}

namespace {

// Keeps the k smallest (distance, index) pairs under the lexicographic
// order, so distance ties resolve to lower indices. reject_above() gives a
// threshold for skipping candidates without touching the heap.
class NeighborHeap {
 public:
  explicit NeighborHeap(int k) : k_(static_cast<std::size_t>(k)) { heap_.reserve(k_ + 1); }

  double reject_above() const { return worst_; }

  void offer(double dist, int idx) {
    const std::pair<double, int> cand{dist, idx};
    if (heap_.size() < k_) {
      heap_.push_back(cand);
      std::push_heap(heap_.begin(), heap_.end());
      if (heap_.size() == k_) worst_ = heap_.front().first;
    } else if (cand < heap_.front()) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = cand;
      std::push_heap(heap_.begin(), heap_.end());
      worst_ = heap_.front().first;
    }
  }

  const std::vector<std::pair<double, int>>& items() const { return heap_; }

 private:
  std::size_t k_;
  double worst_ = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, int>> heap_;
};

constexpr Eigen::Index kQueryBlock = 256;

// Leave-one-out kNN class frequencies for every stored row. Distances are
// computed blockwise as ||q||^2 + ||x||^2 - 2 <q, x> so the inner loop is a
// matrix product.
Eigen::MatrixXd loo_posteriors(const Eigen::MatrixXd& codes, const std::vector<int>& labels,
                               int num_classes, int k) {
  const Eigen::Index n = codes.rows();
  const Eigen::VectorXd sq = codes.rowwise().squaredNorm();
  Eigen::MatrixXd post(n, num_classes);
  // Row-major so each query's cross-product row is contiguous.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cross;
  Eigen::VectorXd dist(n);
  for (Eigen::Index start = 0; start < n; start += kQueryBlock) {
    const Eigen::Index bs = std::min(kQueryBlock, n - start);
    cross.noalias() = codes.middleRows(start, bs) * codes.transpose();
    for (Eigen::Index b = 0; b < bs; ++b) {
      const Eigen::Index q = start + b;
      dist = (sq.array() + sq(q) - 2.0 * cross.row(b).transpose().array()).cwiseMax(0.0);
      dist(q) = std::numeric_limits<double>::infinity();  // leave-one-out
      NeighborHeap heap(k);
      const double* d = dist.data();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (d[j] > heap.reject_above()) continue;
        heap.offer(d[j], static_cast<int>(j));
      }
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(num_classes);
      for (const auto& [dj, idx] : heap.items()) {
        (void)dj;
        counts(labels[static_cast<std::size_t>(idx)]) += 1.0;
      }
      post.row(q) = (counts / static_cast<double>(k)).transpose();
    }
  }
  return post;
}

struct GapMetrics {
  double l2 = 0.0;
  double max_tv = 0.0;
};

GapMetrics loo_gap_metrics(const Eigen::MatrixXd& codes, const LabeledDataset& data, int k) {
  const Eigen::MatrixXd post =
      loo_posteriors(codes, data.labels, static_cast<int>(data.num_classes()), k);
  GapMetrics metrics;
  double total_sq = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const Eigen::RowVectorXd err = post.row(i) - data.true_conditionals.row(i);
    total_sq += err.squaredNorm();
    metrics.max_tv = std::max(metrics.max_tv, err.cwiseAbs().sum());
  }
  metrics.l2 = std::sqrt(total_sq / static_cast<double>(data.size()));
  return metrics;
}

}  // namespace

ConditionalEstimator::ConditionalEstimator(Eigen::MatrixXd codes, std::vector<int> labels,
                                           int num_classes, int k)
    : codes_(std::move(codes)), labels_(std::move(labels)), num_classes_(num_classes), k_(k) {
  require(codes_.rows() >= 1, "ConditionalEstimator: empty codes");
  require(codes_.allFinite(), "ConditionalEstimator: non-finite codes");
  require(static_cast<Eigen::Index>(labels_.size()) == codes_.rows(),
          "ConditionalEstimator: label count mismatch");
  require(num_classes_ >= 1, "ConditionalEstimator: need at least one class");
  require(k_ >= 1 && k_ <= codes_.rows(), "ConditionalEstimator: k must be in [1, n]");
  for (int label : labels_) {
    require(label >= 0 && label < num_classes_, "ConditionalEstimator: label out of range");
  }
}

Eigen::VectorXd ConditionalEstimator::posterior(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  require(z.size() == codes_.cols(), "ConditionalEstimator: query dimension mismatch");
  NeighborHeap heap(k_);
  for (Eigen::Index j = 0; j < codes_.rows(); ++j) {
    heap.offer((codes_.row(j).transpose() - z).squaredNorm(), static_cast<int>(j));
  }
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(num_classes_);
  for (const auto& [dist, idx] : heap.items()) {
    (void)dist;
    counts(labels_[static_cast<std::size_t>(idx)]) += 1.0;
  }
  return counts / static_cast<double>(k_);
}

Eigen::MatrixXd ConditionalEstimator::posterior_loo() const {
  require(k_ <= codes_.rows() - 1, "ConditionalEstimator: leave-one-out needs k <= n - 1");
  return loo_posteriors(codes_, labels_, num_classes_, k_);
}

ConditionalEstimator estimate_conditional(const CodeMatrix& codes, const std::vector<int>& labels,
                                          int num_classes, int k) {
  return ConditionalEstimator(codes.codes, labels, num_classes, k);
}

GapReport sufficiency_gap(const LabeledDataset& data, const CodeMatrix& codes, int k) {
  data.validate();
  const GapMetrics floor = loo_gap_metrics(data.inputs, data, k);
  return sufficiency_gap_with_floor(data, codes, k, floor.l2);
}

GapReport sufficiency_gap_with_floor(const LabeledDataset& data, const CodeMatrix& codes, int k,
                                     double noise_floor) {
  require(codes.codes.rows() == data.size(), "sufficiency_gap: codes/data row mismatch");
  require(k >= 1 && k <= data.size() - 1, "sufficiency_gap: k must be in [1, n - 1]");
  const GapMetrics metrics = loo_gap_metrics(codes.codes, data, k);
  GapReport report;
  report.l2_gap = metrics.l2;
  report.max_tv_gap = metrics.max_tv;
  report.noise_floor = noise_floor;
  report.k = k;
  report.n = data.size();
  report.estimator = "loo-knn(k=" + std::to_string(k) + ", n=" + std::to_string(data.size()) + ")";
  return report;
}

int default_neighbor_count(Eigen::Index n) {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
}

}  // namespace gvn
