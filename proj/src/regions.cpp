#include "gvn/regions.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "check.hpp"
#include "gvn/rng.hpp"

namespace gvn {

using detail::require;

namespace {

constexpr double kSimplexTol = 1e-12;

void require_simplex(const Eigen::Ref<const Eigen::VectorXd>& q, const std::string& what) {
  require(q.size() >= 1, what + ": empty probability vector");
  require(q.allFinite(), what + ": non-finite probability vector");
  require(q.minCoeff() >= 0.0, what + ": negative probability");
  require(std::abs(q.sum() - 1.0) <= kSimplexTol, what + ": probabilities must sum to 1");
}

int pick_categorical(double u, const Eigen::Ref<const Eigen::VectorXd>& probs) {
  double acc = 0.0;
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    acc += probs(c);
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(probs.size() - 1);  // guards the u ~ 1 rounding edge
}

// Uniform draw from the closed ball; the offset is nudged inward if rounding
// ever lands outside, so geometric containment checks can be exact.
Eigen::VectorXd uniform_in_ball(Rng& rng, const Eigen::VectorXd& center, double radius) {
  const Eigen::Index p = center.size();
  Eigen::VectorXd dir(p);
  for (Eigen::Index d = 0; d < p; ++d) dir(d) = rng.normal();
  const double dn = dir.norm();
  const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(p));
  Eigen::VectorXd x = center;
  if (dn > 0.0) x += dir * (r / dn);
  const double dist = (x - center).norm();
  if (dist > radius) x = center + (x - center) * (radius / dist) * (1.0 - 1e-12);
  return x;
}

}  // namespace

RegionSpec::RegionSpec(std::vector<Region> regions, double epsilon,
                       std::optional<LipschitzTilt> perturbation)
    : regions_(std::move(regions)), epsilon_(epsilon), perturbation_(perturbation) {
  require(!regions_.empty(), "RegionSpec: need at least one region");
  require(std::isfinite(epsilon_) && epsilon_ >= 0.0, "RegionSpec: epsilon must be >= 0");
  const Eigen::Index p = regions_.front().center.size();
  const Eigen::Index k = regions_.front().conditional.size();
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    const Region& r = regions_[i];
    require(r.center.size() == p, "RegionSpec: inconsistent center dimension");
    require(r.center.allFinite(), "RegionSpec: non-finite center");
    require(std::isfinite(r.radius) && r.radius > 0.0, "RegionSpec: radius must be positive");
    require(r.conditional.size() == k, "RegionSpec: inconsistent class count");
    require_simplex(r.conditional, "RegionSpec: region " + std::to_string(i + 1));
    // Zero weights are allowed as degenerate mixtures; the sum constraint
    // keeps at least one region reachable.
    require(std::isfinite(r.weight) && r.weight >= 0.0, "RegionSpec: weight must be >= 0");
    weight_sum += r.weight;
  }
  require(std::abs(weight_sum - 1.0) <= kSimplexTol, "RegionSpec: weights must sum to 1");
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    for (std::size_t j = i + 1; j < regions_.size(); ++j) {
      const double dist = (regions_[i].center - regions_[j].center).norm();
      require(dist > regions_[i].radius + regions_[j].radius,
              "RegionSpec: regions " + std::to_string(i + 1) + " and " + std::to_string(j + 1) +
                  " are not disjoint");
    }
  }
  if (perturbation_) {
    require(k >= 2, "RegionSpec: tilt needs at least two classes");
    const double slope = perturbation_->slope;
    require(std::isfinite(slope) && slope >= 0.0, "RegionSpec: tilt slope must be >= 0");
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      require(4.0 * slope * regions_[i].radius <= epsilon_ * (1.0 + 1e-12),
              "RegionSpec: tilt variation exceeds epsilon in region " + std::to_string(i + 1));
    }
  }
}

Eigen::VectorXd RegionSpec::conditional_at(int region_index,
                                           const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const Region& r = regions_.at(static_cast<std::size_t>(region_index));
  Eigen::VectorXd q = r.conditional;
  if (perturbation_) {
    const double t = perturbation_->slope * (x(0) - r.center(0));
    const double lo = std::max(-q(0), q(1) - 1.0);
    const double hi = std::min(1.0 - q(0), q(1));
    const double te = std::clamp(t, lo, hi);
    q(0) += te;
    q(1) -= te;
  }
  return q;
}

int LabeledDataset::num_regions() const {
  int m = 0;
  for (int id : region_ids) m = std::max(m, id);
  return m;
}

void LabeledDataset::validate() const {
  const Eigen::Index n = inputs.rows();
  require(n >= 1, "LabeledDataset: empty");
  require(inputs.allFinite(), "LabeledDataset: non-finite inputs");
  require(static_cast<Eigen::Index>(labels.size()) == n, "LabeledDataset: label count mismatch");
  require(static_cast<Eigen::Index>(region_ids.size()) == n, "LabeledDataset: region id count mismatch");
  require(true_conditionals.rows() == n, "LabeledDataset: conditional row count mismatch");
  const Eigen::Index k = true_conditionals.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    require(labels[i] >= 0 && labels[i] < k, "LabeledDataset: label out of range at row " + std::to_string(i));
    require(region_ids[i] >= 1, "LabeledDataset: region id out of range at row " + std::to_string(i));
    require_simplex(true_conditionals.row(i).transpose(), "LabeledDataset: row " + std::to_string(i));
  }
}

void LabeledDataset::validate_against(const RegionSpec& spec) const {
  validate();
  require(inputs.cols() == spec.dim(), "LabeledDataset: dimension does not match spec");
  require(true_conditionals.cols() == spec.num_classes(), "LabeledDataset: class count does not match spec");
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    const int id = region_ids[i];
    require(id <= spec.num_regions(), "LabeledDataset: region id exceeds spec at row " + std::to_string(i));
    const Region& r = spec.regions()[static_cast<std::size_t>(id - 1)];
    const double dist = (inputs.row(i).transpose() - r.center).norm();
    require(dist <= r.radius, "LabeledDataset: sample " + std::to_string(i) + " outside its region ball");
  }
}

LabeledDataset sample_regioned(const RegionSpec& spec, Eigen::Index n, std::uint64_t seed) {
  require(n >= 1, "sample_regioned: n must be positive");
  const Eigen::Index p = spec.dim();
  const Eigen::Index k = spec.num_classes();
  Eigen::VectorXd weights(spec.num_regions());
  for (Eigen::Index i = 0; i < spec.num_regions(); ++i) weights(i) = spec.regions()[i].weight;

  LabeledDataset data;
  data.inputs.resize(n, p);
  data.labels.resize(n);
  data.region_ids.resize(n);
  data.true_conditionals.resize(n, k);

  const Rng base(seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng = base.substream(static_cast<std::uint64_t>(i));
    const int g = pick_categorical(rng.uniform(), weights);
    const Region& region = spec.regions()[static_cast<std::size_t>(g)];
    const Eigen::VectorXd x = uniform_in_ball(rng, region.center, region.radius);
    const Eigen::VectorXd q = spec.conditional_at(g, x);
    data.inputs.row(i) = x.transpose();
    data.region_ids[i] = g + 1;
    data.true_conditionals.row(i) = q.transpose();
    data.labels[i] = pick_categorical(rng.uniform(), q);
  }
  return data;
}

LabeledDataset sample_discrete(const Eigen::MatrixXd& points, const Eigen::MatrixXd& conditionals,
                               const Eigen::VectorXd& weights, Eigen::Index n, std::uint64_t seed) {
  const Eigen::Index m = points.rows();
  require(m >= 1, "sample_discrete: need at least one support point");
  require(n >= 1, "sample_discrete: n must be positive");
  require(points.allFinite(), "sample_discrete: non-finite support points");
  require(conditionals.rows() == m, "sample_discrete: one conditional per support point");
  require(weights.size() == m, "sample_discrete: one weight per support point");
  require(weights.minCoeff() >= 0.0 && std::abs(weights.sum() - 1.0) <= kSimplexTol,
          "sample_discrete: weights must be nonnegative and sum to 1");
  for (Eigen::Index i = 0; i < m; ++i) {
    require_simplex(conditionals.row(i).transpose(), "sample_discrete: point " + std::to_string(i + 1));
  }

  LabeledDataset data;
  data.inputs.resize(n, points.cols());
  data.labels.resize(n);
  data.region_ids.resize(n);
  data.true_conditionals.resize(n, conditionals.cols());

  const Rng base(seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng = base.substream(static_cast<std::uint64_t>(i));
    const int g = pick_categorical(rng.uniform(), weights);
    data.inputs.row(i) = points.row(g);
    data.region_ids[i] = g + 1;
    data.true_conditionals.row(i) = conditionals.row(g);
    data.labels[i] = pick_categorical(rng.uniform(), conditionals.row(g).transpose());
  }
  return data;
}

VariationReport within_region_variation(const LabeledDataset& data) {
  data.validate();
  const int m = data.num_regions();
  std::vector<std::vector<Eigen::Index>> groups(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    groups[static_cast<std::size_t>(data.region_ids[i] - 1)].push_back(i);
  }

  VariationReport report;
  report.per_region.assign(static_cast<std::size_t>(m), 0.0);
  bool any = false;
  for (int r = 0; r < m; ++r) {
    const auto& idx = groups[static_cast<std::size_t>(r)];
    if (idx.size() < 2) {
      report.skipped_regions.push_back(r + 1);
      continue;  // value 0 by convention
    }
    double worst = 0.0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const double v =
            (data.true_conditionals.row(idx[a]) - data.true_conditionals.row(idx[b])).cwiseAbs().sum();
        worst = std::max(worst, v);
      }
    }
    report.per_region[static_cast<std::size_t>(r)] = worst;
    report.overall = std::max(report.overall, worst);
    any = true;
  }
  require(any, "within_region_variation: need at least one region with two samples");
  return report;
}

Partition epsilon_partition(const LabeledDataset& data, double eps, double lipschitz_bound) {
  data.validate();
  require(std::isfinite(eps) && eps > 0.0, "epsilon_partition: eps must be positive");
  require(std::isfinite(lipschitz_bound) && lipschitz_bound > 0.0,
          "epsilon_partition: lipschitz_bound must be positive");

  const Eigen::Index n = data.size();
  const Eigen::Index p = data.dim();

  // One quadratic pass both verifies the Lipschitz hypothesis on the sample
  // and measures the global conditional variation.
  double global_variation = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (data.true_conditionals.row(i) - data.true_conditionals.row(j)).cwiseAbs().sum();
      const double d = (data.inputs.row(i) - data.inputs.row(j)).norm();
      require(v <= lipschitz_bound * d + 1e-9,
              "epsilon_partition: Lipschitz check failed for rows " + std::to_string(i) + " and " +
                  std::to_string(j));
      global_variation = std::max(global_variation, v);
    }
  }

  Partition part;
  part.cell_ids.assign(static_cast<std::size_t>(n), 1);
  part.box_min = data.inputs.colwise().minCoeff().transpose();
  part.box_max = data.inputs.colwise().maxCoeff().transpose();

  if (global_variation <= eps) {
    part.cell_count = 1;
    part.cell_side = 0.0;
    return part;
  }

  // Cell diameter <= eps / L, so side = (eps / L) / sqrt(p); shrunk by one
  // part in 1e12 so the within-cell bound holds under rounding too.
  const double side = (eps / lipschitz_bound) / std::sqrt(static_cast<double>(p)) * (1.0 - 1e-12);
  part.cell_side = side;

  std::vector<int> counts(static_cast<std::size_t>(p));
  for (Eigen::Index d = 0; d < p; ++d) {
    const double extent = part.box_max(d) - part.box_min(d);
    counts[static_cast<std::size_t>(d)] = std::max(1, static_cast<int>(std::ceil(extent / side)));
  }

  std::vector<std::vector<int>> keys(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<int> key(static_cast<std::size_t>(p));
    for (Eigen::Index d = 0; d < p; ++d) {
      int c = static_cast<int>(std::floor((data.inputs(i, d) - part.box_min(d)) / side));
      c = std::clamp(c, 0, counts[static_cast<std::size_t>(d)] - 1);
      key[static_cast<std::size_t>(d)] = c;
    }
    keys[static_cast<std::size_t>(i)] = std::move(key);
  }

  // Nonempty cells only, numbered in lexicographic key order.
  std::map<std::vector<int>, int> cell_of_key;
  for (const auto& key : keys) cell_of_key.emplace(key, 0);
  int next_id = 1;
  for (auto& entry : cell_of_key) entry.second = next_id++;
  for (Eigen::Index i = 0; i < n; ++i) {
    part.cell_ids[static_cast<std::size_t>(i)] = cell_of_key.at(keys[static_cast<std::size_t>(i)]);
  }
  part.cell_count = next_id - 1;
  return part;
}

}  // namespace gvn
