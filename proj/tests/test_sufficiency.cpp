#include <doctest.h>

#include <cmath>

#include "gvn/anchors.hpp"
#include "gvn/rng.hpp"
#include "gvn/sufficiency.hpp"

using namespace gvn;

namespace {

// Two pure regions with identical (collapsed) codes: n/2 samples per class.
LabeledDataset collapsed_two_region_data(Eigen::Index n) {
  LabeledDataset data;
  data.inputs.resize(n, 1);
  data.labels.resize(static_cast<std::size_t>(n));
  data.region_ids.resize(static_cast<std::size_t>(n));
  data.true_conditionals = Eigen::MatrixXd::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int region = i < n / 2 ? 0 : 1;
    data.inputs(i, 0) = region == 0 ? -1.0 : 1.0;
    data.labels[static_cast<std::size_t>(i)] = region;
    data.region_ids[static_cast<std::size_t>(i)] = region + 1;
    data.true_conditionals(i, region) = 1.0;
  }
  return data;
}

Eigen::MatrixXd random_codes(Rng& rng, Eigen::Index n, Eigen::Index d) {
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  }
  return m;
}

}  // namespace

TEST_CASE("collision_report basics") {
  Eigen::MatrixXd dup(2, 2);
  dup << 0, 1, 0, 1;
  const CollisionReport one = collision_report(CodeMatrix(dup, "dup"), 1e-9);
  CHECK(one.pair_count == 1);
  REQUIRE(one.sample_pairs.size() == 1);
  CHECK(one.sample_pairs[0] == std::pair<int, int>{0, 1});
  CHECK(one.min_nonzero_distance == 0.0);  // the only pair is exactly equal

  const CollisionReport none = collision_report(CodeMatrix(Eigen::MatrixXd::Identity(4, 4), "im"), 1e-9);
  CHECK(none.pair_count == 0);
  CHECK(none.min_nonzero_distance == 1.0);

  CHECK_THROWS_AS(collision_report(CodeMatrix(Eigen::MatrixXd::Ones(1, 1), "tiny"), 1e-9),
                  std::invalid_argument);
  CHECK_THROWS_AS(collision_report(CodeMatrix(dup, "dup"), 0.0), std::invalid_argument);
}

TEST_CASE("collision_report pairs are verified within tolerance") {
  Rng rng(90);
  Eigen::MatrixXd codes = random_codes(rng, 40, 3);
  codes.row(7) = codes.row(31);
  codes.row(12) = codes.row(3);
  const CollisionReport report = collision_report(CodeMatrix(codes, "planted"), 1e-9);
  CHECK(report.pair_count == 2);
  for (const auto& [i, j] : report.sample_pairs) {
    CHECK((codes.row(i) - codes.row(j)).cwiseAbs().maxCoeff() <= report.tolerance);
  }
  CHECK(count_collisions(codes, 1e-9) == report.pair_count);
}

TEST_CASE("inner-product codes with full-rank anchors have no collisions") {
  Rng rng(91);
  const Eigen::Index n = 2000;
  Eigen::MatrixXd inputs = random_codes(rng, n, 3);
  Eigen::MatrixXd anchors(3, 3);
  do {
    anchors = random_codes(rng, 3, 3);
  } while (!check_general_position(anchors).ok);
  const Eigen::MatrixXd codes = inputs * anchors;
  CHECK(count_collisions(codes, 1e-9) == 0);
}

TEST_CASE("dropping a code column never decreases collisions") {
  Rng rng(92);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd codes = random_codes(rng, 30, 3);
    // Quantize roughly so collisions actually occur.
    codes = (codes * 2.0).array().round().matrix();
    const long long full = count_collisions(codes, 1e-9);
    const long long reduced = count_collisions(codes.leftCols(2), 1e-9);
    CHECK(reduced >= full);
  }
}

TEST_CASE("region_separation_report") {
  // All codes equal within one region: nothing to report.
  Eigen::MatrixXd same = Eigen::MatrixXd::Zero(5, 2);
  const SeparationReport solo =
      region_separation_report(CodeMatrix(same, "same"), std::vector<int>(5, 1));
  CHECK(solo.cross_region_collisions == 0);
  CHECK(solo.cross_region_pairs == 0);
  CHECK(solo.fraction == 0.0);

  // Total collapse across two regions counts n1 * n2 pairs.
  std::vector<int> regions = {1, 1, 1, 2, 2};
  const SeparationReport collapse = region_separation_report(CodeMatrix(same, "same"), regions);
  CHECK(collapse.cross_region_collisions == 6);
  CHECK(collapse.cross_region_pairs == 6);
  CHECK(collapse.fraction == 1.0);

  // Within-region collisions are permitted and not counted.
  Eigen::MatrixXd partial(4, 1);
  partial << 0, 0, 1, 1;
  const SeparationReport ok =
      region_separation_report(CodeMatrix(partial, "blocks"), std::vector<int>{1, 1, 2, 2});
  CHECK(ok.cross_region_collisions == 0);
  CHECK(ok.cross_region_pairs == 4);
}

TEST_CASE("estimate_conditional basics") {
  Eigen::MatrixXd codes(4, 1);
  codes << 0.0, 1.0, 2.0, 3.0;
  const std::vector<int> labels = {0, 1, 1, 0};

  // k = n reproduces the global frequencies everywhere.
  const ConditionalEstimator global = estimate_conditional(CodeMatrix(codes, "line"), labels, 2, 4);
  Eigen::VectorXd anywhere(1);
  anywhere << -7.5;
  CHECK(global.posterior(anywhere)(0) == 0.5);
  CHECK(global.posterior(anywhere)(1) == 0.5);

  // k = 1 at a stored code returns that label one-hot.
  const ConditionalEstimator nearest = estimate_conditional(CodeMatrix(codes, "line"), labels, 2, 1);
  Eigen::VectorXd at_two(1);
  at_two << 2.0;
  CHECK(nearest.posterior(at_two)(1) == 1.0);

  CHECK_THROWS_AS(estimate_conditional(CodeMatrix(codes, "line"), labels, 2, 5), std::invalid_argument);
}

TEST_CASE("collapsed codes mix the regions evenly") {
  const LabeledDataset data = collapsed_two_region_data(40);
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(40, 1);
  const ConditionalEstimator est =
      estimate_conditional(CodeMatrix(flat, "flat"), data.labels, 2, 40);
  Eigen::VectorXd q(1);
  q << 0.0;
  const Eigen::VectorXd posterior = est.posterior(q);
  CHECK(posterior(0) == 0.5);
  CHECK(posterior(1) == 0.5);
}

TEST_CASE("estimator output stays on the simplex") {
  Rng rng(93);
  const Eigen::MatrixXd codes = random_codes(rng, 50, 2);
  std::vector<int> labels(50);
  for (auto& label : labels) label = static_cast<int>(rng.index(3));
  const ConditionalEstimator est = estimate_conditional(CodeMatrix(codes, "r"), labels, 3, 7);
  for (int trial = 0; trial < 25; ++trial) {
    Eigen::VectorXd q(2);
    q << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    const Eigen::VectorXd posterior = est.posterior(q);
    CHECK(posterior.minCoeff() >= 0.0);
    CHECK(std::abs(posterior.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("distance ties break toward lower row indices") {
  Eigen::MatrixXd codes(4, 1);
  codes << 0.0, 0.0, 0.0, 0.0;
  const std::vector<int> labels = {1, 0, 0, 0};
  // k = 1 on duplicated codes must pick row 0.
  const ConditionalEstimator est = estimate_conditional(CodeMatrix(codes, "ties"), labels, 2, 1);
  Eigen::VectorXd q(1);
  q << 0.0;
  CHECK(est.posterior(q)(1) == 1.0);

  // Leave-one-out at row 0 must pick row 1 instead.
  const Eigen::MatrixXd loo = est.posterior_loo();
  CHECK(loo(0, 0) == 1.0);
}

TEST_CASE("sufficiency_gap: raw codes equal the noise floor bitwise") {
  const LabeledDataset data = collapsed_two_region_data(60);
  const GapReport report = sufficiency_gap(data, CodeMatrix(data.inputs, "raw"), 7);
  CHECK(report.l2_gap == report.noise_floor);
  CHECK(report.n == 60);
  CHECK(report.k == 7);
}

TEST_CASE("sufficiency_gap on totally collapsed codes matches the closed form") {
  const Eigen::Index n = 2000;
  const LabeledDataset data = collapsed_two_region_data(n);
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(n, 1);
  const int k = static_cast<int>(n) - 1;
  const GapReport report = sufficiency_gap(data, CodeMatrix(flat, "flat"), k);
  // Leave-one-out with k = n - 1: the estimate at any sample is
  // ((n/2 - 1)/(n-1), (n/2)/(n-1)) against a one-hot truth, so the l2 gap
  // is sqrt(2) * (n/2) / (n-1) -> sqrt(0.5).
  const double expected = std::sqrt(2.0) * (static_cast<double>(n) / 2.0) / static_cast<double>(n - 1);
  CHECK(std::abs(report.l2_gap - expected) <= 1e-12);
  CHECK(report.l2_gap == doctest::Approx(std::sqrt(0.5)).epsilon(1e-3));
}

TEST_CASE("pure separated regions push the tv gap to zero") {
  const LabeledDataset data = collapsed_two_region_data(200);
  // Inputs themselves separate the regions; with k below the group size
  // every neighborhood is pure.
  const GapReport report = sufficiency_gap(data, CodeMatrix(data.inputs, "raw"), 50);
  CHECK(report.max_tv_gap == 0.0);
  CHECK(report.l2_gap == 0.0);
}

TEST_CASE("sufficiency_gap determinism") {
  Rng rng(94);
  const Eigen::Index n = 300;
  LabeledDataset data = collapsed_two_region_data(n);
  data.inputs = random_codes(rng, n, 2);
  const Eigen::MatrixXd codes = random_codes(rng, n, 3);
  const GapReport a = sufficiency_gap(data, CodeMatrix(codes, "z"), 17);
  const GapReport b = sufficiency_gap(data, CodeMatrix(codes, "z"), 17);
  CHECK(a.l2_gap == b.l2_gap);
  CHECK(a.max_tv_gap == b.max_tv_gap);
  CHECK(a.noise_floor == b.noise_floor);
}

TEST_CASE("injective codes keep the gap at the estimation floor") {
  Rng rng(95);
  const Eigen::Index n = 600;
  LabeledDataset data;
  data.inputs.resize(n, 2);
  data.labels.resize(static_cast<std::size_t>(n));
  data.region_ids.resize(static_cast<std::size_t>(n));
  data.true_conditionals = Eigen::MatrixXd::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int region = static_cast<int>(rng.index(2));
    data.inputs(i, 0) = rng.uniform(0.0, 1.0) + (region == 0 ? 0.0 : 1.4);
    data.inputs(i, 1) = rng.uniform(0.0, 1.0);
    const double q0 = region == 0 ? 0.9 : 0.15;
    data.true_conditionals(i, 0) = q0;
    data.true_conditionals(i, 1) = 1.0 - q0;
    data.labels[static_cast<std::size_t>(i)] = rng.uniform() < q0 ? 0 : 1;
    data.region_ids[static_cast<std::size_t>(i)] = region + 1;
  }
  // A full-rank linear map of the inputs is injective, so its gap is pure
  // estimation noise: within a factor of two of the floor.
  Eigen::MatrixXd mix(2, 2);
  mix << 1.0, 0.25, -0.5, 1.25;
  const Eigen::MatrixXd codes = data.inputs * mix;
  const GapReport report = sufficiency_gap(data, CodeMatrix(codes, "mix"), 24);
  CHECK(count_collisions(codes, 1e-9) == 0);
  CHECK(std::abs(report.l2_gap - report.noise_floor) <= report.noise_floor);
}

TEST_CASE("default_neighbor_count") {
  CHECK(default_neighbor_count(100) == 10);
  CHECK(default_neighbor_count(101) == 11);
  CHECK(default_neighbor_count(5000) == 71);
  CHECK(default_neighbor_count(1) == 1);
}
