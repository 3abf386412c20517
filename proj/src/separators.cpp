#include "gvn/separators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "check.hpp"
#include "gvn/anchors.hpp"
#include "gvn/rng.hpp"

namespace gvn {

using detail::require;

namespace {

std::string pair_text(int i, int j) {
  return "(" + std::to_string(i + 1) + ", " + std::to_string(j + 1) + ")";
}

constexpr double kCodeTol = 1e-9;

void require_distinct_columns(const Eigen::Ref<const Eigen::MatrixXd>& m, const std::string& what) {
  for (Eigen::Index a = 0; a < m.cols(); ++a) {
    for (Eigen::Index b = a + 1; b < m.cols(); ++b) {
      require(m.col(a) != m.col(b),
              what + ": duplicate columns " + pair_text(static_cast<int>(a), static_cast<int>(b)));
    }
  }
}

// Throws when two representative codes coincide within kCodeTol.
void verify_representative_codes(const GraphLayer& layer,
                                 const Eigen::Ref<const Eigen::MatrixXd>& representatives,
                                 const std::string& what) {
  const Eigen::Index m = representatives.cols();
  Eigen::MatrixXd codes(m, layer.width());
  for (Eigen::Index i = 0; i < m; ++i) {
    codes.row(i) = layer_forward(layer, representatives.col(i)).transpose();
  }
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = a + 1; b < m; ++b) {
      if ((codes.row(a) - codes.row(b)).cwiseAbs().maxCoeff() <= kCodeTol) {
        throw CodeCollisionError(static_cast<int>(a), static_cast<int>(b),
                                 what + ": representative codes " +
                                     pair_text(static_cast<int>(a), static_cast<int>(b)) +
                                     " coincide; re-select representatives");
      }
    }
  }
}

}  // namespace

PatchConditionError::PatchConditionError(int first_, int second_, std::vector<int> shared)
    : std::invalid_argument([&] {
        std::ostringstream os;
        os << "patch condition violated for regions " << pair_text(first_, second_)
           << ": patterns agree on shared coordinates {";
        for (std::size_t i = 0; i < shared.size(); ++i) os << (i ? "," : "") << shared[i];
        os << "}";
        return os.str();
      }()),
      first(first_),
      second(second_),
      shared_coords(std::move(shared)) {}

CodeCollisionError::CodeCollisionError(int first_, int second_, const std::string& what)
    : std::invalid_argument(what), first(first_), second(second_) {}

SingularGramError::SingularGramError(double det_magnitude_)
    : std::invalid_argument("support Gram matrix is numerically singular (|det| = " +
                            std::to_string(det_magnitude_) + ")"),
      det_magnitude(det_magnitude_) {}

PatchSpec::PatchSpec(Eigen::Index ambient_dim, std::vector<Patch> patches, double noise_bound)
    : ambient_dim_(ambient_dim), patches_(std::move(patches)), noise_bound_(noise_bound) {
  require(ambient_dim_ >= 1, "PatchSpec: ambient dimension must be positive");
  require(!patches_.empty(), "PatchSpec: need at least one patch");
  require(std::isfinite(noise_bound_) && noise_bound_ >= 0.0, "PatchSpec: noise bound must be >= 0");
  for (std::size_t i = 0; i < patches_.size(); ++i) {
    const Patch& p = patches_[i];
    require(!p.coords.empty(), "PatchSpec: patch " + std::to_string(i + 1) + " has no coordinates");
    require(static_cast<Eigen::Index>(p.coords.size()) == p.pattern.size(),
            "PatchSpec: patch " + std::to_string(i + 1) + " pattern length mismatch");
    require(p.pattern.allFinite(), "PatchSpec: patch " + std::to_string(i + 1) + " non-finite pattern");
    require(p.pattern.norm() > 0.0, "PatchSpec: patch " + std::to_string(i + 1) + " pattern must be nonzero");
    for (std::size_t c = 0; c < p.coords.size(); ++c) {
      require(p.coords[c] >= 0 && p.coords[c] < ambient_dim_,
              "PatchSpec: patch " + std::to_string(i + 1) + " coordinate out of range");
      if (c > 0) {
        require(p.coords[c] > p.coords[c - 1],
                "PatchSpec: patch " + std::to_string(i + 1) + " coordinates must be sorted and unique");
      }
    }
  }
  // Patch condition on every overlapping pair.
  for (std::size_t i = 0; i < patches_.size(); ++i) {
    for (std::size_t j = i + 1; j < patches_.size(); ++j) {
      std::vector<int> shared;
      bool disagree = false;
      const Patch& a = patches_[i];
      const Patch& b = patches_[j];
      for (std::size_t ca = 0; ca < a.coords.size(); ++ca) {
        const auto it = std::lower_bound(b.coords.begin(), b.coords.end(), a.coords[ca]);
        if (it != b.coords.end() && *it == a.coords[ca]) {
          shared.push_back(a.coords[ca]);
          const auto cb = static_cast<Eigen::Index>(it - b.coords.begin());
          if (a.pattern(static_cast<Eigen::Index>(ca)) != b.pattern(cb)) disagree = true;
        }
      }
      if (!shared.empty() && !disagree) {
        throw PatchConditionError(static_cast<int>(i), static_cast<int>(j), std::move(shared));
      }
    }
  }
}

PatchSpec PatchSpec::with_noise_bound(double noise_bound) const {
  return PatchSpec(ambient_dim_, patches_, noise_bound);
}

GraphLayer construct_discrete_separator(const Eigen::Ref<const Eigen::MatrixXd>& support_points) {
  require(support_points.cols() >= 1, "construct_discrete_separator: need at least one support point");
  require(support_points.allFinite(), "construct_discrete_separator: non-finite support");
  require_distinct_columns(support_points, "construct_discrete_separator");
  const GeneralPositionResult gp = check_general_position(support_points);
  if (!gp.ok) throw SingularGramError(gp.gram_det_magnitude);
  return GraphLayer(support_points, Eigen::VectorXd::Zero(support_points.cols()),
                    PairwiseFunction::inner_product(), Activation::Identity);
}

GraphLayer construct_linear_separator(const Eigen::Ref<const Eigen::MatrixXd>& representatives) {
  require(representatives.cols() >= 1, "construct_linear_separator: need at least one representative");
  require(representatives.allFinite(), "construct_linear_separator: non-finite representatives");
  require_distinct_columns(representatives, "construct_linear_separator");
  Eigen::VectorXd bias(representatives.cols());
  for (Eigen::Index j = 0; j < representatives.cols(); ++j) {
    bias(j) = -representatives.col(j).squaredNorm();
  }
  GraphLayer layer(representatives, bias, PairwiseFunction::inner_product(), Activation::Identity);
  verify_representative_codes(layer, representatives, "construct_linear_separator");
  return layer;
}

GraphLayer construct_relu_separator(const Eigen::Ref<const Eigen::MatrixXd>& representatives,
                                    ReluBiasMode mode) {
  require(representatives.cols() >= 1, "construct_relu_separator: need at least one representative");
  require(representatives.allFinite(), "construct_relu_separator: non-finite representatives");
  require_distinct_columns(representatives, "construct_relu_separator");
  const double scale = mode == ReluBiasMode::HalfSquaredNorm ? 0.5 : 1.0;
  Eigen::VectorXd bias(representatives.cols());
  for (Eigen::Index j = 0; j < representatives.cols(); ++j) {
    bias(j) = -scale * representatives.col(j).squaredNorm();
  }
  GraphLayer layer(representatives, bias, PairwiseFunction::inner_product(), Activation::ReLU);
  verify_representative_codes(layer, representatives, "construct_relu_separator");
  return layer;
}

GraphLayer construct_conv_separator(const PatchSpec& spec) {
  const Eigen::Index p = spec.ambient_dim();
  const Eigen::Index m = spec.num_regions();
  Eigen::MatrixXd anchors = Eigen::MatrixXd::Zero(p, m);
  Eigen::VectorXd bias(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Patch& patch = spec.patches()[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < patch.coords.size(); ++c) {
      anchors(patch.coords[c], i) = patch.pattern(static_cast<Eigen::Index>(c));
    }
    bias(i) = -0.5 * patch.pattern.squaredNorm();
  }
  return GraphLayer(std::move(anchors), std::move(bias), PairwiseFunction::inner_product(),
                    Activation::ReLU);
}

MarginReport conv_pair_margin(const PatchSpec& spec, const LabeledDataset& data,
                              const Eigen::Ref<const Eigen::MatrixXd>& codes) {
  data.validate();
  const Eigen::Index m = spec.num_regions();
  require(data.num_regions() <= m, "conv_pair_margin: dataset region ids exceed the patch spec");
  require(codes.rows() == data.size(), "conv_pair_margin: codes/data row mismatch");
  require(codes.cols() == m, "conv_pair_margin: codes must have one column per region");

  // Per-region extremes of each detector coordinate.
  Eigen::MatrixXd coord_min = Eigen::MatrixXd::Constant(m, m, std::numeric_limits<double>::infinity());
  Eigen::MatrixXd coord_max = Eigen::MatrixXd::Constant(m, m, -std::numeric_limits<double>::infinity());
  for (Eigen::Index s = 0; s < data.size(); ++s) {
    const Eigen::Index g = data.region_ids[static_cast<std::size_t>(s)] - 1;
    for (Eigen::Index i = 0; i < m; ++i) {
      coord_min(g, i) = std::min(coord_min(g, i), codes(s, i));
      coord_max(g, i) = std::max(coord_max(g, i), codes(s, i));
    }
  }

  const double delta = spec.noise_bound();
  MarginReport report;
  report.noise_bound = delta;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Patch& pi = spec.patches()[static_cast<std::size_t>(i)];
    const double norm_i = pi.pattern.norm();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      const Patch& pj = spec.patches()[static_cast<std::size_t>(j)];
      // Worst-case inner product of a region-j input against detector i:
      // the overlap is pinned to pattern j, the rest of patch i ranges over
      // [0, 1].
      double worst = 0.0;
      for (std::size_t c = 0; c < pi.coords.size(); ++c) {
        const double v = pi.pattern(static_cast<Eigen::Index>(c));
        const auto it = std::lower_bound(pj.coords.begin(), pj.coords.end(), pi.coords[c]);
        if (it != pj.coords.end() && *it == pi.coords[c]) {
          worst += v * pj.pattern(static_cast<Eigen::Index>(it - pj.coords.begin()));
        } else {
          worst += std::max(0.0, v);
        }
      }
      PairMargin pm;
      pm.i = static_cast<int>(i);
      pm.j = static_cast<int>(j);
      pm.gap = pi.pattern.squaredNorm() - worst;
      pm.gamma = pm.gap - 2.0 * delta * norm_i;
      // The detector's own coordinate sits at ||x_i||^2/2 - delta ||x_i|| or
      // above, while region-j inputs sit gamma below it before clipping;
      // once ReLU clips the contrast to zero the realized separation is the
      // own-coordinate bound itself.
      const double own_floor = 0.5 * pi.pattern.squaredNorm() - delta * norm_i;
      pm.margin = std::min(pm.gamma, own_floor);
      pm.guaranteed = pm.margin > 0.0;
      const bool have_samples = std::isfinite(coord_min(i, i)) && std::isfinite(coord_max(j, i));
      pm.empirical_min_margin = have_samples ? coord_min(i, i) - coord_max(j, i)
                                             : std::numeric_limits<double>::quiet_NaN();
      report.pairs.push_back(pm);
    }
  }
  return report;
}

ConvShape conv_output_shape(int height, int width, int kernel_h, int kernel_w, int stride, int padding) {
  require(height >= 1 && width >= 1 && kernel_h >= 1 && kernel_w >= 1 && stride >= 1,
          "conv_output_shape: sizes and stride must be positive");
  require(padding >= 0, "conv_output_shape: padding must be >= 0");
  require(height + 2 * padding >= kernel_h && width + 2 * padding >= kernel_w,
          "conv_output_shape: kernel larger than padded input");
  ConvShape shape;
  shape.height = (height - kernel_h + 2 * padding) / stride + 1;
  shape.width = (width - kernel_w + 2 * padding) / stride + 1;
  return shape;
}

LabeledDataset sample_patched(const PatchSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& conditionals,
                              const Eigen::Ref<const Eigen::VectorXd>& weights, Eigen::Index n,
                              std::uint64_t seed) {
  const Eigen::Index m = spec.num_regions();
  require(n >= 1, "sample_patched: n must be positive");
  require(conditionals.rows() == m, "sample_patched: one conditional per region");
  require(weights.size() == m, "sample_patched: one weight per region");
  require(weights.minCoeff() >= 0.0 && std::abs(weights.sum() - 1.0) <= 1e-12,
          "sample_patched: weights must be nonnegative and sum to 1");
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd q = conditionals.row(i).transpose();
    require(q.minCoeff() >= 0.0 && std::abs(q.sum() - 1.0) <= 1e-12,
            "sample_patched: conditional " + std::to_string(i + 1) + " must be a probability vector");
    const Eigen::VectorXd& pat = spec.patches()[static_cast<std::size_t>(i)].pattern;
    require(pat.minCoeff() >= 0.0 && pat.maxCoeff() <= 1.0,
            "sample_patched: patterns must lie in [0,1] so inputs stay in the unit box");
  }

  const Eigen::Index p = spec.ambient_dim();
  const double delta = spec.noise_bound();

  LabeledDataset data;
  data.inputs.resize(n, p);
  data.labels.resize(n);
  data.region_ids.resize(n);
  data.true_conditionals.resize(n, conditionals.cols());

  const Rng base(seed);
  for (Eigen::Index s = 0; s < n; ++s) {
    Rng rng = base.substream(static_cast<std::uint64_t>(s));
    double acc = 0.0;
    int g = static_cast<int>(m) - 1;
    const double u = rng.uniform();
    for (Eigen::Index i = 0; i < m; ++i) {
      acc += weights(i);
      if (u < acc) {
        g = static_cast<int>(i);
        break;
      }
    }
    const Patch& patch = spec.patches()[static_cast<std::size_t>(g)];

    Eigen::VectorXd x(p);
    for (Eigen::Index d = 0; d < p; ++d) x(d) = rng.uniform();
    if (delta == 0.0) {
      for (std::size_t c = 0; c < patch.coords.size(); ++c) {
        x(patch.coords[c]) = patch.pattern(static_cast<Eigen::Index>(c));
      }
    } else {
      const Eigen::Index w = static_cast<Eigen::Index>(patch.coords.size());
      Eigen::VectorXd dir(w);
      for (Eigen::Index d = 0; d < w; ++d) dir(d) = rng.normal();
      const double dn = dir.norm();
      const double r = delta * std::pow(rng.uniform(), 1.0 / static_cast<double>(w));
      Eigen::VectorXd noisy = patch.pattern;
      if (dn > 0.0) noisy += dir * (r / dn);
      // Clamping projects onto [0,1]^w, which cannot increase the distance
      // to a pattern that already lies in the box.
      for (std::size_t c = 0; c < patch.coords.size(); ++c) {
        x(patch.coords[c]) = std::clamp(noisy(static_cast<Eigen::Index>(c)), 0.0, 1.0);
      }
    }

    const Eigen::VectorXd q = conditionals.row(g).transpose();
    double lacc = 0.0;
    int label = static_cast<int>(q.size()) - 1;
    const double lu = rng.uniform();
    for (Eigen::Index c = 0; c < q.size(); ++c) {
      lacc += q(c);
      if (lu < lacc) {
        label = static_cast<int>(c);
        break;
      }
    }

    data.inputs.row(s) = x.transpose();
    data.labels[s] = label;
    data.region_ids[s] = g + 1;
    data.true_conditionals.row(s) = q.transpose();
  }
  return data;
}

}  // namespace gvn
