#include "gvn/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "check.hpp"
#include "gvn/anchors.hpp"
#include "gvn/graph_layer.hpp"
#include "gvn/io.hpp"
#include "gvn/regions.hpp"
#include "gvn/rng.hpp"
#include "gvn/separators.hpp"
#include "gvn/sufficiency.hpp"

namespace gvn {

using detail::require;
using nlohmann::json;

namespace {

// Substream ids so the per-stage generators are decoupled from each other.
constexpr std::uint64_t kStreamData = 1;
constexpr std::uint64_t kStreamLayer = 2;
constexpr std::uint64_t kStreamReadout = 3;

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (!path.empty() && path.front() == '/') return path;
  return base_dir.empty() ? path : base_dir + "/" + path;
}

Eigen::MatrixXd matrix_from_rows(const json& rows, const std::string& what) {
  require(rows.is_array() && !rows.empty(), what + ": expected a nonempty array of rows");
  const std::size_t cols = rows[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].is_array() && rows[i].size() == cols, what + ": ragged rows");
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_array(const json& arr, const std::string& what) {
  require(arr.is_array(), what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  return v;
}

// --------------------------------------------------------------------------
// Data sources
// --------------------------------------------------------------------------

LabeledDataset uniform_box_dataset(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  require(n >= 1 && p >= 1, "uniform_box: n and p must be positive");
  LabeledDataset data;
  data.inputs.resize(n, p);
  data.labels.assign(static_cast<std::size_t>(n), 0);
  data.region_ids.assign(static_cast<std::size_t>(n), 1);
  data.true_conditionals = Eigen::MatrixXd::Ones(n, 1);
  const Rng base(seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng = base.substream(static_cast<std::uint64_t>(i));
    for (Eigen::Index d = 0; d < p; ++d) data.inputs(i, d) = rng.uniform();
  }
  return data;
}

struct DataContext {
  LabeledDataset data;
  std::optional<RegionSpec> region_spec;
  std::optional<PatchSpec> patch_spec;
};

DataContext build_data(const json& src, const std::string& base_dir, std::uint64_t seed) {
  require(src.is_object(), "data: expected an object");
  if (src.contains("path")) {
    const std::string path = resolve(base_dir, src.at("path").get<std::string>());
    return {dataset_from_csv(read_text_file(path)), std::nullopt, std::nullopt};
  }
  const auto n = src.at("n").get<Eigen::Index>();
  if (src.contains("region_spec")) {
    RegionSpec spec = region_spec_from_json(
        read_text_file(resolve(base_dir, src.at("region_spec").get<std::string>())));
    LabeledDataset data = sample_regioned(spec, n, seed);
    return {std::move(data), std::move(spec), std::nullopt};
  }
  if (src.contains("patch_spec")) {
    PatchSpec spec =
        patch_spec_from_json(read_text_file(resolve(base_dir, src.at("patch_spec").get<std::string>())));
    if (src.contains("delta")) spec = spec.with_noise_bound(src.at("delta").get<double>());
    const Eigen::MatrixXd conditionals = matrix_from_rows(src.at("conditionals"), "data conditionals");
    const Eigen::VectorXd weights = vector_from_array(src.at("weights"), "data weights");
    LabeledDataset data = sample_patched(spec, conditionals, weights, n, seed);
    return {std::move(data), std::nullopt, std::move(spec)};
  }
  if (src.contains("discrete")) {
    const json& dj = src.at("discrete");
    const Eigen::MatrixXd points = matrix_from_rows(dj.at("points"), "discrete points");
    const Eigen::MatrixXd conditionals = matrix_from_rows(dj.at("conditionals"), "discrete conditionals");
    const Eigen::VectorXd weights = vector_from_array(dj.at("weights"), "discrete weights");
    return {sample_discrete(points, conditionals, weights, n, seed), std::nullopt, std::nullopt};
  }
  if (src.contains("uniform_box")) {
    const auto p = src.at("uniform_box").at("p").get<Eigen::Index>();
    return {uniform_box_dataset(n, p, seed), std::nullopt, std::nullopt};
  }
  throw std::invalid_argument("data: unknown source");
}

// --------------------------------------------------------------------------
// Layer sources
// --------------------------------------------------------------------------

Eigen::MatrixXd representatives_from(const json& spec, const std::string& /*base_dir*/,
                                     const DataContext& ctx) {
  const json& reps = spec.at("representatives");
  if (reps.is_string()) {
    const std::string which = reps.get<std::string>();
    require(which == "region_centers", "layer: unknown representatives source '" + which + "'");
    require(ctx.region_spec.has_value(), "layer: region_centers needs a region_spec data source");
    const auto& regions = ctx.region_spec->regions();
    Eigen::MatrixXd c(ctx.region_spec->dim(), static_cast<Eigen::Index>(regions.size()));
    for (std::size_t i = 0; i < regions.size(); ++i) c.col(static_cast<Eigen::Index>(i)) = regions[i].center;
    return c;
  }
  return matrix_from_rows(reps, "layer representatives").transpose();  // rows in config, columns internally
}

// Support points recovered from a discrete dataset: the input row of the
// first sample seen in each region.
Eigen::MatrixXd support_from_data(const LabeledDataset& data) {
  const int m = data.num_regions();
  Eigen::MatrixXd support(data.dim(), m);
  std::vector<bool> seen(static_cast<std::size_t>(m), false);
  int found = 0;
  for (Eigen::Index i = 0; i < data.size() && found < m; ++i) {
    const int g = data.region_ids[static_cast<std::size_t>(i)] - 1;
    if (!seen[static_cast<std::size_t>(g)]) {
      seen[static_cast<std::size_t>(g)] = true;
      support.col(g) = data.inputs.row(i).transpose();
      ++found;
    }
  }
  require(found == m, "layer: some regions have no samples to take support points from");
  return support;
}

ReluBiasMode bias_mode_from(const json& spec) {
  const std::string mode = spec.value("bias_mode", "half_norm");
  if (mode == "half_norm") return ReluBiasMode::HalfSquaredNorm;
  if (mode == "full_norm") return ReluBiasMode::FullSquaredNorm;
  throw std::invalid_argument("layer: unknown bias_mode '" + mode + "'");
}

// Prototype input for a patch region: the pattern on its coordinates, 0.5
// elsewhere.
Eigen::MatrixXd patch_prototypes(const PatchSpec& spec) {
  Eigen::MatrixXd protos(spec.ambient_dim(), spec.num_regions());
  protos.setConstant(0.5);
  for (Eigen::Index i = 0; i < spec.num_regions(); ++i) {
    const Patch& patch = spec.patches()[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < patch.coords.size(); ++c) {
      protos(patch.coords[c], i) = patch.pattern(static_cast<Eigen::Index>(c));
    }
  }
  return protos;
}

struct BuiltModel {
  std::vector<GraphLayer> layers;        // one entry for a single layer, more for a network
  std::optional<Eigen::MatrixXd> support;  // discrete separator support points
  std::optional<PatchSpec> patch_spec;     // conv separator source
  std::string provenance;
};

GraphLayer build_single_layer(const json& spec, const std::string& base_dir, const DataContext& ctx,
                              std::uint64_t seed, BuiltModel& model, RunOutcome& outcome) {
  if (spec.contains("iid_anchors")) {
    const json& aj = spec.at("iid_anchors");
    const auto m = aj.at("m").get<Eigen::Index>();
    const Eigen::MatrixXd anchors = sample_anchors_iid(ctx.data.inputs, m, seed);
    if (aj.value("require_general_position", false)) {
      const GeneralPositionResult gp = check_general_position(anchors);
      outcome.metrics["anchor_gram_det"] = gp.gram_det_magnitude;
      if (!gp.ok) outcome.failures.push_back("anchors failed the general-position check");
    }
    const std::string pw = aj.value("pairwise", "inner_product");
    PairwiseFunction fn = PairwiseFunction::inner_product();
    if (pw == "gaussian_kernel") {
      fn = PairwiseFunction::gaussian_kernel(aj.at("bandwidth").get<double>());
    } else {
      require(pw == "inner_product", "layer: unsupported pairwise '" + pw + "' for iid anchors");
    }
    const std::string act = aj.value("activation", "identity");
    const Activation activation =
        act == "relu" ? Activation::ReLU : (act == "sigmoid" ? Activation::Sigmoid : Activation::Identity);
    model.provenance = "iid_anchors(m=" + std::to_string(m) + ", " + pw + ", " + act + ")";
    return GraphLayer(anchors, Eigen::VectorXd::Zero(m), fn, activation);
  }

  const std::string kind = spec.at("separator").get<std::string>();
  if (kind == "discrete") {
    Eigen::MatrixXd support;
    if (spec.at("support").is_string()) {
      require(spec.at("support").get<std::string>() == "data_points",
              "layer: unknown support source");
      support = support_from_data(ctx.data);
    } else {
      support = matrix_from_rows(spec.at("support"), "layer support").transpose();
    }
    model.support = support;
    model.provenance = "discrete_separator(m=" + std::to_string(support.cols()) + ")";
    return construct_discrete_separator(support);
  }
  if (kind == "linear") {
    const Eigen::MatrixXd reps = representatives_from(spec, base_dir, ctx);
    model.provenance = "linear_separator(m=" + std::to_string(reps.cols()) + ")";
    return construct_linear_separator(reps);
  }
  if (kind == "relu") {
    const Eigen::MatrixXd reps = representatives_from(spec, base_dir, ctx);
    model.provenance = "relu_separator(m=" + std::to_string(reps.cols()) + ")";
    return construct_relu_separator(reps, bias_mode_from(spec));
  }
  if (kind == "conv") {
    PatchSpec pspec = ctx.patch_spec.has_value()
                          ? *ctx.patch_spec
                          : patch_spec_from_json(read_text_file(
                                resolve(base_dir, spec.at("patch_spec").get<std::string>())));
    model.patch_spec = pspec;
    model.provenance = "conv_separator(m=" + std::to_string(pspec.num_regions()) + ")";
    return construct_conv_separator(pspec);
  }
  throw std::invalid_argument("layer: unknown separator '" + kind + "'");
}

BuiltModel build_model(const json& spec, const std::string& base_dir, const DataContext& ctx,
                       std::uint64_t seed, RunOutcome& outcome) {
  BuiltModel model;
  if (spec.contains("network")) {
    const json& nj = spec.at("network");
    PatchSpec pspec = ctx.patch_spec.has_value()
                          ? *ctx.patch_spec
                          : patch_spec_from_json(read_text_file(
                                resolve(base_dir, nj.at("conv_patch_spec").get<std::string>())));
    model.patch_spec = pspec;
    GraphLayer conv = construct_conv_separator(pspec);
    require(nj.value("linear_over_code_prototypes", false),
            "layer: network source currently composes a conv separator with a linear separator over "
            "its code prototypes");
    const Eigen::MatrixXd protos = patch_prototypes(pspec);
    Eigen::MatrixXd code_reps(conv.width(), pspec.num_regions());
    for (Eigen::Index i = 0; i < pspec.num_regions(); ++i) {
      code_reps.col(i) = layer_forward(conv, protos.col(i));
    }
    GraphLayer linear = construct_linear_separator(code_reps);
    model.layers.push_back(std::move(conv));
    model.layers.push_back(std::move(linear));
    model.provenance = "conv_separator + linear_separator(code prototypes)";
    return model;
  }
  model.layers.push_back(build_single_layer(spec, base_dir, ctx, seed, model, outcome));
  return model;
}

// --------------------------------------------------------------------------
// Assertions
// --------------------------------------------------------------------------

void assert_le(RunOutcome& outcome, const std::string& metric, double value, double bound) {
  outcome.metrics[metric] = value;
  if (!(value <= bound)) {
    std::ostringstream os;
    os << metric << " = " << value << " exceeds " << bound;
    outcome.failures.push_back(os.str());
  }
}

double median(std::vector<double> values) {
  require(!values.empty(), "median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// --------------------------------------------------------------------------
// Pipelines
// --------------------------------------------------------------------------

void run_generate(const json& cfg, const std::string& base_dir, const std::string& out_dir,
                  std::uint64_t seed, RunOutcome& outcome) {
  const DataContext ctx = build_data(cfg.at("data"), base_dir, Rng(seed).substream(kStreamData).seed());
  const std::string path = out_dir + "/dataset.csv";
  write_text_file(path, dataset_to_csv(ctx.data));
  outcome.artifacts.push_back(path);
  outcome.metrics["n"] = static_cast<double>(ctx.data.size());
  outcome.metrics["p"] = static_cast<double>(ctx.data.dim());
  outcome.metrics["num_classes"] = static_cast<double>(ctx.data.num_classes());
  outcome.metrics["num_regions"] = static_cast<double>(ctx.data.num_regions());
}

void run_construct(const json& cfg, const std::string& base_dir, const std::string& out_dir,
                   std::uint64_t seed, RunOutcome& outcome) {
  DataContext ctx;  // construct does not sample data; sources needing data are rejected below
  const json& spec = cfg.at("layer");
  require(!spec.contains("iid_anchors"), "construct: iid_anchors needs a dataset; use train or evaluate");
  if (spec.contains("separator") && spec.at("separator") == "discrete") {
    require(!spec.at("support").is_string(), "construct: support must be inline points");
  }
  BuiltModel model = build_model(spec, base_dir, ctx, seed, outcome);
  if (model.layers.size() == 1) {
    const std::string path = out_dir + "/layer.json";
    write_text_file(path, layer_to_json(model.layers.front()));
    outcome.artifacts.push_back(path);
    outcome.metrics["m"] = static_cast<double>(model.layers.front().width());
    outcome.metrics["input_dim"] = static_cast<double>(model.layers.front().input_dim());
  } else {
    const std::string path = out_dir + "/network.json";
    write_text_file(path, network_to_json(Network(model.layers)));
    outcome.artifacts.push_back(path);
    outcome.metrics["depth"] = static_cast<double>(model.layers.size());
  }
}

void run_train(const json& cfg, const std::string& base_dir, const std::string& out_dir,
               std::uint64_t seed, RunOutcome& outcome) {
  const Rng base(seed);
  const DataContext ctx = build_data(cfg.at("data"), base_dir, base.substream(kStreamData).seed());
  const LabeledDataset& data = ctx.data;
  const auto m = cfg.at("m").get<Eigen::Index>();
  const std::string act_name = cfg.value("activation", "relu");
  const Activation act =
      act_name == "identity" ? Activation::Identity
                             : (act_name == "sigmoid" ? Activation::Sigmoid : Activation::ReLU);

  const Eigen::MatrixXd anchors =
      sample_anchors_iid(data.inputs, m, base.substream(kStreamLayer).seed());
  const GraphLayer layer(anchors, Eigen::VectorXd::Zero(m), PairwiseFunction::inner_product(), act);

  Rng readout_rng = base.substream(kStreamReadout);
  Eigen::MatrixXd readout(m, data.num_classes());
  for (Eigen::Index j = 0; j < readout.cols(); ++j) {
    for (Eigen::Index i = 0; i < readout.rows(); ++i) readout(i, j) = readout_rng.uniform(-0.1, 0.1);
  }

  TrainingConfig tc;
  tc.learning_rate = cfg.at("learning_rate").get<double>();
  tc.epochs = cfg.at("epochs").get<int>();
  tc.batch_size = cfg.at("batch_size").get<int>();
  if (cfg.contains("gradient_clip") && !cfg.at("gradient_clip").is_null()) {
    tc.gradient_clip = cfg.at("gradient_clip").get<double>();
  }
  const std::string loss = cfg.value("loss", "mse");
  require(loss == "mse" || loss == "cross_entropy", "train: unknown loss '" + loss + "'");
  tc.loss = loss == "mse" ? LossKind::MeanSquaredError : LossKind::CrossEntropy;
  tc.seed = base.substream(4).seed();

  const TrainResult result = train_layer_sgd(layer, readout, data, tc);

  write_text_file(out_dir + "/trace.csv", trace_to_csv(result.trace));
  write_text_file(out_dir + "/layer.json", layer_to_json(result.layer));
  outcome.artifacts.push_back(out_dir + "/trace.csv");
  outcome.artifacts.push_back(out_dir + "/layer.json");

  outcome.metrics["final_loss"] = result.trace.losses.back();
  outcome.metrics["final_covering_radius"] = result.trace.covering_radii.back();
  double unbounded = 0.0;
  double collisions = 0.0;
  for (const TraceFlag& flag : result.trace.flags) {
    if (flag.name == kFlagUnboundedIterates) ++unbounded;
    if (flag.name == kFlagSnapshotCollision) ++collisions;
  }
  outcome.metrics["unbounded_flags"] = unbounded;
  outcome.metrics["collision_flags"] = collisions;
  if (cfg.value("assert_no_flags", false) && (unbounded > 0.0 || collisions > 0.0)) {
    outcome.failures.push_back("training raised " + std::to_string(result.trace.flags.size()) +
                               " trace flags");
  }
}

void run_evaluate(const json& cfg, const std::string& base_dir, const std::string& out_dir,
                  std::uint64_t seed, RunOutcome& outcome) {
  const Rng base(seed);
  DataContext ctx = build_data(cfg.at("data"), base_dir, base.substream(kStreamData).seed());
  const LabeledDataset& data = ctx.data;
  const json assertions = cfg.value("assertions", json::object());

  write_text_file(out_dir + "/dataset.csv", dataset_to_csv(data));
  outcome.artifacts.push_back(out_dir + "/dataset.csv");

  outcome.metrics["n"] = static_cast<double>(data.size());
  const int k = cfg.contains("k") ? cfg.at("k").get<int>() : default_neighbor_count(data.size());
  outcome.metrics["k"] = k;

  // Build the representation.
  Eigen::MatrixXd codes;
  std::string provenance;
  BuiltModel model;
  std::optional<Partition> partition;
  if (cfg.contains("partition")) {
    const json& pj = cfg.at("partition");
    partition = epsilon_partition(data, pj.at("eps").get<double>(), pj.at("lipschitz_bound").get<double>());
    codes.resize(data.size(), 1);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      codes(i, 0) = static_cast<double>(partition->cell_ids[static_cast<std::size_t>(i)]);
    }
    provenance = "epsilon_partition(cells=" + std::to_string(partition->cell_count) + ")";
    std::ostringstream cells;
    cells << "sample,cell\n";
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      cells << i << "," << partition->cell_ids[static_cast<std::size_t>(i)] << "\n";
    }
    write_text_file(out_dir + "/cells.csv", cells.str());
    outcome.artifacts.push_back(out_dir + "/cells.csv");
    outcome.metrics["cells"] = partition->cell_count;
  } else if (cfg.value("raw", false)) {
    codes = data.inputs;
    provenance = "raw inputs";
  } else {
    model = build_model(cfg.at("layer"), base_dir, ctx, base.substream(kStreamLayer).seed(), outcome);
    if (model.layers.size() == 1) {
      codes = layer_forward_batch(model.layers.front(), data.inputs);
      write_text_file(out_dir + "/layer.json", layer_to_json(model.layers.front()));
      outcome.artifacts.push_back(out_dir + "/layer.json");
    } else {
      const Network net(model.layers);
      codes = network_forward_batch(net, data.inputs);
      write_text_file(out_dir + "/network.json", network_to_json(net));
      outcome.artifacts.push_back(out_dir + "/network.json");
    }
    provenance = model.provenance;
  }

  const CodeMatrix code_matrix(codes, provenance);
  std::vector<Report> reports;

  // Gap metrics (skippable for collision-only scenarios).
  GapReport gap;
  const bool want_gap = cfg.value("gap", true);
  if (want_gap) {
    gap = sufficiency_gap(data, code_matrix, k);
    outcome.metrics["l2_gap"] = gap.l2_gap;
    outcome.metrics["max_tv_gap"] = gap.max_tv_gap;
    outcome.metrics["noise_floor"] = gap.noise_floor;
    reports.emplace_back(gap);
  }

  // Separation across regions.
  const SeparationReport sep = region_separation_report(code_matrix, data.region_ids);
  outcome.metrics["cross_region_collisions"] = static_cast<double>(sep.cross_region_collisions);
  outcome.metrics["cross_region_fraction"] = sep.fraction;
  reports.emplace_back(sep);

  // Plain collision scan when requested.
  if (cfg.contains("collision_tolerance") || assertions.contains("max_collision_pairs")) {
    const double tol = cfg.value("collision_tolerance", 1e-9);
    const CollisionReport col = collision_report(code_matrix, tol);
    outcome.metrics["collision_pairs"] = static_cast<double>(col.pair_count);
    outcome.metrics["min_nonzero_distance"] = col.min_nonzero_distance;
    reports.emplace_back(col);
  }

  for (const std::string& path : emit_reports(out_dir, reports)) outcome.artifacts.push_back(path);

  // Assertions.
  if (assertions.contains("max_collision_pairs")) {
    assert_le(outcome, "collision_pairs", outcome.metrics.at("collision_pairs"),
              assertions.at("max_collision_pairs").get<double>());
  }
  if (assertions.contains("max_cross_region_fraction")) {
    assert_le(outcome, "cross_region_fraction", sep.fraction,
              assertions.at("max_cross_region_fraction").get<double>());
  }
  if (assertions.contains("max_cross_region_collisions")) {
    assert_le(outcome, "cross_region_collisions", static_cast<double>(sep.cross_region_collisions),
              assertions.at("max_cross_region_collisions").get<double>());
  }
  if (assertions.contains("max_tv_gap")) {
    require(want_gap, "evaluate: gap assertions need gap metrics enabled");
    assert_le(outcome, "max_tv_gap", gap.max_tv_gap, assertions.at("max_tv_gap").get<double>());
  }
  if (assertions.contains("max_tv_gap_minus_floor")) {
    require(want_gap, "evaluate: gap assertions need gap metrics enabled");
    assert_le(outcome, "max_tv_gap_minus_floor", gap.max_tv_gap - gap.noise_floor,
              assertions.at("max_tv_gap_minus_floor").get<double>());
  }
  if (assertions.contains("max_l2_gap_ratio_to_floor")) {
    require(want_gap && gap.noise_floor > 0.0, "evaluate: ratio assertion needs a positive noise floor");
    assert_le(outcome, "l2_gap_ratio_to_floor", gap.l2_gap / gap.noise_floor,
              assertions.at("max_l2_gap_ratio_to_floor").get<double>());
  }
  if (assertions.contains("max_cells")) {
    require(partition.has_value(), "evaluate: max_cells assertion needs a partition");
    assert_le(outcome, "cells", partition->cell_count, assertions.at("max_cells").get<double>());
  }
  if (assertions.contains("max_partition_variation")) {
    require(partition.has_value(), "evaluate: partition assertion needs a partition");
    // Brute-force within-cell variation over every sample pair.
    double worst = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      for (Eigen::Index j = i + 1; j < data.size(); ++j) {
        if (partition->cell_ids[static_cast<std::size_t>(i)] !=
            partition->cell_ids[static_cast<std::size_t>(j)]) {
          continue;
        }
        worst = std::max(
            worst, (data.true_conditionals.row(i) - data.true_conditionals.row(j)).cwiseAbs().sum());
      }
    }
    assert_le(outcome, "partition_max_variation", worst,
              assertions.at("max_partition_variation").get<double>());
  }
  if (assertions.contains("support_code_collisions")) {
    require(model.support.has_value(), "evaluate: support assertion needs a discrete separator");
    const Eigen::MatrixXd& support = *model.support;
    Eigen::MatrixXd support_codes(support.cols(), model.layers.front().width());
    for (Eigen::Index i = 0; i < support.cols(); ++i) {
      support_codes.row(i) = layer_forward(model.layers.front(), support.col(i)).transpose();
    }
    const CollisionReport col = collision_report(CodeMatrix(support_codes, "support codes"), 1e-9);
    assert_le(outcome, "support_code_collisions", static_cast<double>(col.pair_count),
              assertions.at("support_code_collisions").get<double>());
  }
  if (assertions.contains("relu_own_coordinate")) {
    require(ctx.region_spec.has_value(), "evaluate: own-coordinate assertion needs a region spec");
    require(!model.layers.empty(), "evaluate: own-coordinate assertion needs a layer");
    const json& oj = assertions.at("relu_own_coordinate");
    const double delta = oj.at("delta").get<double>();
    const double tol = oj.value("tol", 1e-9);
    const auto& regions = ctx.region_spec->regions();
    double violations = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const int g = data.region_ids[static_cast<std::size_t>(i)] - 1;
      const double cn = regions[static_cast<std::size_t>(g)].center.norm();
      const double bound = 0.5 * cn * cn - delta * cn - tol;
      if (codes(i, g) < bound) ++violations;
    }
    assert_le(outcome, "own_coordinate_violations", violations, 0.0);
  }
  if (assertions.contains("conv_exact_patch_tol")) {
    require(model.patch_spec.has_value(), "evaluate: conv assertion needs a patch spec");
    const double tol = assertions.at("conv_exact_patch_tol").get<double>();
    double violations = 0.0;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const int g = data.region_ids[static_cast<std::size_t>(i)] - 1;
      const double expected =
          0.5 * model.patch_spec->patches()[static_cast<std::size_t>(g)].pattern.squaredNorm();
      const double err = std::abs(codes(i, g) - expected);
      worst = std::max(worst, err);
      if (err > tol) ++violations;
    }
    outcome.metrics["conv_exact_worst_error"] = worst;
    assert_le(outcome, "conv_exact_violations", violations, 0.0);
  }
  if (assertions.contains("multilayer_gap_match_tol")) {
    require(model.layers.size() >= 2, "evaluate: multilayer assertion needs a network");
    require(want_gap, "evaluate: gap assertions need gap metrics enabled");
    const Eigen::MatrixXd first_codes = layer_forward_batch(model.layers.front(), data.inputs);
    const GapReport first_gap = sufficiency_gap_with_floor(
        data, CodeMatrix(first_codes, "first layer"), k, gap.noise_floor);
    outcome.metrics["l2_gap_first_layer"] = first_gap.l2_gap;
    assert_le(outcome, "multilayer_gap_diff", std::abs(first_gap.l2_gap - gap.l2_gap),
              assertions.at("multilayer_gap_match_tol").get<double>());
  }
}

void run_sweep_gap(const json& cfg, const std::string& base_dir, const std::string& out_dir,
                   std::uint64_t seed, RunOutcome& outcome) {
  const json& data_src = cfg.at("data");
  const int num_seeds = cfg.value("num_seeds", 1);
  require(num_seeds >= 1, "sweep: num_seeds must be positive");
  const std::vector<Eigen::Index> m_list = cfg.at("m_list").get<std::vector<Eigen::Index>>();
  require(!m_list.empty(), "sweep: m_list must be nonempty");
  const json layers = cfg.at("layers");
  const double tol = cfg.value("collision_tolerance", 1e-9);
  const json assertions = cfg.value("assertions", json::object());

  const Rng base(seed);

  struct Row {
    std::string layer;
    int seed_index;
    Eigen::Index m;
    double l2_gap;
    double noise_floor;
    double collision_fraction;
  };
  std::vector<Row> rows;

  for (int si = 0; si < num_seeds; ++si) {
    const DataContext ctx =
        build_data(data_src, base_dir, base.substream(1000 + static_cast<std::uint64_t>(si)).seed());
    const LabeledDataset& data = ctx.data;
    const int k = cfg.contains("k") ? cfg.at("k").get<int>() : default_neighbor_count(data.size());
    // The noise floor depends on (data, k) only; score it once per seed.
    const GapReport floor_report =
        sufficiency_gap_with_floor(data, CodeMatrix(data.inputs, "raw"), k, 0.0);
    const double noise_floor = floor_report.l2_gap;
    const double total_pairs = 0.5 * static_cast<double>(data.size()) *
                               static_cast<double>(data.size() - 1);

    for (std::size_t li = 0; li < layers.size(); ++li) {
      const json& lj = layers[li];
      const std::string name = lj.at("name").get<std::string>();
      for (std::size_t mi = 0; mi < m_list.size(); ++mi) {
        const Eigen::Index m = m_list[mi];
        const std::uint64_t anchor_seed =
            base.substream(static_cast<std::uint64_t>(si + 1) * 100000 +
                           static_cast<std::uint64_t>(li + 1) * 1000 + static_cast<std::uint64_t>(m))
                .seed();
        const Eigen::MatrixXd anchors = sample_anchors_iid(data.inputs, m, anchor_seed);
        GraphLayer layer =
            name == "gaussian_kernel"
                ? GraphLayer(anchors, Eigen::VectorXd::Zero(m),
                             PairwiseFunction::gaussian_kernel(lj.at("bandwidth").get<double>()),
                             Activation::Identity)
                : GraphLayer(anchors, Eigen::VectorXd::Zero(m), PairwiseFunction::inner_product(),
                             Activation::ReLU);
        require(name == "gaussian_kernel" || name == "relu_inner_product",
                "sweep: unknown layer kind '" + name + "'");
        const Eigen::MatrixXd codes = layer_forward_batch(layer, data.inputs);
        const GapReport gap =
            sufficiency_gap_with_floor(data, CodeMatrix(codes, name), k, noise_floor);
        const double fraction = static_cast<double>(count_collisions(codes, tol)) / total_pairs;
        rows.push_back({name, si, m, gap.l2_gap, noise_floor, fraction});
      }
    }
  }

  // Per-seed detail.
  std::ostringstream seeds_csv;
  seeds_csv << "layer,seed_index,m,l2_gap,noise_floor,collision_fraction\n";
  for (const Row& row : rows) {
    seeds_csv << row.layer << "," << row.seed_index << "," << row.m << "," << format_float(row.l2_gap)
              << "," << format_float(row.noise_floor) << "," << format_float(row.collision_fraction)
              << "\n";
  }
  write_text_file(out_dir + "/sweep_seeds.csv", seeds_csv.str());
  outcome.artifacts.push_back(out_dir + "/sweep_seeds.csv");

  for (std::size_t li = 0; li < layers.size(); ++li) {
    const std::string name = layers[li].at("name").get<std::string>();
    std::ostringstream sweep_csv;
    std::ostringstream plot_csv;
    sweep_csv << "m,l2_gap,noise_floor,collision_fraction\n";
    plot_csv << "x,y\n";
    int le_count = 0;
    int ratio_ok = 0;
    for (const Eigen::Index m : m_list) {
      std::vector<double> gaps;
      std::vector<double> floors;
      std::vector<double> fractions;
      for (const Row& row : rows) {
        if (row.layer == name && row.m == m) {
          gaps.push_back(row.l2_gap);
          floors.push_back(row.noise_floor);
          fractions.push_back(row.collision_fraction);
        }
      }
      const double med = median(gaps);
      sweep_csv << m << "," << format_float(med) << "," << format_float(median(floors)) << ","
                << format_float(median(fractions)) << "\n";
      plot_csv << m << "," << format_float(med) << "\n";
      outcome.metrics[name + "_m" + std::to_string(m) + "_l2_gap_median"] = med;
    }
    for (int si = 0; si < num_seeds; ++si) {
      double first = 0.0;
      double last = 0.0;
      double floor_value = 0.0;
      for (const Row& row : rows) {
        if (row.layer != name || row.seed_index != si) continue;
        if (row.m == m_list.front()) first = row.l2_gap;
        if (row.m == m_list.back()) {
          last = row.l2_gap;
          floor_value = row.noise_floor;
        }
      }
      if (last <= first + 1e-15) ++le_count;
      if (last <= 2.0 * floor_value) ++ratio_ok;
    }
    outcome.metrics[name + "_seeds_final_le_first"] = le_count;
    outcome.metrics[name + "_seeds_final_le_twice_floor"] = ratio_ok;
    write_text_file(out_dir + "/sweep_" + name + ".csv", sweep_csv.str());
    write_text_file(out_dir + "/plot_" + name + ".csv", plot_csv.str());
    outcome.artifacts.push_back(out_dir + "/sweep_" + name + ".csv");
    outcome.artifacts.push_back(out_dir + "/plot_" + name + ".csv");

    if (assertions.contains("min_seeds_final_le_first")) {
      const int need = assertions.at("min_seeds_final_le_first").get<int>();
      if (le_count < need) {
        outcome.failures.push_back(name + "_seeds_final_le_first = " + std::to_string(le_count) +
                                   " below " + std::to_string(need));
      }
    }
    if (assertions.contains("min_seeds_final_le_twice_floor")) {
      const int need = assertions.at("min_seeds_final_le_twice_floor").get<int>();
      if (ratio_ok < need) {
        outcome.failures.push_back(name + "_seeds_final_le_twice_floor = " + std::to_string(ratio_ok) +
                                   " below " + std::to_string(need));
      }
    }
  }
}

void run_sweep_covering(const json& cfg, const std::string& out_dir, std::uint64_t seed,
                        RunOutcome& outcome) {
  const auto p = cfg.at("p").get<Eigen::Index>();
  const std::vector<Eigen::Index> m_list = cfg.at("m_list").get<std::vector<Eigen::Index>>();
  const int num_seeds = cfg.value("num_seeds", 20);
  const int grid = cfg.value("grid_per_dim", 50);
  require(p >= 1 && !m_list.empty() && num_seeds >= 1 && grid >= 2, "sweep: invalid covering-radius config");

  // Regular probe grid over the unit box.
  Eigen::Index probe_count = 1;
  for (Eigen::Index d = 0; d < p; ++d) probe_count *= grid;
  Eigen::MatrixXd probes(probe_count, p);
  for (Eigen::Index i = 0; i < probe_count; ++i) {
    Eigen::Index rem = i;
    for (Eigen::Index d = 0; d < p; ++d) {
      probes(i, d) = static_cast<double>(rem % grid) / static_cast<double>(grid - 1);
      rem /= grid;
    }
  }

  const Rng base(seed);
  std::ostringstream seeds_csv;
  seeds_csv << "seed_index,m,covering_radius\n";
  std::vector<double> medians;
  std::ostringstream sweep_csv;
  std::ostringstream plot_csv;
  sweep_csv << "m,median_covering_radius\n";
  plot_csv << "x,y\n";
  for (std::size_t mi = 0; mi < m_list.size(); ++mi) {
    const Eigen::Index m = m_list[mi];
    std::vector<double> radii;
    for (int si = 0; si < num_seeds; ++si) {
      Rng rng = base.substream(static_cast<std::uint64_t>(si) * 1000 + static_cast<std::uint64_t>(mi));
      Eigen::MatrixXd anchors(p, m);
      for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index d = 0; d < p; ++d) anchors(d, j) = rng.uniform();
      }
      const double radius = covering_radius(anchors, probes);
      radii.push_back(radius);
      seeds_csv << si << "," << m << "," << format_float(radius) << "\n";
    }
    const double med = median(radii);
    medians.push_back(med);
    sweep_csv << m << "," << format_float(med) << "\n";
    plot_csv << m << "," << format_float(med) << "\n";
    outcome.metrics["median_radius_m" + std::to_string(m)] = med;
  }
  write_text_file(out_dir + "/sweep_covering.csv", sweep_csv.str());
  write_text_file(out_dir + "/sweep_covering_seeds.csv", seeds_csv.str());
  write_text_file(out_dir + "/plot_covering.csv", plot_csv.str());
  outcome.artifacts.push_back(out_dir + "/sweep_covering.csv");
  outcome.artifacts.push_back(out_dir + "/sweep_covering_seeds.csv");
  outcome.artifacts.push_back(out_dir + "/plot_covering.csv");

  const json assertions = cfg.value("assertions", json::object());
  if (assertions.value("strictly_decreasing", false)) {
    for (std::size_t i = 1; i < medians.size(); ++i) {
      if (!(medians[i] < medians[i - 1])) {
        outcome.failures.push_back("median covering radius not strictly decreasing at m = " +
                                   std::to_string(m_list[i]));
      }
    }
  }
}

void run_conv(const json& cfg, const std::string& base_dir, const std::string& out_dir,
              std::uint64_t seed, RunOutcome& outcome) {
  const PatchSpec spec =
      patch_spec_from_json(read_text_file(resolve(base_dir, cfg.at("patch_spec").get<std::string>())));
  const Eigen::MatrixXd conditionals = matrix_from_rows(cfg.at("conditionals"), "conv conditionals");
  const Eigen::VectorXd weights = vector_from_array(cfg.at("weights"), "conv weights");
  const std::vector<double> deltas = cfg.at("deltas").get<std::vector<double>>();
  const auto n = cfg.at("n_per_delta").get<Eigen::Index>();
  const json assertions = cfg.value("assertions", json::object());
  const Rng base(seed);

  for (std::size_t di = 0; di < deltas.size(); ++di) {
    const PatchSpec spec_d = spec.with_noise_bound(deltas[di]);
    const LabeledDataset data = sample_patched(spec_d, conditionals, weights, n,
                                               base.substream(10 + static_cast<std::uint64_t>(di)).seed());
    const GraphLayer layer = construct_conv_separator(spec_d);
    const Eigen::MatrixXd codes = layer_forward_batch(layer, data.inputs);
    const MarginReport report = conv_pair_margin(spec_d, data, codes);

    const std::string path = out_dir + "/margin_report_delta" + std::to_string(di) + ".csv";
    write_text_file(path, margin_report_to_csv(report));
    outcome.artifacts.push_back(path);

    double min_slack = std::numeric_limits<double>::infinity();
    double unguaranteed = 0.0;
    for (const PairMargin& pm : report.pairs) {
      if (!pm.guaranteed) {
        ++unguaranteed;
        continue;
      }
      min_slack = std::min(min_slack, pm.empirical_min_margin - pm.margin);
    }
    outcome.metrics["delta" + std::to_string(di) + "_min_margin_slack"] =
        std::isfinite(min_slack) ? min_slack : 0.0;
    outcome.metrics["delta" + std::to_string(di) + "_unguaranteed_pairs"] = unguaranteed;

    if (assertions.value("margins_hold", false)) {
      for (const PairMargin& pm : report.pairs) {
        if (pm.guaranteed && !(pm.empirical_min_margin >= pm.margin - 1e-9)) {
          std::ostringstream os;
          os << "margin violated for pair (" << pm.i + 1 << ", " << pm.j + 1 << ") at delta "
             << deltas[di] << ": empirical " << pm.empirical_min_margin << " < guaranteed "
             << pm.margin;
          outcome.failures.push_back(os.str());
        }
      }
    }
    if (assertions.contains("expect_all_guaranteed") &&
        assertions.at("expect_all_guaranteed").get<bool>() && unguaranteed > 0.0) {
      outcome.failures.push_back("unexpected not-guaranteed pairs at delta " +
                                 std::to_string(deltas[di]));
    }
    if (assertions.value("expect_margin_equals_gamma", false)) {
      for (const PairMargin& pm : report.pairs) {
        if (pm.margin != pm.gamma) {
          outcome.failures.push_back("margin clipped below gamma for pair (" +
                                     std::to_string(pm.i + 1) + ", " + std::to_string(pm.j + 1) +
                                     ") at delta " + std::to_string(deltas[di]));
        }
      }
    }
  }
  write_text_file(out_dir + "/layer.json", layer_to_json(construct_conv_separator(spec)));
  outcome.artifacts.push_back(out_dir + "/layer.json");
}

RunOutcome run_dispatch(const json& cfg, const std::string& base_dir, const std::string& out_dir,
                        std::optional<std::uint64_t> seed_override) {
  require(cfg.is_object(), "config: expected a JSON object");
  const std::string kind = cfg.at("kind").get<std::string>();
  require(cfg.contains("seed"), "config: seed is required; wall-clock seeding is not supported");
  const std::uint64_t seed = seed_override.value_or(cfg.at("seed").get<std::uint64_t>());

  std::filesystem::create_directories(out_dir);

  RunOutcome outcome;
  auto run = [&] {
    if (kind == "generate") {
      run_generate(cfg, base_dir, out_dir, seed, outcome);
    } else if (kind == "construct") {
      run_construct(cfg, base_dir, out_dir, seed, outcome);
    } else if (kind == "train") {
      run_train(cfg, base_dir, out_dir, seed, outcome);
    } else if (kind == "evaluate") {
      run_evaluate(cfg, base_dir, out_dir, seed, outcome);
    } else if (kind == "sweep") {
      const std::string metric = cfg.value("metric", "gap");
      if (metric == "gap") {
        run_sweep_gap(cfg, base_dir, out_dir, seed, outcome);
      } else if (metric == "covering_radius") {
        run_sweep_covering(cfg, out_dir, seed, outcome);
      } else {
        throw std::invalid_argument("sweep: unknown metric '" + metric + "'");
      }
    } else if (kind == "conv") {
      run_conv(cfg, base_dir, out_dir, seed, outcome);
    } else {
      throw std::invalid_argument("config: unknown kind '" + kind + "'");
    }
  };

  if (cfg.contains("expect_error")) {
    const std::string expected = cfg.at("expect_error").get<std::string>();
    try {
      run();
      outcome.failures.push_back("expected a '" + expected + "' error, but the pipeline succeeded");
    } catch (const CodeCollisionError& e) {
      if (expected == "code_collision") {
        outcome.metrics["expected_error_seen"] = 1.0;
        outcome.notes.push_back(std::string("expected error raised: ") + e.what());
      } else {
        throw;
      }
    } catch (const PatchConditionError& e) {
      if (expected == "patch_condition") {
        outcome.metrics["expected_error_seen"] = 1.0;
        outcome.notes.push_back(std::string("expected error raised: ") + e.what());
      } else {
        throw;
      }
    } catch (const SingularGramError& e) {
      if (expected == "singular_gram") {
        outcome.metrics["expected_error_seen"] = 1.0;
        outcome.notes.push_back(std::string("expected error raised: ") + e.what());
      } else {
        throw;
      }
    }
    return outcome;
  }

  run();
  return outcome;
}

}  // namespace

RunOutcome run_experiment_text(const std::string& config_text, const std::string& base_dir,
                               const std::string& out_dir, std::optional<std::uint64_t> seed_override) {
  json cfg;
  try {
    cfg = json::parse(config_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  try {
    return run_dispatch(cfg, base_dir, out_dir, seed_override);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

int run_config_file(const std::string& config_path, const std::optional<std::string>& out_override,
                    std::optional<std::uint64_t> seed_override, std::ostream& log,
                    const std::optional<std::string>& expected_kind) {
  try {
    const std::string text = read_text_file(config_path);
    const std::filesystem::path path(config_path);
    const std::string base_dir = path.has_parent_path() ? path.parent_path().string() : ".";
    if (expected_kind) {
      const json cfg = json::parse(text);
      const std::string kind = cfg.at("kind").get<std::string>();
      if (kind != *expected_kind) {
        log << "error: config kind '" << kind << "' does not match subcommand '" << *expected_kind
            << "'\n";
        return 2;
      }
    }
    std::string out_dir = out_override.value_or("");
    if (out_dir.empty()) {
      const json cfg = json::parse(text);
      out_dir = cfg.value("out", path.stem().string() + "_out");
    }
    const RunOutcome outcome = run_experiment_text(text, base_dir, out_dir, seed_override);
    for (const auto& [name, value] : outcome.metrics) {
      log << name << " = " << format_float(value) << "\n";
    }
    for (const std::string& note : outcome.notes) log << note << "\n";
    for (const std::string& artifact : outcome.artifacts) log << "wrote " << artifact << "\n";
    if (!outcome.passed()) {
      for (const std::string& failure : outcome.failures) log << "FAIL: " << failure << "\n";
      return 1;
    }
    return 0;
  } catch (const nlohmann::json::exception& e) {
    log << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace gvn
