#include "gvn/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "check.hpp"

namespace gvn {

using detail::require;
using nlohmann::json;

std::string format_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_float(const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  require(end == text.c_str() + text.size() && !text.empty() && errno != ERANGE,
          "parse_float: invalid number '" + text + "'");
  return v;
}

namespace {

json vector_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vector_from_json(const json& arr, const std::string& what) {
  require(arr.is_array(), what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    require(arr[i].is_number(), what + ": expected numeric entries");
    v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  }
  return v;
}

// Column-major nested arrays: entry j is column j.
json columns_to_json(const Eigen::MatrixXd& m) {
  json arr = json::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(vector_to_json(m.col(j)));
  return arr;
}

Eigen::MatrixXd columns_from_json(const json& arr, const std::string& what) {
  require(arr.is_array() && !arr.empty(), what + ": expected a nonempty array of columns");
  const Eigen::VectorXd first = vector_from_json(arr[0], what);
  Eigen::MatrixXd m(first.size(), static_cast<Eigen::Index>(arr.size()));
  m.col(0) = first;
  for (std::size_t j = 1; j < arr.size(); ++j) {
    const Eigen::VectorXd col = vector_from_json(arr[j], what);
    require(col.size() == m.rows(), what + ": ragged columns");
    m.col(static_cast<Eigen::Index>(j)) = col;
  }
  return m;
}

std::string pairwise_name(PairwiseKind kind) {
  switch (kind) {
    case PairwiseKind::InnerProduct: return "inner_product";
    case PairwiseKind::EuclideanDistance: return "euclidean_distance";
    case PairwiseKind::SquaredEuclideanDistance: return "squared_euclidean_distance";
    case PairwiseKind::GaussianKernel: return "gaussian_kernel";
    case PairwiseKind::CosineSimilarity: return "cosine_similarity";
  }
  throw std::logic_error("pairwise_name: unreachable");
}

PairwiseFunction pairwise_from_json(const json& j) {
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "inner_product") return PairwiseFunction::inner_product();
  if (variant == "euclidean_distance") return PairwiseFunction::euclidean_distance();
  if (variant == "squared_euclidean_distance") return PairwiseFunction::squared_euclidean_distance();
  if (variant == "gaussian_kernel") return PairwiseFunction::gaussian_kernel(j.at("bandwidth").get<double>());
  if (variant == "cosine_similarity") return PairwiseFunction::cosine_similarity();
  throw std::invalid_argument("unknown pairwise variant '" + variant + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  throw std::logic_error("activation_name: unreachable");
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::ReLU;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

json layer_to_json_obj(const GraphLayer& layer) {
  json j;
  j["input_dim"] = layer.input_dim();
  j["m"] = layer.width();
  json pw;
  pw["variant"] = pairwise_name(layer.pairwise().kind());
  if (layer.pairwise().kind() == PairwiseKind::GaussianKernel) {
    pw["bandwidth"] = layer.pairwise().bandwidth();
  }
  j["pairwise"] = pw;
  j["activation"] = activation_name(layer.activation());
  j["anchors"] = columns_to_json(layer.anchors());
  j["bias"] = vector_to_json(layer.bias());
  return j;
}

GraphLayer layer_from_json_obj(const json& j) {
  const Eigen::MatrixXd anchors = columns_from_json(j.at("anchors"), "layer anchors");
  const Eigen::VectorXd bias = vector_from_json(j.at("bias"), "layer bias");
  const auto input_dim = j.at("input_dim").get<Eigen::Index>();
  const auto m = j.at("m").get<Eigen::Index>();
  require(anchors.rows() == input_dim, "layer json: input_dim does not match anchor columns");
  require(anchors.cols() == m, "layer json: m does not match anchor count");
  return GraphLayer(anchors, bias, pairwise_from_json(j.at("pairwise")),
                    activation_from_name(j.at("activation").get<std::string>()));
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(what + ": " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

template <typename Fn>
auto with_field_errors(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    // Keeps nlohmann's message, which names the missing/ill-typed field.
    throw std::invalid_argument(what + ": " + e.what());
  }
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string layer_to_json(const GraphLayer& layer) { return dump(layer_to_json_obj(layer)); }

GraphLayer layer_from_json(const std::string& text) {
  const json j = parse_json(text, "layer json");
  return with_field_errors("layer json", [&] { return layer_from_json_obj(j); });
}

std::string network_to_json(const Network& net) {
  json j;
  json layers = json::array();
  for (const GraphLayer& layer : net.layers()) layers.push_back(layer_to_json_obj(layer));
  j["layers"] = layers;
  return dump(j);
}

Network network_from_json(const std::string& text) {
  const json j = parse_json(text, "network json");
  return with_field_errors("network json", [&] {
    const json& arr = j.at("layers");
    require(arr.is_array() && !arr.empty(), "network json: layers must be a nonempty array");
    std::vector<GraphLayer> layers;
    layers.reserve(arr.size());
    for (const json& lj : arr) layers.push_back(layer_from_json_obj(lj));
    return Network(std::move(layers));
  });
}

std::string region_spec_to_json(const RegionSpec& spec) {
  json j;
  j["epsilon"] = spec.epsilon();
  if (spec.perturbation()) {
    j["conditional_perturbation"] = {{"type", "lipschitz_tilt"}, {"slope", spec.perturbation()->slope}};
  } else {
    j["conditional_perturbation"] = {{"type", "none"}};
  }
  json regions = json::array();
  for (const Region& r : spec.regions()) {
    json rj;
    rj["center"] = vector_to_json(r.center);
    rj["radius"] = r.radius;
    rj["conditional"] = vector_to_json(r.conditional);
    rj["weight"] = r.weight;
    regions.push_back(rj);
  }
  j["regions"] = regions;
  return dump(j);
}

RegionSpec region_spec_from_json(const std::string& text) {
  const json j = parse_json(text, "region spec json");
  return with_field_errors("region spec json", [&] {
    std::vector<Region> regions;
    for (const json& rj : j.at("regions")) {
      Region r;
      r.center = vector_from_json(rj.at("center"), "region center");
      r.radius = rj.at("radius").get<double>();
      r.conditional = vector_from_json(rj.at("conditional"), "region conditional");
      r.weight = rj.at("weight").get<double>();
      regions.push_back(std::move(r));
    }
    std::optional<LipschitzTilt> tilt;
    const json& pj = j.at("conditional_perturbation");
    const std::string type = pj.at("type").get<std::string>();
    if (type == "lipschitz_tilt") {
      tilt = LipschitzTilt{pj.at("slope").get<double>()};
    } else {
      require(type == "none", "region spec json: unknown perturbation type '" + type + "'");
    }
    return RegionSpec(std::move(regions), j.at("epsilon").get<double>(), tilt);
  });
}

std::string patch_spec_to_json(const PatchSpec& spec) {
  json j;
  j["p"] = spec.ambient_dim();
  j["delta"] = spec.noise_bound();
  json regions = json::array();
  for (const Patch& patch : spec.patches()) {
    json pj;
    pj["coords"] = patch.coords;
    pj["pattern"] = vector_to_json(patch.pattern);
    regions.push_back(pj);
  }
  j["regions"] = regions;
  return dump(j);
}

PatchSpec patch_spec_from_json(const std::string& text) {
  const json j = parse_json(text, "patch spec json");
  return with_field_errors("patch spec json", [&] {
    std::vector<Patch> patches;
    for (const json& pj : j.at("regions")) {
      Patch patch;
      patch.coords = pj.at("coords").get<std::vector<int>>();
      patch.pattern = vector_from_json(pj.at("pattern"), "patch pattern");
      patches.push_back(std::move(patch));
    }
    return PatchSpec(j.at("p").get<Eigen::Index>(), std::move(patches), j.at("delta").get<double>());
  });
}

std::string dataset_to_csv(const LabeledDataset& data) {
  data.validate();
  std::ostringstream os;
  const Eigen::Index p = data.dim();
  const Eigen::Index k = data.num_classes();
  for (Eigen::Index d = 0; d < p; ++d) os << "x_" << d << ",";
  os << "y,region";
  for (Eigen::Index c = 0; c < k; ++c) os << ",q_" << c;
  os << "\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index d = 0; d < p; ++d) os << format_float(data.inputs(i, d)) << ",";
    os << data.labels[static_cast<std::size_t>(i)] << "," << data.region_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < k; ++c) os << "," << format_float(data.true_conditionals(i, c));
    os << "\n";
  }
  return os.str();
}

LabeledDataset dataset_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), "dataset csv: missing header");
  const std::vector<std::string> header = split(line, ',');
  Eigen::Index p = 0;
  while (p < static_cast<Eigen::Index>(header.size()) &&
         header[static_cast<std::size_t>(p)] == "x_" + std::to_string(p)) {
    ++p;
  }
  require(p >= 1, "dataset csv: header must start with x_0");
  require(static_cast<Eigen::Index>(header.size()) > p + 2 &&
              header[static_cast<std::size_t>(p)] == "y" &&
              header[static_cast<std::size_t>(p + 1)] == "region",
          "dataset csv: header must contain y and region after the inputs");
  const Eigen::Index k = static_cast<Eigen::Index>(header.size()) - p - 2;
  for (Eigen::Index c = 0; c < k; ++c) {
    require(header[static_cast<std::size_t>(p + 2 + c)] == "q_" + std::to_string(c),
            "dataset csv: malformed conditional columns");
  }

  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields = split(line, ',');
    require(fields.size() == header.size(),
            "dataset csv: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                " fields, expected " + std::to_string(header.size()));
    rows.push_back(std::move(fields));
  }
  require(!rows.empty(), "dataset csv: no data rows");

  LabeledDataset data;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  data.inputs.resize(n, p);
  data.labels.resize(static_cast<std::size_t>(n));
  data.region_ids.resize(static_cast<std::size_t>(n));
  data.true_conditionals.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& fields = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index d = 0; d < p; ++d) data.inputs(i, d) = parse_float(fields[static_cast<std::size_t>(d)]);
    data.labels[static_cast<std::size_t>(i)] = std::stoi(fields[static_cast<std::size_t>(p)]);
    data.region_ids[static_cast<std::size_t>(i)] = std::stoi(fields[static_cast<std::size_t>(p + 1)]);
    for (Eigen::Index c = 0; c < k; ++c) {
      data.true_conditionals(i, c) = parse_float(fields[static_cast<std::size_t>(p + 2 + c)]);
    }
  }
  data.validate();
  return data;
}

std::string trace_to_csv(const TrainingTrace& trace) {
  require(!trace.anchor_snapshots.empty(), "trace_to_csv: empty trace");
  const Eigen::Index p = trace.anchor_snapshots.front().rows();
  std::ostringstream os;
  os << "epoch,loss,covering_radius";
  for (Eigen::Index d = 0; d < p; ++d) os << ",bbox_min_" << d;
  for (Eigen::Index d = 0; d < p; ++d) os << ",bbox_max_" << d;
  os << ",flags\n";
  for (std::size_t e = 0; e < trace.losses.size(); ++e) {
    os << e << "," << format_float(trace.losses[e]) << "," << format_float(trace.covering_radii[e]);
    for (Eigen::Index d = 0; d < p; ++d) os << "," << format_float(trace.bbox_min[e](d));
    for (Eigen::Index d = 0; d < p; ++d) os << "," << format_float(trace.bbox_max[e](d));
    os << ",";
    bool first = true;
    for (const TraceFlag& flag : trace.flags) {
      if (flag.epoch == static_cast<int>(e)) {
        if (!first) os << ";";
        os << flag.name;
        first = false;
      }
    }
    os << "\n";
  }
  return os.str();
}

std::string gap_report_to_csv(const GapReport& report) {
  std::ostringstream os;
  os << "l2_gap,max_tv_gap,noise_floor,k,n\n";
  os << format_float(report.l2_gap) << "," << format_float(report.max_tv_gap) << ","
     << format_float(report.noise_floor) << "," << report.k << "," << report.n << "\n";
  return os.str();
}

std::string collision_report_to_csv(const CollisionReport& report) {
  std::ostringstream os;
  os << "tolerance,pair_count,min_nonzero_distance\n";
  os << format_float(report.tolerance) << "," << report.pair_count << ","
     << format_float(report.min_nonzero_distance) << "\n";
  return os.str();
}

std::string collision_pairs_to_csv(const CollisionReport& report) {
  std::ostringstream os;
  os << "i,j\n";
  for (const auto& [i, j] : report.sample_pairs) os << i << "," << j << "\n";
  return os.str();
}

std::string separation_report_to_csv(const SeparationReport& report) {
  std::ostringstream os;
  os << "cross_region_collisions,cross_region_pairs,fraction\n";
  os << report.cross_region_collisions << "," << report.cross_region_pairs << ","
     << format_float(report.fraction) << "\n";
  return os.str();
}

std::string margin_report_to_csv(const MarginReport& report) {
  std::ostringstream os;
  os << "i,j,delta,gap,gamma,margin,empirical_min_margin,guaranteed\n";
  for (const PairMargin& pm : report.pairs) {
    os << (pm.i + 1) << "," << (pm.j + 1) << "," << format_float(report.noise_bound) << ","
       << format_float(pm.gap) << "," << format_float(pm.gamma) << "," << format_float(pm.margin)
       << "," << format_float(pm.empirical_min_margin) << "," << (pm.guaranteed ? 1 : 0) << "\n";
  }
  return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void save_artifact(const std::string& path, const Artifact& artifact) {
  std::visit(
      [&](const auto& value) {
        using T = std::decay_t<decltype(value)>;
        if constexpr (std::is_same_v<T, LabeledDataset>) {
          write_text_file(path, dataset_to_csv(value));
        } else if constexpr (std::is_same_v<T, GraphLayer>) {
          write_text_file(path, layer_to_json(value));
        } else if constexpr (std::is_same_v<T, Network>) {
          write_text_file(path, network_to_json(value));
        } else if constexpr (std::is_same_v<T, PatchSpec>) {
          write_text_file(path, patch_spec_to_json(value));
        } else {
          write_text_file(path, region_spec_to_json(value));
        }
      },
      artifact);
}

Artifact load_artifact(const std::string& path, ArtifactKind kind) {
  const std::string text = read_text_file(path);
  switch (kind) {
    case ArtifactKind::Dataset: return dataset_from_csv(text);
    case ArtifactKind::Layer: return layer_from_json(text);
    case ArtifactKind::Network: return network_from_json(text);
    case ArtifactKind::PatchSpec: return patch_spec_from_json(text);
    case ArtifactKind::RegionSpec: return region_spec_from_json(text);
  }
  throw std::logic_error("load_artifact: unreachable");
}

std::vector<std::string> emit_reports(const std::string& out_dir, const std::vector<Report>& reports) {
  std::vector<std::string> written;
  int gap_count = 0;
  int collision_count = 0;
  int separation_count = 0;
  int margin_count = 0;
  auto name_for = [](const std::string& base, int count) {
    return count == 1 ? base + ".csv" : base + "_" + std::to_string(count) + ".csv";
  };
  for (const Report& report : reports) {
    std::visit(
        [&](const auto& value) {
          using T = std::decay_t<decltype(value)>;
          if constexpr (std::is_same_v<T, GapReport>) {
            const std::string path = out_dir + "/" + name_for("gap_report", ++gap_count);
            write_text_file(path, gap_report_to_csv(value));
            written.push_back(path);
          } else if constexpr (std::is_same_v<T, CollisionReport>) {
            const std::string path = out_dir + "/" + name_for("collision_report", ++collision_count);
            write_text_file(path, collision_report_to_csv(value));
            written.push_back(path);
            const std::string pairs_path = out_dir + "/" + name_for("collision_pairs", collision_count);
            write_text_file(pairs_path, collision_pairs_to_csv(value));
            written.push_back(pairs_path);
          } else if constexpr (std::is_same_v<T, SeparationReport>) {
            const std::string path = out_dir + "/" + name_for("separation_report", ++separation_count);
            write_text_file(path, separation_report_to_csv(value));
            written.push_back(path);
          } else {
            const std::string path = out_dir + "/" + name_for("margin_report", ++margin_count);
            write_text_file(path, margin_report_to_csv(value));
            written.push_back(path);
          }
        },
        report);
  }
  return written;
}

}  // namespace gvn
