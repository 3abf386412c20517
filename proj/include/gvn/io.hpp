#pragma once

#include <string>
#include <variant>
#include <vector>

#include "gvn/anchors.hpp"
#include "gvn/graph_layer.hpp"
#include "gvn/regions.hpp"
#include "gvn/separators.hpp"
#include "gvn/sufficiency.hpp"

namespace gvn {

// %.17g formatting; round-trips any finite double through parse_float.
std::string format_float(double v);
double parse_float(const std::string& text);

// JSON text forms. Layers carry {input_dim, m, pairwise, activation,
// anchors (column-major nested arrays), bias}; networks wrap a layer list.
std::string layer_to_json(const GraphLayer& layer);
GraphLayer layer_from_json(const std::string& text);
std::string network_to_json(const Network& net);
Network network_from_json(const std::string& text);
std::string region_spec_to_json(const RegionSpec& spec);
RegionSpec region_spec_from_json(const std::string& text);
std::string patch_spec_to_json(const PatchSpec& spec);
PatchSpec patch_spec_from_json(const std::string& text);

// CSV text forms. Datasets use the header x_0..x_{p-1},y,region,q_0..q_{K-1}
// with floats at 17 significant digits; traces add one row per epoch
// including the initial state.
std::string dataset_to_csv(const LabeledDataset& data);
LabeledDataset dataset_from_csv(const std::string& text);
std::string trace_to_csv(const TrainingTrace& trace);
std::string gap_report_to_csv(const GapReport& report);
std::string collision_report_to_csv(const CollisionReport& report);
std::string collision_pairs_to_csv(const CollisionReport& report);
std::string separation_report_to_csv(const SeparationReport& report);
std::string margin_report_to_csv(const MarginReport& report);

// File helpers; writers create or truncate, readers error with the path on
// failure.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

enum class ArtifactKind { Dataset, Layer, Network, PatchSpec, RegionSpec };

using Artifact = std::variant<LabeledDataset, GraphLayer, Network, PatchSpec, RegionSpec>;

// Typed persistence behind one dispatch; load(save(v)) round-trips every
// float field bit-exactly.
void save_artifact(const std::string& path, const Artifact& artifact);
Artifact load_artifact(const std::string& path, ArtifactKind kind);

// One CSV per report, written into out_dir; returns the paths written.
// An empty report set writes nothing.
using Report = std::variant<GapReport, CollisionReport, SeparationReport, MarginReport>;
std::vector<std::string> emit_reports(const std::string& out_dir, const std::vector<Report>& reports);

}  // namespace gvn
