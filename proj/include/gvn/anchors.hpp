#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gvn/graph_layer.hpp"
#include "gvn/regions.hpp"

namespace gvn {

// Draws m anchor columns i.i.d. with replacement from the data rows (the
// empirical input distribution). Deterministic given seed; every column is
// an exact copy of some data row.
Eigen::MatrixXd sample_anchors_iid(const Eigen::Ref<const Eigen::MatrixXd>& data, Eigen::Index m,
                                   std::uint64_t seed);

// Fill distance of the anchor set relative to a probe cloud: max over probe
// rows of the Euclidean distance to the nearest anchor column.
double covering_radius(const Eigen::Ref<const Eigen::MatrixXd>& anchors,
                       const Eigen::Ref<const Eigen::MatrixXd>& probes);

struct GeneralPositionResult {
  bool ok = false;
  double gram_det_magnitude = 0.0;
};

// Gram-matrix nonsingularity check on the columns; ok iff |det| > 1e-10
// (the 64-bit determinant noise floor at desk scales).
GeneralPositionResult check_general_position(const Eigen::Ref<const Eigen::MatrixXd>& points);

enum class LossKind { MeanSquaredError, CrossEntropy };

struct TrainingConfig {
  double learning_rate = 0.01;  // >= 0; zero is the identity update
  int epochs = 1;               // >= 1
  int batch_size = 1;           // >= 1
  std::optional<double> gradient_clip;  // per-column norm clip, > 0 when set
  LossKind loss = LossKind::MeanSquaredError;
  std::uint64_t seed = 0;
};

inline constexpr const char* kFlagUnboundedIterates = "unbounded-iterates";
inline constexpr const char* kFlagSnapshotCollision = "snapshot-collision";

struct TraceFlag {
  std::string name;  // kFlagUnboundedIterates or kFlagSnapshotCollision
  int epoch = 0;     // 0..epochs
};

// Per-epoch history, including the initial state, so every list has length
// epochs + 1.
struct TrainingTrace {
  std::vector<Eigen::MatrixXd> anchor_snapshots;
  std::vector<double> losses;           // full-data loss at each snapshot
  std::vector<double> covering_radii;   // anchors vs. the training inputs
  std::vector<Eigen::VectorXd> bbox_min;
  std::vector<Eigen::VectorXd> bbox_max;
  std::vector<TraceFlag> flags;
};

struct TrainResult {
  GraphLayer layer;
  Eigen::MatrixXd readout;  // m x K
  TrainingTrace trace;
};

// Full-data loss of readout(sigma(x A + b)) against one-hot targets;
// the training objective below, exposed so tests can difference it.
double training_loss(const GraphLayer& layer, const Eigen::Ref<const Eigen::MatrixXd>& readout,
                     const Eigen::Ref<const Eigen::MatrixXd>& inputs, const std::vector<int>& labels,
                     LossKind loss);

// Mini-batch SGD on anchors, bias and readout. Requires an inner-product
// layer with Identity, ReLU or Sigmoid activation (closed-form gradients).
// Flags rather than errors: "unbounded-iterates" when an anchor leaves the
// data bounding box inflated by a factor of 2, "snapshot-collision" when two
// anchor columns coincide within 1e-9. Aborts on non-finite gradients.
TrainResult train_layer_sgd(const GraphLayer& layer, const Eigen::Ref<const Eigen::MatrixXd>& readout,
                            const LabeledDataset& data, const TrainingConfig& cfg);

}  // namespace gvn
