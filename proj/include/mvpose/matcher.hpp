#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvpose/detections.hpp"
#include "mvpose/geometry.hpp"
#include "mvpose/nn.hpp"

namespace mvpose::matcher {

// Skeleton-view matching graph: one head node per detection, one edge node
// per cross-camera head pair. Edge nodes carry the match score.
struct MatchGraph {
  struct Node {
    bool is_edge = false;
    // head nodes
    int camera_index = -1;
    int detection_index = -1;
    std::string camera_id;
    int person_id = -1;  // synthetic tag, -1 when unknown
    // edge nodes
    int head_a = -1;
    int head_b = -1;
  };

  int n_k = 0;
  int n_c = 0;
  int feature_dim = 0;
  diff::Tensor features;  // [nodes, feature_dim]
  diff::GraphAdjacency adjacency;
  std::vector<Node> nodes;
  std::vector<int> edge_node_indices;
  std::vector<double> labels;  // aligned with edge_node_indices, empty if unknown
  std::vector<double> scores;  // aligned with edge_node_indices, empty until scored

  int head_count() const;
};

// Builds the matching graph for one frame. Detections without any visible
// keypoint are skipped (they carry no information). Throws EmptyFrame when
// nothing usable remains. Labels are filled when every detection carries a
// person tag.
MatchGraph build_graph(const scene::FrameSample& sample,
                       const geometry::CameraRig& rig);

// Fewer than one usable track.
class InsufficientTracks : public Error {
 public:
  using Error::Error;
};

// Combines one random frame from each of 1..max_people random tracks into a
// labelled training graph: edges inside one source person score 1, edges
// across persons score 0.
MatchGraph synthesize_training_graph(std::span<const scene::PersonTrack> tracks,
                                     const geometry::CameraRig& rig,
                                     std::mt19937_64& rng, int max_people = 10);

struct MatcherArch {
  int n_k = 0;
  int n_c = 0;
  std::vector<int> hidden{40, 40, 40, 30};
  std::vector<int> heads{10, 10, 8, 5};

  int feature_dim() const { return n_k * n_c * 10 + 2; }
  nlohmann::json to_json() const;
  static MatcherArch from_json(const nlohmann::json& doc);
};

struct MatcherModel {
  MatcherArch arch;
  diff::Gat gat;

  static MatcherModel make(const MatcherArch& arch, std::uint64_t seed);
  diff::Checkpoint to_checkpoint() const;
  static MatcherModel from_checkpoint(const diff::Checkpoint& ckpt);
};

// Runs the GAT and fills graph.scores (sigmoid output read at edge nodes).
void score_graph(const MatcherModel& model, MatchGraph& graph);

struct PersonGroup {
  std::vector<std::pair<std::string, int>> members;  // (camera_id, detection)
  double confidence = 0.0;  // mean internal edge score, 0 for singletons
};

// Greedy grouping of scored edges with a one-detection-per-camera constraint.
std::vector<PersonGroup> group_views(const MatchGraph& graph, double threshold);

// The ground-truth partition of the same frame, for evaluation.
std::vector<PersonGroup> true_groups(const scene::FrameSample& sample);

struct MatcherTrainConfig {
  double lr = 3e-4;
  int batch_graphs = 4;
  int max_steps = 4000;
  int eval_every = 25;
  int patience = 20;       // evaluations without improvement
  int val_graphs = 40;
  double val_fraction = 0.2;
  int max_people = 10;
  std::uint64_t seed = 0;
};

struct MatcherTrainResult {
  diff::Checkpoint checkpoint;
  std::vector<diff::TrainCurvePoint> curve;
  double val_edge_accuracy = 0.0;
  std::vector<std::string> warnings;
};

// Trains the edge scorer on synthesized multi-person graphs with binary cross
// entropy. Early-stops on the validation edge-accuracy plateau and returns
// the best-scoring parameters.
MatcherTrainResult train_matcher(std::span<const scene::PersonTrack> tracks,
                                 const geometry::CameraRig& rig,
                                 const MatcherArch& arch,
                                 const MatcherTrainConfig& config);

}  // namespace mvpose::matcher
