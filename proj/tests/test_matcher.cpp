#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "mvpose/matcher.hpp"
#include "mvpose/synth.hpp"

using namespace mvpose;
using namespace mvpose::matcher;
using scene::FrameSample;
using scene::SynthConfig;

namespace {

// A frame with `dets_per_camera` tagged synthetic detections in every camera.
FrameSample merged_frame(const SynthConfig& cfg, const geometry::CameraRig& rig,
                         int persons) {
  FrameSample merged;
  merged.frame_id = 0;
  for (const auto& camera : rig.cameras) {
    scene::ViewDetections view;
    view.camera_id = camera.id;
    merged.views.push_back(view);
  }
  for (int p = 0; p < persons; ++p) {
    const auto result = scene::generate_track(cfg, rig, p, 1);
    const FrameSample& frame = result.track.frames.front();
    for (std::size_t v = 0; v < frame.views.size(); ++v) {
      for (const auto& det : frame.views[v].skeletons) {
        if (det.visible_count() == 0) continue;
        auto tagged = det;
        tagged.person_id = p;
        merged.views[v].skeletons.push_back(tagged);
      }
    }
    merged.ground_truth.push_back({p, result.ground_truth.front()});
  }
  return merged;
}

std::set<std::set<std::pair<std::string, int>>> partition_of(
    const std::vector<PersonGroup>& groups) {
  std::set<std::set<std::pair<std::string, int>>> partition;
  for (const auto& group : groups) {
    partition.insert(
        std::set<std::pair<std::string, int>>(group.members.begin(), group.members.end()));
  }
  return partition;
}

}  // namespace

TEST_CASE("graph shape for one detection in each of two cameras") {
  SynthConfig cfg;
  cfg.cameras = 2;
  cfg.seed = 21;
  const auto rig = scene::make_rig(cfg);
  const auto frame = merged_frame(cfg, rig, 1);
  const MatchGraph graph = build_graph(frame, rig);
  CHECK(graph.head_count() == 2);
  CHECK(graph.edge_node_indices.size() == 1);
  CHECK(graph.feature_dim == 15 * 2 * 10 + 2);
  REQUIRE(graph.labels.size() == 1);
  CHECK(graph.labels[0] == 1.0);
}

TEST_CASE("graph shape for two detections in each of three cameras") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 22;
  const auto rig = scene::make_rig(cfg);
  const auto frame = merged_frame(cfg, rig, 2);
  const MatchGraph graph = build_graph(frame, rig);
  CHECK(graph.head_count() == 6);
  CHECK(graph.edge_node_indices.size() == 12);  // 4 pairs x 3 camera pairs
  int positive = 0;
  for (double label : graph.labels) positive += label > 0.5 ? 1 : 0;
  CHECK(positive == 6);  // 3 within-person pairs per person
}

TEST_CASE("a single detection yields one head node and no edges") {
  SynthConfig cfg;
  cfg.cameras = 1;
  cfg.seed = 23;
  const auto rig = scene::make_rig(cfg);
  const auto frame = merged_frame(cfg, rig, 1);
  const MatchGraph graph = build_graph(frame, rig);
  CHECK(graph.head_count() == 1);
  CHECK(graph.edge_node_indices.empty());
}

TEST_CASE("empty frames are rejected") {
  SynthConfig cfg;
  cfg.cameras = 2;
  const auto rig = scene::make_rig(cfg);
  FrameSample frame;
  frame.frame_id = 0;
  CHECK_THROWS_AS(build_graph(frame, rig), EmptyFrame);
}

TEST_CASE("graph structural invariants hold on random scenes") {
  SynthConfig cfg;
  cfg.cameras = 4;
  cfg.seed = 24;
  cfg.pixel_noise_sigma = 1.0;
  cfg.keypoint_drop_prob = 0.2;
  cfg.occlusion_prob = 0.15;
  const auto rig = scene::make_rig(cfg);
  scene::SceneConfig scene_cfg;
  scene_cfg.persons_min = 1;
  scene_cfg.persons_max = 6;
  scene_cfg.frames = 30;
  const auto frames = scene::generate_scene_frames(cfg, rig, scene_cfg, 3);
  for (const auto& frame : frames) {
    if (frame.total_detections() == 0) continue;
    const MatchGraph graph = build_graph(frame, rig);
    const int F = graph.feature_dim;
    for (std::size_t n = 0; n < graph.nodes.size(); ++n) {
      const double* row = graph.features.data() + n * F;
      const auto& node = graph.nodes[n];
      if (node.is_edge) {
        // all zero except the edge one-hot
        for (int i = 0; i < F - 2; ++i) CHECK(row[i] == 0.0);
        CHECK(row[F - 2] == 0.0);
        CHECK(row[F - 1] == 1.0);
        CHECK(node.head_a != node.head_b);
        CHECK_FALSE(graph.nodes[node.head_a].is_edge);
        CHECK_FALSE(graph.nodes[node.head_b].is_edge);
        CHECK(graph.nodes[node.head_a].camera_index !=
              graph.nodes[node.head_b].camera_index);
      } else {
        CHECK(row[F - 2] == 1.0);
        CHECK(row[F - 1] == 0.0);
        // features outside the node's own camera block stay zero
        const int block = graph.n_k * 10;
        for (int c = 0; c < graph.n_c; ++c) {
          if (c == node.camera_index) continue;
          for (int i = 0; i < block; ++i) {
            CHECK(row[c * block + i] == 0.0);
          }
        }
        // detected keypoints carry unit ray directions
        for (int k = 0; k < graph.n_k; ++k) {
          const double* slot = row + (node.camera_index * graph.n_k + k) * 10;
          if (slot[0] == 1.0) {
            const double norm = std::sqrt(slot[7] * slot[7] + slot[8] * slot[8] +
                                          slot[9] * slot[9]);
            CHECK(norm == doctest::Approx(1.0).epsilon(1e-9));
          } else {
            for (int i = 0; i < 10; ++i) CHECK(slot[i] == 0.0);
          }
        }
      }
    }
  }
}

TEST_CASE("synthesized single-person graphs are all positive") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 25;
  const auto rig = scene::make_rig(cfg);
  std::vector<scene::PersonTrack> tracks;
  tracks.push_back(scene::generate_track(cfg, rig, 0, 5).track);
  std::mt19937_64 rng(4);
  const MatchGraph graph = synthesize_training_graph(tracks, rig, rng);
  REQUIRE_FALSE(graph.labels.empty());
  for (double label : graph.labels) {
    CHECK(label == 1.0);
  }
}

TEST_CASE("synthesize_training_graph needs a usable track") {
  SynthConfig cfg;
  cfg.cameras = 2;
  const auto rig = scene::make_rig(cfg);
  std::vector<scene::PersonTrack> tracks;
  std::mt19937_64 rng(4);
  CHECK_THROWS_AS(synthesize_training_graph(tracks, rig, rng), InsufficientTracks);
}

TEST_CASE("grouping separates two clean persons") {
  SynthConfig cfg;
  cfg.cameras = 2;
  cfg.seed = 26;
  const auto rig = scene::make_rig(cfg);
  const auto frame = merged_frame(cfg, rig, 2);
  MatchGraph graph = build_graph(frame, rig);
  REQUIRE(graph.head_count() == 4);
  graph.scores.resize(graph.edge_node_indices.size());
  for (std::size_t e = 0; e < graph.edge_node_indices.size(); ++e) {
    graph.scores[e] = graph.labels[e] > 0.5 ? 0.9 : 0.1;
  }
  const auto groups = group_views(graph, 0.5);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].members.size() == 2);
  CHECK(groups[1].members.size() == 2);
  CHECK(groups[0].confidence == doctest::Approx(0.9));
  CHECK(partition_of(groups) == partition_of(true_groups(frame)));
}

TEST_CASE("greedy grouping respects the camera-uniqueness constraint") {
  // camera X holds detections A and C, camera Y holds B;
  // A-B scores 0.9, C-B scores 0.8: B joins A, C stays single
  SynthConfig cfg;
  cfg.cameras = 2;
  cfg.seed = 27;
  const auto rig = scene::make_rig(cfg);
  FrameSample frame = merged_frame(cfg, rig, 2);
  // drop person 1 from camera 1 so camera 0 has {A, C}, camera 1 has {B}
  frame.views[1].skeletons.resize(1);
  MatchGraph graph = build_graph(frame, rig);
  REQUIRE(graph.head_count() == 3);
  REQUIRE(graph.edge_node_indices.size() == 2);
  graph.scores.assign(2, 0.0);
  for (std::size_t e = 0; e < graph.edge_node_indices.size(); ++e) {
    const auto& node = graph.nodes[graph.edge_node_indices[e]];
    const auto& head_a = graph.nodes[node.head_a];
    const auto& head_b = graph.nodes[node.head_b];
    const int x_det = head_a.camera_index == 0 ? head_a.detection_index
                                               : head_b.detection_index;
    graph.scores[e] = x_det == 0 ? 0.9 : 0.8;
  }
  const auto groups = group_views(graph, 0.5);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].members.size() + groups[1].members.size() == 3);
  for (const auto& group : groups) {
    std::set<std::string> cameras;
    for (const auto& [camera_id, det] : group.members) {
      CHECK(cameras.insert(camera_id).second);
    }
    if (group.members.size() == 2) {
      // the winning pair contains detection 0 of camera 0
      CHECK(std::find(group.members.begin(), group.members.end(),
                      std::make_pair(std::string("cam0"), 0)) != group.members.end());
    } else {
      CHECK(group.members.front() == std::make_pair(std::string("cam0"), 1));
      CHECK(group.confidence == 0.0);
    }
  }
}

TEST_CASE("scores below threshold leave every head alone") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 28;
  const auto rig = scene::make_rig(cfg);
  const auto frame = merged_frame(cfg, rig, 2);
  MatchGraph graph = build_graph(frame, rig);
  graph.scores.assign(graph.edge_node_indices.size(), 0.2);
  const auto groups = group_views(graph, 0.5);
  CHECK(groups.size() == static_cast<std::size_t>(graph.head_count()));
  for (const auto& group : groups) {
    CHECK(group.members.size() == 1);
  }
}

TEST_CASE("group_views output is a partition with unique cameras") {
  SynthConfig cfg;
  cfg.cameras = 5;
  cfg.seed = 29;
  cfg.keypoint_drop_prob = 0.15;
  cfg.occlusion_prob = 0.2;
  const auto rig = scene::make_rig(cfg);
  scene::SceneConfig scene_cfg;
  scene_cfg.persons_min = 2;
  scene_cfg.persons_max = 7;
  scene_cfg.frames = 15;
  const auto frames = scene::generate_scene_frames(cfg, rig, scene_cfg, 5);
  const MatcherArch arch{15, 5, {8, 8}, {2, 2}};
  const MatcherModel model = MatcherModel::make(arch, 99);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> threshold_draw(0.2, 0.8);
  for (const auto& frame : frames) {
    if (frame.total_detections() == 0) continue;
    MatchGraph graph = build_graph(frame, rig);
    score_graph(model, graph);
    const auto groups = group_views(graph, threshold_draw(rng));
    std::set<std::pair<std::string, int>> seen;
    for (const auto& group : groups) {
      std::set<std::string> cameras;
      for (const auto& member : group.members) {
        CHECK(seen.insert(member).second);           // disjoint
        CHECK(cameras.insert(member.first).second);  // unique camera
      }
    }
    CHECK(seen.size() == static_cast<std::size_t>(graph.head_count()));  // cover
  }
}

TEST_CASE("grouping is invariant to detection order") {
  SynthConfig cfg;
  cfg.cameras = 4;
  cfg.seed = 30;
  const auto rig = scene::make_rig(cfg);
  scene::SceneConfig scene_cfg;
  scene_cfg.persons_min = 3;
  scene_cfg.persons_max = 4;
  scene_cfg.frames = 10;
  const auto frames = scene::generate_scene_frames(cfg, rig, scene_cfg, 8);
  const MatcherArch arch{15, 4, {8, 8}, {2, 2}};
  const MatcherModel model = MatcherModel::make(arch, 5);
  for (const auto& frame : frames) {
    if (frame.total_detections() == 0) continue;
    MatchGraph graph = build_graph(frame, rig);
    score_graph(model, graph);
    const auto base = partition_of(group_views(graph, 0.5));

    // reverse detection order inside every view and map indices back
    FrameSample reversed = frame;
    for (auto& view : reversed.views) {
      std::reverse(view.skeletons.begin(), view.skeletons.end());
    }
    MatchGraph graph_rev = build_graph(reversed, rig);
    score_graph(model, graph_rev);
    auto groups_rev = group_views(graph_rev, 0.5);
    for (auto& group : groups_rev) {
      for (auto& [camera_id, det] : group.members) {
        const auto* view = frame.view_of(camera_id);
        det = static_cast<int>(view->skeletons.size()) - 1 - det;
      }
    }
    CHECK(partition_of(groups_rev) == base);
  }
}

TEST_CASE("matcher training smoke run on a tiny architecture") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 31;
  cfg.pixel_noise_sigma = 0.5;
  const auto rig = scene::make_rig(cfg);
  std::vector<scene::PersonTrack> tracks;
  for (int t = 0; t < 6; ++t) {
    tracks.push_back(scene::generate_track(cfg, rig, t, 8).track);
  }
  MatcherArch arch;
  arch.n_k = 15;
  arch.n_c = 3;
  arch.hidden = {8, 8};
  arch.heads = {2, 2};
  MatcherTrainConfig train_cfg;
  train_cfg.max_steps = 40;
  train_cfg.eval_every = 10;
  train_cfg.batch_graphs = 2;
  train_cfg.val_graphs = 6;
  train_cfg.max_people = 4;
  train_cfg.seed = 3;
  const auto result = train_matcher(tracks, rig, arch, train_cfg);
  REQUIRE_FALSE(result.curve.empty());
  CHECK(result.val_edge_accuracy >= 0.0);
  CHECK(result.val_edge_accuracy <= 1.0);
  CHECK(result.warnings.empty());
  CHECK_FALSE(result.checkpoint.params.empty());

  // BCE starts near the uninformative -ln(0.5) with default initialisation
  const MatcherModel fresh = MatcherModel::make(arch, 12);
  std::mt19937_64 rng(6);
  MatchGraph graph = synthesize_training_graph(tracks, rig, rng, 4);
  const auto logits = fresh.gat.forward_logits(graph.features, graph.adjacency);
  const auto loss = diff::bce_with_logits_mean(
      diff::row_gather(logits, graph.edge_node_indices), graph.labels);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(0.3));

  // single-track training warns about degenerate labels
  std::vector<scene::PersonTrack> one_track{tracks.front()};
  MatcherTrainConfig tiny = train_cfg;
  tiny.max_steps = 5;
  tiny.eval_every = 5;
  const auto degenerate = train_matcher(one_track, rig, arch, tiny);
  REQUIRE_FALSE(degenerate.warnings.empty());
  CHECK(degenerate.warnings.front().find("DataImbalance") != std::string::npos);
}

TEST_CASE("checkpoint round trip preserves scores") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 33;
  const auto rig = scene::make_rig(cfg);
  const auto frame = merged_frame(cfg, rig, 2);
  MatchGraph graph = build_graph(frame, rig);
  const MatcherArch arch{15, 3, {8, 8}, {2, 2}};
  const MatcherModel model = MatcherModel::make(arch, 77);
  score_graph(model, graph);

  const auto path = std::filesystem::temp_directory_path() / "mvpose_matcher_ckpt.json";
  model.to_checkpoint().save(path);
  const MatcherModel loaded = MatcherModel::from_checkpoint(diff::Checkpoint::load(path));
  MatchGraph graph2 = build_graph(frame, rig);
  score_graph(loaded, graph2);
  REQUIRE(graph.scores.size() == graph2.scores.size());
  for (std::size_t e = 0; e < graph.scores.size(); ++e) {
    CHECK(graph.scores[e] == graph2.scores[e]);
  }
  std::filesystem::remove(path);
}
