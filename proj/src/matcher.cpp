#include "mvpose/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "mvpose/util.hpp"
#include "mvpose/view_features.hpp"

namespace mvpose::matcher {

using scene::FrameSample;
using scene::PersonTrack;
using scene::SkeletonDetection;

int MatchGraph::head_count() const {
  int n = 0;
  for (const Node& node : nodes) n += node.is_edge ? 0 : 1;
  return n;
}

MatchGraph build_graph(const FrameSample& sample, const geometry::CameraRig& rig) {
  struct HeadRef {
    int camera_index;
    int detection_index;
    const SkeletonDetection* detection;
  };
  std::vector<HeadRef> heads;
  int n_k = -1;
  for (const auto& view : sample.views) {
    const int camera_index = rig.index_of(view.camera_id);
    if (camera_index < 0) {
      throw SchemaError(0, "views.camera_id",
                        "camera '" + view.camera_id + "' is not in the rig");
    }
    for (std::size_t d = 0; d < view.skeletons.size(); ++d) {
      const SkeletonDetection& det = view.skeletons[d];
      if (n_k < 0) {
        n_k = static_cast<int>(det.keypoints.size());
      } else if (static_cast<int>(det.keypoints.size()) != n_k) {
        throw SchemaError(0, "views.skeletons.kps",
                          "inconsistent keypoint counts in one frame");
      }
      if (det.visible_count() == 0) {
        continue;  // an empty skeleton carries no matching information
      }
      heads.push_back({camera_index, static_cast<int>(d), &det});
    }
  }
  if (heads.empty()) {
    throw EmptyFrame("build_graph: frame has no usable detections");
  }

  MatchGraph graph;
  graph.n_k = n_k;
  graph.n_c = rig.size();
  graph.feature_dim = graph.n_k * graph.n_c * features::kViewSlots + 2;

  const int head_count = static_cast<int>(heads.size());
  std::vector<std::pair<int, int>> edges;  // head node index pairs
  for (int a = 0; a < head_count; ++a) {
    for (int b = a + 1; b < head_count; ++b) {
      if (heads[a].camera_index != heads[b].camera_index) {
        edges.emplace_back(a, b);
      }
    }
  }
  const int node_count = head_count + static_cast<int>(edges.size());
  graph.features = diff::Tensor::zeros({node_count, graph.feature_dim});
  graph.nodes.resize(node_count);

  std::vector<std::vector<int>> adjacency(node_count);
  bool all_tagged = true;
  for (int h = 0; h < head_count; ++h) {
    MatchGraph::Node& node = graph.nodes[h];
    node.is_edge = false;
    node.camera_index = heads[h].camera_index;
    node.detection_index = heads[h].detection_index;
    node.camera_id = rig.cameras[heads[h].camera_index].id;
    node.person_id = heads[h].detection->person_id.value_or(-1);
    all_tagged = all_tagged && heads[h].detection->person_id.has_value();

    double* row = graph.features.data() + static_cast<long>(h) * graph.feature_dim;
    const auto& camera = rig.cameras[heads[h].camera_index];
    for (int k = 0; k < graph.n_k; ++k) {
      const int offset =
          (heads[h].camera_index * graph.n_k + k) * features::kViewSlots;
      features::fill_view_block(std::span<double>(row + offset, features::kViewSlots),
                                heads[h].detection->keypoints[k], camera);
    }
    row[graph.feature_dim - 2] = 1.0;  // head one-hot
    adjacency[h].push_back(h);
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const int node_index = head_count + static_cast<int>(e);
    MatchGraph::Node& node = graph.nodes[node_index];
    node.is_edge = true;
    node.head_a = edges[e].first;
    node.head_b = edges[e].second;
    double* row =
        graph.features.data() + static_cast<long>(node_index) * graph.feature_dim;
    row[graph.feature_dim - 1] = 1.0;  // edge one-hot
    adjacency[node_index].push_back(node_index);
    adjacency[node_index].push_back(edges[e].first);
    adjacency[node_index].push_back(edges[e].second);
    adjacency[edges[e].first].push_back(node_index);
    adjacency[edges[e].second].push_back(node_index);
    graph.edge_node_indices.push_back(node_index);
  }
  graph.adjacency = diff::GraphAdjacency::from_lists(adjacency);

  if (all_tagged) {
    graph.labels.reserve(graph.edge_node_indices.size());
    for (const int e : graph.edge_node_indices) {
      const auto& node = graph.nodes[e];
      const bool same = graph.nodes[node.head_a].person_id ==
                        graph.nodes[node.head_b].person_id;
      graph.labels.push_back(same ? 1.0 : 0.0);
    }
  }
  return graph;
}

MatchGraph synthesize_training_graph(std::span<const PersonTrack> tracks,
                                     const geometry::CameraRig& rig,
                                     std::mt19937_64& rng, int max_people) {
  std::vector<std::vector<int>> usable_frames(tracks.size());
  std::vector<int> usable_tracks;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    for (std::size_t f = 0; f < tracks[t].frames.size(); ++f) {
      int visible = 0;
      for (const auto& view : tracks[t].frames[f].views) {
        for (const auto& det : view.skeletons) {
          visible += det.visible_count();
        }
      }
      if (visible > 0) {
        usable_frames[t].push_back(static_cast<int>(f));
      }
    }
    if (!usable_frames[t].empty()) {
      usable_tracks.push_back(static_cast<int>(t));
    }
  }
  if (usable_tracks.empty()) {
    throw InsufficientTracks("no track contains a usable frame");
  }
  std::uniform_int_distribution<int> person_count(1, max_people);
  const int wanted = person_count(rng);
  const int persons = std::min<int>(wanted, static_cast<int>(usable_tracks.size()));
  std::shuffle(usable_tracks.begin(), usable_tracks.end(), rng);

  FrameSample merged;
  merged.frame_id = 0;
  for (const auto& camera : rig.cameras) {
    scene::ViewDetections view;
    view.camera_id = camera.id;
    merged.views.push_back(std::move(view));
  }
  for (int p = 0; p < persons; ++p) {
    const int track_index = usable_tracks[p];
    const auto& frames = usable_frames[track_index];
    std::uniform_int_distribution<int> frame_pick(0, static_cast<int>(frames.size()) - 1);
    const FrameSample& frame = tracks[track_index].frames[frames[frame_pick(rng)]];
    for (const auto& view : frame.views) {
      for (const auto& det : view.skeletons) {
        if (det.visible_count() == 0) {
          continue;
        }
        for (auto& merged_view : merged.views) {
          if (merged_view.camera_id == view.camera_id) {
            SkeletonDetection tagged = det;
            tagged.person_id = p;  // distinct per source track
            merged_view.skeletons.push_back(std::move(tagged));
            break;
          }
        }
      }
    }
  }
  return build_graph(merged, rig);
}

nlohmann::json MatcherArch::to_json() const {
  return {{"type", "matcher_gat"}, {"n_k", n_k},     {"n_c", n_c},
          {"feature_dim", feature_dim()}, {"hidden", hidden}, {"heads", heads},
          {"out", 1}};
}

MatcherArch MatcherArch::from_json(const nlohmann::json& doc) {
  if (!doc.contains("type") || doc["type"] != "matcher_gat") {
    throw CheckpointMismatch("checkpoint is not a matcher checkpoint");
  }
  MatcherArch arch;
  arch.n_k = doc.at("n_k").get<int>();
  arch.n_c = doc.at("n_c").get<int>();
  arch.hidden = doc.at("hidden").get<std::vector<int>>();
  arch.heads = doc.at("heads").get<std::vector<int>>();
  return arch;
}

MatcherModel MatcherModel::make(const MatcherArch& arch, std::uint64_t seed) {
  MatcherModel model;
  model.arch = arch;
  std::mt19937_64 rng(util::mix_seed(seed, 0x6A7));
  model.gat = diff::Gat::make(arch.feature_dim(), arch.hidden, arch.heads, 1, rng);
  return model;
}

diff::Checkpoint MatcherModel::to_checkpoint() const {
  return diff::Checkpoint::capture(arch.to_json(), gat.named_parameters());
}

MatcherModel MatcherModel::from_checkpoint(const diff::Checkpoint& ckpt) {
  MatcherModel model = make(MatcherArch::from_json(ckpt.arch), 0);
  ckpt.restore(model.arch.to_json(), model.gat.named_parameters());
  return model;
}

void score_graph(const MatcherModel& model, MatchGraph& graph) {
  if (graph.feature_dim != model.arch.feature_dim()) {
    throw ShapeMismatch("score_graph: graph features do not fit the model (" +
                        std::to_string(graph.feature_dim) + " vs " +
                        std::to_string(model.arch.feature_dim()) + ")");
  }
  const diff::Tensor out = model.gat.forward(graph.features, graph.adjacency);
  graph.scores.clear();
  graph.scores.reserve(graph.edge_node_indices.size());
  for (const int e : graph.edge_node_indices) {
    graph.scores.push_back(out.at(e, 0));
  }
}

std::vector<PersonGroup> group_views(const MatchGraph& graph, double threshold) {
  const int head_count = graph.head_count();
  std::vector<int> parent(head_count);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::uint64_t> camera_mask(head_count);
  for (int h = 0; h < head_count; ++h) {
    camera_mask[h] = 1ull << graph.nodes[h].camera_index;
  }
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };

  struct Candidate {
    double score;
    int head_a;
    int head_b;
  };
  std::vector<Candidate> candidates;
  for (std::size_t e = 0; e < graph.edge_node_indices.size(); ++e) {
    const double score = graph.scores.empty() ? 0.0 : graph.scores[e];
    if (score >= threshold) {
      const auto& node = graph.nodes[graph.edge_node_indices[e]];
      candidates.push_back({score, node.head_a, node.head_b});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a,
                                                     const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.head_a != b.head_a) return a.head_a < b.head_a;
    return a.head_b < b.head_b;
  });
  for (const Candidate& cand : candidates) {
    const int ra = find(cand.head_a);
    const int rb = find(cand.head_b);
    if (ra == rb) {
      continue;
    }
    if (camera_mask[ra] & camera_mask[rb]) {
      continue;  // would place two detections in one camera
    }
    parent[rb] = ra;
    camera_mask[ra] |= camera_mask[rb];
  }

  std::vector<std::vector<int>> members(head_count);
  for (int h = 0; h < head_count; ++h) {
    members[find(h)].push_back(h);
  }
  std::vector<PersonGroup> groups;
  for (int root = 0; root < head_count; ++root) {
    if (members[root].empty()) {
      continue;
    }
    PersonGroup group;
    for (const int h : members[root]) {
      group.members.emplace_back(graph.nodes[h].camera_id,
                                 graph.nodes[h].detection_index);
    }
    // mean score of internal edges feeds downstream as confidence
    double sum = 0.0;
    int count = 0;
    for (std::size_t e = 0; e < graph.edge_node_indices.size(); ++e) {
      const auto& node = graph.nodes[graph.edge_node_indices[e]];
      if (find(node.head_a) == root && find(node.head_b) == root) {
        sum += graph.scores.empty() ? 0.0 : graph.scores[e];
        ++count;
      }
    }
    group.confidence = count > 0 ? sum / count : 0.0;
    groups.push_back(std::move(group));
  }
  std::sort(groups.begin(), groups.end(), [](const PersonGroup& a,
                                             const PersonGroup& b) {
    return a.members.front() < b.members.front();
  });
  return groups;
}

std::vector<PersonGroup> true_groups(const FrameSample& sample) {
  std::map<int, PersonGroup> by_person;
  for (const auto& view : sample.views) {
    for (std::size_t d = 0; d < view.skeletons.size(); ++d) {
      const auto& det = view.skeletons[d];
      if (!det.person_id.has_value() || det.visible_count() == 0) {
        continue;
      }
      by_person[*det.person_id].members.emplace_back(view.camera_id,
                                                     static_cast<int>(d));
    }
  }
  std::vector<PersonGroup> groups;
  for (auto& [person, group] : by_person) {
    group.confidence = 1.0;
    groups.push_back(std::move(group));
  }
  return groups;
}

namespace {

double edge_accuracy(const MatcherModel& model, std::vector<MatchGraph>& graphs,
                     double threshold) {
  long correct = 0;
  long total = 0;
  for (MatchGraph& graph : graphs) {
    score_graph(model, graph);
    for (std::size_t e = 0; e < graph.scores.size(); ++e) {
      const bool predicted = graph.scores[e] >= threshold;
      const bool actual = graph.labels[e] >= 0.5;
      correct += predicted == actual ? 1 : 0;
      ++total;
    }
  }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                   : 0.0;
}

std::vector<std::vector<double>> snapshot_params(const std::vector<diff::Tensor>& params) {
  std::vector<std::vector<double>> snap;
  snap.reserve(params.size());
  for (const auto& p : params) {
    snap.push_back(p.values());
  }
  return snap;
}

void restore_params(std::vector<diff::Tensor>& params,
                    const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(snap[i].begin(), snap[i].end(), params[i].data());
  }
}

}  // namespace

MatcherTrainResult train_matcher(std::span<const PersonTrack> tracks,
                                 const geometry::CameraRig& rig,
                                 const MatcherArch& arch,
                                 const MatcherTrainConfig& config) {
  if (tracks.empty()) {
    throw InsufficientTracks("train_matcher: no tracks supplied");
  }
  MatcherTrainResult result;

  std::mt19937_64 rng(util::mix_seed(config.seed, 0x3A7C4));
  std::vector<int> order(tracks.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int val_count = static_cast<int>(std::lround(config.val_fraction * tracks.size()));
  val_count = std::clamp<int>(val_count, tracks.size() >= 2 ? 1 : 0,
                              static_cast<int>(tracks.size()) - 1);
  std::vector<PersonTrack> val_tracks, train_tracks;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (static_cast<int>(i) < val_count) {
      val_tracks.push_back(tracks[order[i]]);
    } else {
      train_tracks.push_back(tracks[order[i]]);
    }
  }
  if (train_tracks.size() < 2) {
    result.warnings.push_back(
        "DataImbalance: fewer than two training tracks, every edge label is "
        "positive");
  }

  MatcherModel model = MatcherModel::make(arch, config.seed);
  std::vector<diff::Tensor> params = model.gat.parameters();
  diff::AdamConfig adam_config;
  adam_config.lr = config.lr;
  diff::Adam adam(params, adam_config);

  // fixed validation graphs; fall back to training tracks when no split fits
  std::mt19937_64 val_rng(util::mix_seed(config.seed, 0xE7A1));
  std::span<const PersonTrack> val_source =
      val_tracks.empty() ? std::span<const PersonTrack>(train_tracks)
                         : std::span<const PersonTrack>(val_tracks);
  std::vector<MatchGraph> val_graphs;
  for (int g = 0; g < config.val_graphs; ++g) {
    MatchGraph graph =
        synthesize_training_graph(val_source, rig, val_rng, config.max_people);
    if (!graph.edge_node_indices.empty()) {
      val_graphs.push_back(std::move(graph));
    }
  }

  double best_acc = -1.0;
  std::vector<std::vector<double>> best_params = snapshot_params(params);
  int evals_since_best = 0;
  double loss_accum = 0.0;
  int loss_count = 0;
  bool saw_negative = false;

  for (int step = 1; step <= config.max_steps; ++step) {
    std::vector<diff::Tensor> losses;
    for (int b = 0; b < config.batch_graphs; ++b) {
      MatchGraph graph;
      for (int attempt = 0; attempt < 8; ++attempt) {
        graph = synthesize_training_graph(std::span<const PersonTrack>(train_tracks),
                                          rig, rng, config.max_people);
        if (!graph.edge_node_indices.empty()) {
          break;
        }
      }
      if (graph.edge_node_indices.empty()) {
        continue;
      }
      for (const double label : graph.labels) {
        saw_negative = saw_negative || label < 0.5;
      }
      const diff::Tensor logits =
          model.gat.forward_logits(graph.features, graph.adjacency);
      const diff::Tensor edge_logits =
          diff::row_gather(logits, graph.edge_node_indices);
      losses.push_back(diff::bce_with_logits_mean(edge_logits, graph.labels));
    }
    if (losses.empty()) {
      continue;
    }
    const diff::Tensor loss =
        diff::scale(diff::add_n(losses), 1.0 / static_cast<double>(losses.size()));
    if (!std::isfinite(loss.item())) {
      throw NonFiniteLoss("train_matcher: non-finite loss at step " +
                          std::to_string(step));
    }
    loss_accum += loss.item();
    ++loss_count;
    adam.zero_grad();
    diff::backward(loss);
    adam.step();

    if (step % config.eval_every == 0 || step == config.max_steps) {
      const double acc = edge_accuracy(model, val_graphs, 0.5);
      result.curve.push_back({step, loss_accum / std::max(1, loss_count), acc});
      loss_accum = 0.0;
      loss_count = 0;
      if (acc > best_acc + 1e-9) {
        best_acc = acc;
        best_params = snapshot_params(params);
        evals_since_best = 0;
      } else {
        ++evals_since_best;
        if (evals_since_best >= config.patience) {
          break;
        }
      }
    }
  }
  if (!saw_negative &&
      result.warnings.empty()) {
    result.warnings.push_back(
        "DataImbalance: training stream produced no negative edge labels");
  }
  restore_params(params, best_params);
  result.val_edge_accuracy = best_acc;
  result.checkpoint = model.to_checkpoint();
  return result;
}

}  // namespace mvpose::matcher
