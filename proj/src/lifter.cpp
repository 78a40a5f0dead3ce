#include "mvpose/lifter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvpose/synth.hpp"
#include "mvpose/util.hpp"
#include "mvpose/view_features.hpp"

namespace mvpose::lifter {

using geometry::CameraModel;
using geometry::CameraRig;
using geometry::Vec2;
using geometry::Vec3;
using scene::SkeletonDetection;

namespace {

constexpr double kDepthFloorMm = 1.0;
constexpr double kDepthSharpnessMm = 1.0;
constexpr double kBarrierMarginMm = 10.0;
constexpr double kBarrierSharpnessMm = 2.0;
constexpr double kBarrierWeight = 1e3;

double soft_floor(double z) {
  const double u = (z - kDepthFloorMm) / kDepthSharpnessMm;
  const double softplus =
      u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
  return kDepthFloorMm + kDepthSharpnessMm * softplus;
}

}  // namespace

Vec2 project_with_depth_floor(const CameraModel& camera, const Vec3& point_mm) {
  const Vec3 cam_point = camera.rotation * point_mm + camera.translation;
  const double z = soft_floor(cam_point.z());
  return {camera.fx() * cam_point.x() / z + camera.cx(),
          camera.fy() * cam_point.y() / z + camera.cy()};
}

std::vector<double> build_lift_input(const PersonViews& views,
                                     const CameraRig& rig, int n_k) {
  if (static_cast<int>(views.size()) != rig.size()) {
    throw ShapeMismatch("build_lift_input: views must align with the rig");
  }
  bool any = false;
  for (const SkeletonDetection* det : views) {
    if (det != nullptr) {
      any = true;
      if (static_cast<int>(det->keypoints.size()) != n_k) {
        throw ShapeMismatch("build_lift_input: keypoint count mismatch");
      }
    }
  }
  if (!any) {
    throw EmptyGroup("build_lift_input: person has no views");
  }
  const int n_c = rig.size();
  std::vector<double> input(static_cast<std::size_t>(kLiftSlots) * n_c * n_k, 0.0);
  for (int c = 0; c < n_c; ++c) {
    const SkeletonDetection* det = views[c];
    if (det == nullptr) continue;
    for (int k = 0; k < n_k; ++k) {
      double* block = input.data() + (static_cast<std::size_t>(c) * n_k + k) * kLiftSlots;
      features::fill_view_block(std::span<double>(block, features::kViewSlots),
                                det->keypoints[k], rig.cameras[c]);
    }
  }
  // triangulation prior per keypoint, replicated into every camera block
  for (int k = 0; k < n_k; ++k) {
    std::vector<geometry::Observation> observations;
    for (int c = 0; c < n_c; ++c) {
      const SkeletonDetection* det = views[c];
      if (det != nullptr && det->keypoints[k].visible) {
        observations.push_back(
            {&rig.cameras[c], Vec2(det->keypoints[k].u, det->keypoints[k].v)});
      }
    }
    if (observations.size() < 2) continue;
    const auto point = geometry::triangulate_multiview(observations);
    if (!point.has_value()) continue;
    for (int c = 0; c < n_c; ++c) {
      double* block = input.data() + (static_cast<std::size_t>(c) * n_k + k) * kLiftSlots;
      block[10] = point->x() / 1000.0;
      block[11] = point->y() / 1000.0;
      block[12] = point->z() / 1000.0;
      block[13] = 1.0;
    }
  }
  return input;
}

nlohmann::json LifterArch::to_json() const {
  return {{"type", "lifter_mlp"},
          {"n_k", n_k},
          {"n_c", n_c},
          {"hidden", hidden},
          {"in", input_dim()},
          {"out", output_dim()}};
}

LifterArch LifterArch::from_json(const nlohmann::json& doc) {
  if (!doc.contains("type") || doc["type"] != "lifter_mlp") {
    throw CheckpointMismatch("checkpoint is not a lifter checkpoint");
  }
  LifterArch arch;
  arch.n_k = doc.at("n_k").get<int>();
  arch.n_c = doc.at("n_c").get<int>();
  arch.hidden = doc.at("hidden").get<std::vector<int>>();
  return arch;
}

LiftModel LiftModel::make(const LifterArch& arch, std::uint64_t seed) {
  LiftModel model;
  model.arch = arch;
  std::mt19937_64 rng(util::mix_seed(seed, 0x11F7));
  model.mlp = diff::Mlp::make(arch.input_dim(), arch.hidden, arch.output_dim(), rng);
  return model;
}

diff::Checkpoint LiftModel::to_checkpoint() const {
  return diff::Checkpoint::capture(arch.to_json(), mlp.named_parameters());
}

LiftModel LiftModel::from_checkpoint(const diff::Checkpoint& ckpt) {
  LiftModel model = make(LifterArch::from_json(ckpt.arch), 0);
  ckpt.restore(model.arch.to_json(), model.mlp.named_parameters());
  return model;
}

Pose3D lift(const LiftModel& model, std::span<const double> input) {
  if (static_cast<int>(input.size()) != model.arch.input_dim()) {
    throw ShapeMismatch("lift: input length " + std::to_string(input.size()) +
                        " != " + std::to_string(model.arch.input_dim()));
  }
  const diff::Tensor in = diff::Tensor::from_data(
      {1, model.arch.input_dim()}, std::vector<double>(input.begin(), input.end()));
  const diff::Tensor out = model.mlp.forward(in);
  Pose3D pose;
  pose.joints.reserve(model.arch.n_k);
  for (int k = 0; k < model.arch.n_k; ++k) {
    pose.joints.emplace_back(out.data()[3 * k] * 1000.0,
                             out.data()[3 * k + 1] * 1000.0,
                             out.data()[3 * k + 2] * 1000.0);
  }
  return pose;
}

diff::Tensor reprojection_loss_graph(std::span<const diff::Tensor> poses_metres,
                                     std::span<const SeedSupervision> seeds,
                                     const CameraRig& rig, LossReport* report) {
  if (poses_metres.size() != seeds.size() || poses_metres.empty()) {
    throw ShapeMismatch("reprojection_loss_graph: need one seed per pose");
  }
  const int n_c = rig.size();
  std::vector<diff::Tensor> squared_errors;
  std::vector<diff::Tensor> barriers;
  if (report != nullptr) {
    report->per_sample_error.assign(poses_metres.size(), 0.0);
    report->per_camera_error.assign(n_c, 0.0);
  }
  for (std::size_t b = 0; b < poses_metres.size(); ++b) {
    const diff::Tensor& pose_m = poses_metres[b];
    const int n_k = pose_m.rows();
    if (pose_m.cols() != 3) {
      throw ShapeMismatch("reprojection_loss_graph: poses must be [n_k, 3]");
    }
    const diff::Tensor pose_mm = diff::scale(pose_m, 1000.0);
    std::vector<diff::Tensor> camera_errors;
    for (int c = 0; c < n_c; ++c) {
      const SkeletonDetection* det = seeds[b].views[c];
      if (det == nullptr || det->visible_count() == 0) {
        continue;
      }
      if (static_cast<int>(det->keypoints.size()) != n_k) {
        throw ShapeMismatch("reprojection_loss_graph: keypoint count mismatch");
      }
      const CameraModel& camera = rig.cameras[c];
      // camera-frame points via x R^T + t; linear() wants W = R
      std::vector<double> rot(9);
      for (int r = 0; r < 3; ++r) {
        for (int col = 0; col < 3; ++col) {
          rot[r * 3 + col] = camera.rotation(r, col);
        }
      }
      const diff::Tensor rotation = diff::Tensor::from_data({3, 3}, rot);
      const diff::Tensor translation = diff::Tensor::from_data(
          {3}, {camera.translation.x(), camera.translation.y(),
                camera.translation.z()});
      const diff::Tensor cam_points = diff::linear(pose_mm, rotation, translation);
      const diff::Tensor depth = diff::slice_cols(cam_points, 2, 1);
      const diff::Tensor safe_depth =
          diff::soft_depth_floor(depth, kDepthFloorMm, kDepthSharpnessMm);
      const diff::Tensor u = diff::add_scalar(
          diff::scale(diff::div(diff::slice_cols(cam_points, 0, 1), safe_depth),
                      camera.fx()),
          camera.cx());
      const diff::Tensor v = diff::add_scalar(
          diff::scale(diff::div(diff::slice_cols(cam_points, 1, 1), safe_depth),
                      camera.fy()),
          camera.cy());
      std::vector<double> mask(n_k), u_det(n_k, 0.0), v_det(n_k, 0.0);
      for (int k = 0; k < n_k; ++k) {
        mask[k] = det->keypoints[k].visible ? 1.0 : 0.0;
        u_det[k] = det->keypoints[k].u;
        v_det[k] = det->keypoints[k].v;
      }
      const diff::Tensor mask_t = diff::Tensor::from_data({n_k, 1}, mask);
      const diff::Tensor du =
          diff::abs_val(diff::sub(u, diff::Tensor::from_data({n_k, 1}, u_det)));
      const diff::Tensor dv =
          diff::abs_val(diff::sub(v, diff::Tensor::from_data({n_k, 1}, v_det)));
      const diff::Tensor manhattan =
          diff::add(diff::mul(du, mask_t), diff::mul(dv, mask_t));
      const diff::Tensor cam_error = diff::reduce_sum(manhattan);
      camera_errors.push_back(cam_error);
      barriers.push_back(diff::reduce_sum(diff::mul(
          diff::barrier_below(depth, kBarrierMarginMm, kBarrierSharpnessMm),
          mask_t)));
      if (report != nullptr) {
        report->per_camera_error[c] += cam_error.item();
      }
    }
    diff::Tensor sample_error = camera_errors.empty()
                                    ? diff::Tensor::scalar(0.0)
                                    : diff::add_n(camera_errors);
    if (report != nullptr) {
      report->per_sample_error[b] = sample_error.item();
    }
    squared_errors.push_back(diff::square(sample_error));
  }
  diff::Tensor loss = diff::scale(diff::add_n(squared_errors),
                                  1.0 / static_cast<double>(squared_errors.size()));
  if (!barriers.empty()) {
    loss = diff::add(loss, diff::scale(diff::add_n(barriers),
                                       kBarrierWeight /
                                           static_cast<double>(poses_metres.size())));
  }
  if (report != nullptr) {
    report->loss = loss.item();
  }
  return loss;
}

LossReport reprojection_loss(std::span<const Pose3D> poses,
                             std::span<const SeedSupervision> seeds,
                             const CameraRig& rig) {
  if (poses.size() != seeds.size() || poses.empty()) {
    throw ShapeMismatch("reprojection_loss: need one seed per pose");
  }
  LossReport report;
  report.per_sample_error.assign(poses.size(), 0.0);
  report.per_camera_error.assign(rig.size(), 0.0);
  double barrier_total = 0.0;
  for (std::size_t b = 0; b < poses.size(); ++b) {
    double e = 0.0;
    for (int c = 0; c < rig.size(); ++c) {
      const SkeletonDetection* det = seeds[b].views[c];
      if (det == nullptr || det->visible_count() == 0) {
        continue;
      }
      const CameraModel& camera = rig.cameras[c];
      double cam_error = 0.0;
      for (std::size_t k = 0; k < det->keypoints.size(); ++k) {
        const auto& kp = det->keypoints[k];
        if (!kp.visible) continue;
        const Vec2 projected = project_with_depth_floor(camera, poses[b].joints[k]);
        cam_error += std::abs(projected.x() - kp.u) + std::abs(projected.y() - kp.v);
        const double z =
            (camera.rotation * poses[b].joints[k] + camera.translation).z();
        const double w = (kBarrierMarginMm - z) / kBarrierSharpnessMm;
        const double softplus =
            w > 0.0 ? w + std::log1p(std::exp(-w)) : std::log1p(std::exp(w));
        barrier_total += kBarrierSharpnessMm * softplus;
      }
      report.per_camera_error[c] += cam_error;
      e += cam_error;
    }
    report.per_sample_error[b] = e;
  }
  report.loss = report.mean_squared_error() +
                kBarrierWeight * barrier_total / static_cast<double>(poses.size());
  return report;
}

PosePrediction triangulation_baseline(const PersonViews& views,
                                      const CameraRig& rig, int n_k) {
  if (static_cast<int>(views.size()) != rig.size()) {
    throw ShapeMismatch("triangulation_baseline: views must align with the rig");
  }
  PosePrediction prediction;
  prediction.joints.assign(n_k, std::nullopt);
  for (int k = 0; k < n_k; ++k) {
    std::vector<geometry::Observation> observations;
    for (int c = 0; c < rig.size(); ++c) {
      const SkeletonDetection* det = views[c];
      if (det != nullptr && static_cast<int>(det->keypoints.size()) == n_k &&
          det->keypoints[k].visible) {
        observations.push_back(
            {&rig.cameras[c], Vec2(det->keypoints[k].u, det->keypoints[k].v)});
      }
    }
    const auto point = geometry::triangulate_multiview(observations);
    if (point.has_value()) {
      prediction.joints[k] = *point;
    }
  }
  return prediction;
}

PersonViews views_from_group(const scene::FrameSample& frame,
                             const matcher::PersonGroup& group,
                             const CameraRig& rig) {
  PersonViews views(rig.size(), nullptr);
  for (const auto& [camera_id, det_index] : group.members) {
    const int c = rig.index_of(camera_id);
    const auto* view = frame.view_of(camera_id);
    if (c < 0 || view == nullptr ||
        det_index >= static_cast<int>(view->skeletons.size())) {
      throw Error("views_from_group: group member not present in the frame");
    }
    views[c] = &view->skeletons[det_index];
  }
  return views;
}

namespace {

struct TrainItem {
  int track = 0;
  int frame = 0;
  std::uint32_t mask = 0;  // retained views
};

// All (seed frame, view subset) pairs of the given tracks.
std::vector<TrainItem> collect_items(std::span<const scene::PersonTrack> tracks,
                                     int max_subsets, std::uint64_t seed) {
  std::vector<TrainItem> items;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    for (std::size_t f = 0; f < tracks[t].frames.size(); ++f) {
      const auto& frame = tracks[t].frames[f];
      int visible = 0;
      for (const auto& view : frame.views) {
        for (const auto& det : view.skeletons) visible += det.visible_count();
      }
      if (visible == 0) continue;
      scene::AugmentPolicy policy;
      policy.seed = util::mix_seed(seed, (t << 20) + f);
      std::mt19937_64 rng(policy.seed);
      auto masks = scene::enumerate_view_subsets(frame, policy, rng);
      if (static_cast<int>(masks.size()) > max_subsets) {
        // keep the seed itself plus a deterministic sample of the rest
        std::shuffle(masks.begin() + 1, masks.end(), rng);
        masks.resize(max_subsets);
      }
      for (const std::uint32_t mask : masks) {
        items.push_back({static_cast<int>(t), static_cast<int>(f), mask});
      }
    }
  }
  return items;
}

// The single detection of a single-person frame in each camera, or null.
PersonViews single_person_views(const scene::FrameSample& frame,
                                const CameraRig& rig) {
  PersonViews views(rig.size(), nullptr);
  for (const auto& view : frame.views) {
    const int c = rig.index_of(view.camera_id);
    if (c < 0 || view.skeletons.empty()) continue;
    if (view.skeletons.front().visible_count() > 0) {
      views[c] = &view.skeletons.front();
    }
  }
  return views;
}

}  // namespace

LifterTrainResult train_lifter(std::span<const scene::PersonTrack> tracks,
                               const CameraRig& rig, const LifterArch& arch,
                               const LifterTrainConfig& config) {
  if (tracks.empty()) {
    throw matcher::InsufficientTracks("train_lifter: no tracks supplied");
  }
  for (const auto& track : tracks) {
    for (const auto& frame : track.frames) {
      for (const auto& view : frame.views) {
        if (view.skeletons.size() > 1) {
          throw Error("train_lifter: training data must be single-person");
        }
      }
    }
  }

  std::mt19937_64 rng(util::mix_seed(config.seed, 0x11F7E4));
  std::vector<int> order(tracks.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int val_count = static_cast<int>(std::lround(config.val_fraction * tracks.size()));
  val_count = std::clamp<int>(val_count, tracks.size() >= 2 ? 1 : 0,
                              static_cast<int>(tracks.size()) - 1);
  std::vector<scene::PersonTrack> train_tracks, val_tracks;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (static_cast<int>(i) < val_count) {
      val_tracks.push_back(tracks[order[i]]);
    } else {
      train_tracks.push_back(tracks[order[i]]);
    }
  }
  if (val_tracks.empty()) {
    val_tracks = train_tracks;
  }

  auto train_items = collect_items(train_tracks, config.max_subsets_per_frame,
                                   config.seed);
  auto val_items = collect_items(val_tracks, 4, config.seed + 1);
  if (train_items.empty()) {
    throw matcher::InsufficientTracks("train_lifter: no usable frames");
  }
  // cap validation work; items are already frame-shuffled by subset choice
  if (val_items.size() > 256) {
    std::shuffle(val_items.begin(), val_items.end(), rng);
    val_items.resize(256);
  }

  LiftModel model = LiftModel::make(arch, config.seed);
  std::vector<diff::Tensor> params = model.mlp.parameters();
  diff::AdamConfig adam_config;
  adam_config.lr = config.lr;
  diff::Adam adam(params, adam_config);

  // Builds the augmented input for one item; the supervision views point into
  // the stable track storage of the seed frame.
  auto assemble = [&](std::span<const scene::PersonTrack> source,
                      const TrainItem& item, std::vector<double>& input,
                      SeedSupervision& seed_out) {
    const scene::FrameSample& seed_frame = source[item.track].frames[item.frame];
    const scene::FrameSample augmented =
        scene::apply_view_subset(seed_frame, item.mask);
    input = build_lift_input(single_person_views(augmented, rig), rig, arch.n_k);
    seed_out.views = single_person_views(seed_frame, rig);
  };

  auto evaluate_val = [&]() {
    double total = 0.0;
    int count = 0;
    std::vector<double> input;
    for (std::size_t i = 0; i < val_items.size(); i += config.batch) {
      const std::size_t end = std::min<std::size_t>(val_items.size(), i + config.batch);
      std::vector<SeedSupervision> seeds;
      std::vector<double> flat;
      int rows = 0;
      for (std::size_t j = i; j < end; ++j) {
        SeedSupervision seed;
        assemble(val_tracks, val_items[j], input, seed);
        flat.insert(flat.end(), input.begin(), input.end());
        seeds.push_back(std::move(seed));
        ++rows;
      }
      const diff::Tensor batch_in = diff::Tensor::from_data(
          {rows, arch.input_dim()}, std::move(flat));
      const diff::Tensor out = model.mlp.forward(batch_in);
      std::vector<diff::Tensor> pose_tensors;
      for (int r = 0; r < rows; ++r) {
        pose_tensors.push_back(
            diff::reshape(diff::row_gather(out, {r}), {arch.n_k, 3}));
      }
      LossReport report;
      reprojection_loss_graph(pose_tensors, seeds, rig, &report);
      total += report.loss * rows;
      count += rows;
    }
    return count > 0 ? total / count : 0.0;
  };

  LifterTrainResult result;
  result.initial_val_loss = evaluate_val();
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  best_params.reserve(params.size());
  for (const auto& p : params) best_params.push_back(p.values());
  int evals_since_best = 0;
  double loss_accum = 0.0;
  int loss_count = 0;

  std::uniform_int_distribution<std::size_t> pick(0, train_items.size() - 1);
  std::vector<double> input;
  for (int step = 1; step <= config.max_steps; ++step) {
    std::vector<SeedSupervision> seeds;
    std::vector<TrainItem> batch_items;
    std::vector<double> flat;
    int rows = 0;
    for (int b = 0; b < config.batch; ++b) {
      const TrainItem& item = train_items[pick(rng)];
      SeedSupervision seed;
      assemble(train_tracks, item, input, seed);
      flat.insert(flat.end(), input.begin(), input.end());
      seeds.push_back(std::move(seed));
      batch_items.push_back(item);
      ++rows;
    }
    const diff::Tensor batch_in =
        diff::Tensor::from_data({rows, arch.input_dim()}, std::move(flat));
    const diff::Tensor out = model.mlp.forward(batch_in);
    std::vector<diff::Tensor> pose_tensors;
    for (int r = 0; r < rows; ++r) {
      pose_tensors.push_back(
          diff::reshape(diff::row_gather(out, {r}), {arch.n_k, 3}));
    }
    LossReport report;
    const diff::Tensor loss =
        reprojection_loss_graph(pose_tensors, seeds, rig, &report);
    if (!std::isfinite(loss.item())) {
      std::string offender = "unknown";
      for (std::size_t r = 0; r < report.per_sample_error.size(); ++r) {
        if (!std::isfinite(report.per_sample_error[r])) {
          offender = "track " + std::to_string(batch_items[r].track) +
                     ", frame " + std::to_string(batch_items[r].frame) +
                     ", view mask " + std::to_string(batch_items[r].mask);
          break;
        }
      }
      throw NonFiniteLoss("train_lifter: non-finite loss at step " +
                          std::to_string(step) + " (sample: " + offender + ")");
    }
    loss_accum += loss.item();
    ++loss_count;
    adam.zero_grad();
    diff::backward(loss);
    adam.step();

    if (step % config.eval_every == 0 || step == config.max_steps) {
      const double val_loss = evaluate_val();
      result.curve.push_back({step, loss_accum / std::max(1, loss_count), val_loss});
      loss_accum = 0.0;
      loss_count = 0;
      if (val_loss < best_val * (1.0 - 1e-4)) {
        best_val = val_loss;
        for (std::size_t p = 0; p < params.size(); ++p) {
          best_params[p] = params[p].values();
        }
        evals_since_best = 0;
      } else {
        ++evals_since_best;
        if (evals_since_best >= config.patience) {
          break;
        }
      }
    }
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::copy(best_params[p].begin(), best_params[p].end(), params[p].data());
  }
  result.final_val_loss = best_val;
  result.checkpoint = model.to_checkpoint();
  return result;
}

}  // namespace mvpose::lifter
