#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <thread>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "mvpose/lifter.hpp"
#include "mvpose/synth.hpp"

using namespace mvpose;
using namespace mvpose::lifter;
using mvpose::testing::camera_at;
using scene::SynthConfig;

namespace {

// single-person frame -> per-camera detection pointers
PersonViews frame_views(const scene::FrameSample& frame,
                        const geometry::CameraRig& rig) {
  PersonViews views(rig.size(), nullptr);
  for (const auto& view : frame.views) {
    const int c = rig.index_of(view.camera_id);
    if (c >= 0 && !view.skeletons.empty() &&
        view.skeletons.front().visible_count() > 0) {
      views[c] = &view.skeletons.front();
    }
  }
  return views;
}

geometry::CameraRig single_camera_rig() {
  geometry::CameraRig rig;
  geometry::Mat3 intr = geometry::Mat3::Identity();
  intr(0, 0) = 1000.0;
  intr(1, 1) = 1000.0;
  intr(0, 2) = 960.0;
  intr(1, 2) = 540.0;
  rig.cameras.push_back(geometry::CameraModel::make(
      "c0", 1920, 1080, intr, geometry::Mat3::Identity(), geometry::Vec3::Zero()));
  return rig;
}

}  // namespace

TEST_CASE("lift input has 1400 features for 25 keypoints and 4 cameras") {
  SynthConfig cfg;
  cfg.cameras = 4;
  cfg.n_k = 25;
  cfg.seed = 41;
  const auto rig = scene::make_rig(cfg);
  const auto result = scene::generate_track(cfg, rig, 0, 1);
  const auto views = frame_views(result.track.frames.front(), rig);
  const auto input = build_lift_input(views, rig, 25);
  CHECK(input.size() == 1400);
}

TEST_CASE("single-view keypoints have no triangulation prior") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 42;
  const auto rig = scene::make_rig(cfg);
  const auto result = scene::generate_track(cfg, rig, 0, 1);
  scene::FrameSample frame = result.track.frames.front();
  // hide keypoint 2 from all cameras but the first
  for (std::size_t v = 1; v < frame.views.size(); ++v) {
    frame.views[v].skeletons.front().keypoints[2] = scene::Keypoint2D{};
  }
  const auto input = build_lift_input(frame_views(frame, rig), rig, 15);
  for (int c = 0; c < 3; ++c) {
    const double* block = input.data() + (c * 15 + 2) * kLiftSlots;
    CHECK(block[10] == 0.0);
    CHECK(block[11] == 0.0);
    CHECK(block[12] == 0.0);
    CHECK(block[13] == 0.0);
  }
  // a keypoint seen by all three cameras carries the prior everywhere
  const double* block0 = input.data() + (0 * 15 + 0) * kLiftSlots;
  const double* block2 = input.data() + (2 * 15 + 0) * kLiftSlots;
  CHECK(block0[13] == 1.0);
  for (int s = 10; s < 14; ++s) {
    CHECK(block0[s] == block2[s]);
  }
}

TEST_CASE("noiseless triangulation prior matches the ground truth") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 43;
  const auto rig = scene::make_rig(cfg);
  const auto result = scene::generate_track(cfg, rig, 0, 1);
  const auto input =
      build_lift_input(frame_views(result.track.frames.front(), rig), rig, 15);
  const Pose3D& gt = result.ground_truth.front();
  for (int k = 0; k < 15; ++k) {
    const double* block = input.data() + (0 * 15 + k) * kLiftSlots;
    REQUIRE(block[13] == 1.0);
    CHECK(std::abs(block[10] * 1000.0 - gt.joints[k].x()) < 1e-6);
    CHECK(std::abs(block[11] * 1000.0 - gt.joints[k].y()) < 1e-6);
    CHECK(std::abs(block[12] * 1000.0 - gt.joints[k].z()) < 1e-6);
  }
}

TEST_CASE("build_lift_input rejects empty groups") {
  SynthConfig cfg;
  cfg.cameras = 2;
  const auto rig = scene::make_rig(cfg);
  PersonViews views(2, nullptr);
  CHECK_THROWS_AS(build_lift_input(views, rig, 15), EmptyGroup);
}

TEST_CASE("lift returns 75 numbers for 25 keypoints and is deterministic") {
  LifterArch arch;
  arch.n_k = 25;
  arch.n_c = 4;
  arch.hidden = LifterArch::small_hidden();
  const LiftModel model = LiftModel::make(arch, 7);
  std::vector<double> input(arch.input_dim(), 0.25);
  const Pose3D a = lift(model, input);
  const Pose3D b = lift(model, input);
  REQUIRE(a.size() == 25);  // 3 x 25 = 75 output values
  CHECK(a == b);
  CHECK_THROWS_AS(lift(model, std::vector<double>(10, 0.0)), ShapeMismatch);
}

TEST_CASE("zero-weight model lifts every joint to its bias") {
  LifterArch arch;
  arch.n_k = 15;
  arch.n_c = 3;
  arch.hidden = {8};
  LiftModel model = LiftModel::make(arch, 3);
  for (auto& layer : model.mlp.layers) {
    std::fill(layer.weight.data(), layer.weight.data() + layer.weight.size(), 0.0);
    std::fill(layer.bias.data(), layer.bias.data() + layer.bias.size(), 0.0);
  }
  auto& out_layer = model.mlp.layers.back();
  for (int k = 0; k < 15; ++k) {
    out_layer.bias.data()[3 * k] = 0.5;      // 0.5 m
    out_layer.bias.data()[3 * k + 1] = -0.25;
    out_layer.bias.data()[3 * k + 2] = 1.0;
  }
  std::vector<double> input(arch.input_dim(), 0.7);
  const Pose3D pose = lift(model, input);
  REQUIRE(pose.size() == 15);  // complete even with a degenerate model
  for (const auto& joint : pose.joints) {
    CHECK(joint.x() == doctest::Approx(500.0));
    CHECK(joint.y() == doctest::Approx(-250.0));
    CHECK(joint.z() == doctest::Approx(1000.0));
  }
}

TEST_CASE("paper architecture instantiates with the published layer widths") {
  LifterArch arch;
  arch.n_k = 25;
  arch.n_c = 4;
  REQUIRE(arch.hidden == std::vector<int>({3072, 3072, 2048, 2048, 1024, 1024, 1024}));
  CHECK(arch.input_dim() == 1400);
  CHECK(arch.output_dim() == 75);
  const LiftModel model = LiftModel::make(arch, 1);
  REQUIRE(model.mlp.layers.size() == 8);
  CHECK(model.mlp.layers.front().in_features() == 1400);
  CHECK(model.mlp.layers.back().out_features() == 75);
}

TEST_CASE("hand-computed Manhattan example: e = 5 gives L = 25") {
  const auto rig = single_camera_rig();
  // one keypoint detected at (100, 100); prediction projects to (103, 98)
  scene::SkeletonDetection det;
  det.camera_id = "c0";
  det.keypoints.assign(1, scene::Keypoint2D{});
  det.keypoints[0] = {true, 100.0, 100.0, 0.9};

  // world point that projects to (103, 98): u = 1000 x / z + 960
  const double z = 2000.0;
  const geometry::Vec3 point((103.0 - 960.0) * z / 1000.0,
                             (98.0 - 540.0) * z / 1000.0, z);
  const auto check = geometry::project(rig.cameras[0], point);
  REQUIRE(check.x() == doctest::Approx(103.0).epsilon(1e-12));
  REQUIRE(check.y() == doctest::Approx(98.0).epsilon(1e-12));

  Pose3D pose;
  pose.joints.push_back(point);
  SeedSupervision seed;
  seed.views = {&det};
  const LossReport report = reprojection_loss({&pose, 1}, {&seed, 1}, rig);
  CHECK(report.per_sample_error[0] == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(report.loss == doctest::Approx(25.0).epsilon(1e-9));
}

TEST_CASE("a perfectly reprojecting pose has exactly zero loss") {
  SynthConfig cfg;
  cfg.cameras = 4;
  cfg.seed = 44;
  const auto rig = scene::make_rig(cfg);
  const auto result = scene::generate_track(cfg, rig, 0, 1);
  const Pose3D& gt = result.ground_truth.front();

  // detections placed by the loss's own projection: exact fixed point
  scene::FrameSample frame = result.track.frames.front();
  for (auto& view : frame.views) {
    const auto& camera = rig.cameras[rig.index_of(view.camera_id)];
    for (auto& det : view.skeletons) {
      for (std::size_t k = 0; k < det.keypoints.size(); ++k) {
        const auto px = project_with_depth_floor(camera, gt.joints[k]);
        det.keypoints[k].u = px.x();
        det.keypoints[k].v = px.y();
      }
    }
  }
  SeedSupervision seed;
  seed.views = frame_views(frame, rig);
  const LossReport report = reprojection_loss({&gt, 1}, {&seed, 1}, rig);
  CHECK(report.per_sample_error[0] == 0.0);
  CHECK(report.loss == 0.0);

  // generator detections use the projection-matrix route; the fixed point
  // holds to floating-point noise
  SeedSupervision seed_gen;
  seed_gen.views = frame_views(result.track.frames.front(), rig);
  const LossReport noise = reprojection_loss({&gt, 1}, {&seed_gen, 1}, rig);
  CHECK(noise.per_sample_error[0] < 1e-9);
  CHECK(noise.loss < 1e-18);
}

TEST_CASE("loss ignores undetected keypoints") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 45;
  cfg.keypoint_drop_prob = 0.3;
  const auto rig = scene::make_rig(cfg);
  const auto result = scene::generate_track(cfg, rig, 0, 1);
  scene::FrameSample frame = result.track.frames.front();

  Pose3D pose = result.ground_truth.front();
  pose.joints[4] += geometry::Vec3(40.0, -25.0, 60.0);
  SeedSupervision seed;
  seed.views = frame_views(frame, rig);
  const LossReport before = reprojection_loss({&pose, 1}, {&seed, 1}, rig);

  // zeroing the pixel slots of undetected keypoints must not change the loss
  scene::FrameSample scrambled = frame;
  for (auto& view : scrambled.views) {
    for (auto& det : view.skeletons) {
      for (auto& kp : det.keypoints) {
        if (!kp.visible) {
          kp.u = 0.0;
          kp.v = 0.0;
          kp.confidence = 0.0;
        }
      }
    }
  }
  SeedSupervision seed2;
  seed2.views = frame_views(scrambled, rig);
  const LossReport after = reprojection_loss({&pose, 1}, {&seed2, 1}, rig);
  CHECK(before.loss == after.loss);
  CHECK(before.loss > 0.0);
}

TEST_CASE("loss equals mean of squared errors to machine precision") {
  SynthConfig cfg;
  cfg.cameras = 4;
  cfg.seed = 46;
  cfg.pixel_noise_sigma = 2.0;
  const auto rig = scene::make_rig(cfg);
  std::vector<Pose3D> poses;
  std::vector<SeedSupervision> seeds;
  const auto result = scene::generate_track(cfg, rig, 0, 6);
  for (int f = 0; f < 6; ++f) {
    Pose3D pose = result.ground_truth[f];
    pose.joints[f % 15] += geometry::Vec3(30.0, 10.0, -20.0);
    poses.push_back(pose);
    SeedSupervision seed;
    seed.views = frame_views(result.track.frames[f], rig);
    seeds.push_back(seed);
  }
  const LossReport report = reprojection_loss(poses, seeds, rig);
  const double recomputed = report.mean_squared_error();
  CHECK(std::abs(report.loss - recomputed) <=
        1e-12 * std::max(std::abs(report.loss), std::abs(recomputed)));
}

TEST_CASE("graph loss gradient matches finite differences off the kinks") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 47;
  const auto rig = scene::make_rig(cfg);
  const auto result = scene::generate_track(cfg, rig, 0, 2);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> jitter(0.02, 0.15);

  for (int sample = 0; sample < 2; ++sample) {
    // perturb away from the exact projection so no |.| kink is near
    std::vector<double> flat;
    for (const auto& joint : result.ground_truth[sample].joints) {
      flat.push_back(joint.x() / 1000.0 + jitter(rng));
      flat.push_back(joint.y() / 1000.0 - jitter(rng));
      flat.push_back(joint.z() / 1000.0 + jitter(rng));
    }
    diff::Tensor pose = diff::Tensor::from_data({15, 3}, flat, true);
    SeedSupervision seed;
    seed.views = frame_views(result.track.frames[sample], rig);
    auto loss_fn = [&] {
      return reprojection_loss_graph({&pose, 1}, {&seed, 1}, rig);
    };
    CHECK(mvpose::testing::max_grad_error(pose, loss_fn) < 1e-4);
  }
}

TEST_CASE("graph loss agrees with the evaluation route") {
  SynthConfig cfg;
  cfg.cameras = 4;
  cfg.seed = 48;
  cfg.pixel_noise_sigma = 1.0;
  const auto rig = scene::make_rig(cfg);
  const auto result = scene::generate_track(cfg, rig, 0, 3);
  std::vector<diff::Tensor> pose_tensors;
  std::vector<Pose3D> poses;
  std::vector<SeedSupervision> seeds;
  for (int f = 0; f < 3; ++f) {
    Pose3D pose = result.ground_truth[f];
    pose.joints[f] += geometry::Vec3(25.0, -15.0, 40.0);
    poses.push_back(pose);
    std::vector<double> flat;
    for (const auto& joint : pose.joints) {
      flat.push_back(joint.x() / 1000.0);
      flat.push_back(joint.y() / 1000.0);
      flat.push_back(joint.z() / 1000.0);
    }
    pose_tensors.push_back(diff::Tensor::from_data({15, 3}, flat));
    SeedSupervision seed;
    seed.views = frame_views(result.track.frames[f], rig);
    seeds.push_back(seed);
  }
  LossReport graph_report;
  const diff::Tensor loss =
      reprojection_loss_graph(pose_tensors, seeds, rig, &graph_report);
  const LossReport eval_report = reprojection_loss(poses, seeds, rig);
  CHECK(loss.item() == doctest::Approx(eval_report.loss).epsilon(1e-12));
  for (int s = 0; s < 3; ++s) {
    CHECK(graph_report.per_sample_error[s] ==
          doctest::Approx(eval_report.per_sample_error[s]).epsilon(1e-12));
  }
}

TEST_CASE("behind-camera joints incur a finite decreasing penalty") {
  const auto rig = single_camera_rig();
  scene::SkeletonDetection det;
  det.camera_id = "c0";
  det.keypoints.assign(1, scene::Keypoint2D{});
  det.keypoints[0] = {true, 500.0, 500.0, 1.0};
  SeedSupervision seed;
  seed.views = {&det};

  auto loss_at_depth = [&](double z_mm) {
    diff::Tensor pose =
        diff::Tensor::from_data({1, 3}, {0.1, 0.1, z_mm / 1000.0}, true);
    const diff::Tensor loss = reprojection_loss_graph({&pose, 1}, {&seed, 1}, rig);
    diff::backward(loss);
    return std::make_pair(loss.item(), pose.grad()[2]);
  };
  const auto [loss_behind, grad_behind] = loss_at_depth(-500.0);
  CHECK(std::isfinite(loss_behind));
  CHECK(grad_behind < 0.0);  // pushing depth up reduces the loss
  const auto [loss_normal, grad_normal] = loss_at_depth(2500.0);
  CHECK(std::isfinite(loss_normal));
  CHECK(loss_behind > loss_normal);
}

TEST_CASE("triangulation baseline is exact on full views and absent otherwise") {
  SynthConfig cfg;
  cfg.cameras = 4;
  cfg.seed = 49;
  const auto rig = scene::make_rig(cfg);
  const auto result = scene::generate_track(cfg, rig, 0, 1);
  scene::FrameSample frame = result.track.frames.front();
  const Pose3D& gt = result.ground_truth.front();

  auto views = frame_views(frame, rig);
  const PosePrediction complete = triangulation_baseline(views, rig, 15);
  REQUIRE(complete.present_count() == 15);
  for (int k = 0; k < 15; ++k) {
    CHECK((*complete.joints[k] - gt.joints[k]).norm() < 1e-6);
  }

  // keypoint 3 visible in exactly one view: absent from the baseline while
  // lift() still reports all joints
  for (std::size_t v = 1; v < frame.views.size(); ++v) {
    frame.views[v].skeletons.front().keypoints[3] = scene::Keypoint2D{};
  }
  auto partial_views = frame_views(frame, rig);
  const PosePrediction partial = triangulation_baseline(partial_views, rig, 15);
  CHECK_FALSE(partial.joints[3].has_value());
  CHECK(partial.present_count() == 14);

  LifterArch arch;
  arch.n_k = 15;
  arch.n_c = 4;
  arch.hidden = {16};
  const LiftModel model = LiftModel::make(arch, 5);
  const Pose3D lifted = lift(model, build_lift_input(partial_views, rig, 15));
  CHECK(lifted.size() == 15);

  // keypoint visible nowhere: still absent
  for (auto& view : frame.views) {
    view.skeletons.front().keypoints[4] = scene::Keypoint2D{};
  }
  const PosePrediction absent =
      triangulation_baseline(frame_views(frame, rig), rig, 15);
  CHECK_FALSE(absent.joints[4].has_value());
}

TEST_CASE("concurrent lifting over shared parameters is consistent") {
  LifterArch arch;
  arch.n_k = 15;
  arch.n_c = 3;
  arch.hidden = {32, 16};
  const LiftModel model = LiftModel::make(arch, 11);
  std::vector<double> input(arch.input_dim());
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : input) v = dist(rng);
  const Pose3D reference = lift(model, input);

  std::vector<Pose3D> results(8);
  std::vector<std::thread> workers;
  for (int t = 0; t < 8; ++t) {
    workers.emplace_back([&, t] { results[t] = lift(model, input); });
  }
  for (auto& w : workers) w.join();
  for (const auto& pose : results) {
    CHECK(pose == reference);
  }
}

TEST_CASE("lifter training smoke run shrinks the loss") {
  SynthConfig cfg;
  cfg.cameras = 3;
  cfg.seed = 50;
  cfg.pixel_noise_sigma = 0.5;
  const auto rig = scene::make_rig(cfg);
  std::vector<scene::PersonTrack> tracks;
  for (int t = 0; t < 4; ++t) {
    tracks.push_back(scene::generate_track(cfg, rig, t, 10).track);
  }
  LifterArch arch;
  arch.n_k = 15;
  arch.n_c = 3;
  arch.hidden = {64, 32};
  LifterTrainConfig train_cfg;
  train_cfg.max_steps = 120;
  train_cfg.eval_every = 30;
  train_cfg.batch = 16;
  train_cfg.lr = 1e-3;
  train_cfg.seed = 9;
  const auto result = train_lifter(tracks, rig, arch, train_cfg);
  REQUIRE_FALSE(result.curve.empty());
  CHECK(result.final_val_loss < result.initial_val_loss);
  CHECK_FALSE(result.checkpoint.params.empty());

  // multi-person frames are rejected
  std::vector<scene::PersonTrack> bad = tracks;
  bad[0].frames[0].views[0].skeletons.push_back(
      bad[0].frames[0].views[0].skeletons.front());
  CHECK_THROWS(train_lifter(bad, rig, arch, train_cfg));
}
