#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvpose/detections.hpp"
#include "mvpose/geometry.hpp"
#include "mvpose/matcher.hpp"
#include "mvpose/nn.hpp"
#include "mvpose/pose.hpp"

namespace mvpose::lifter {

// Per keypoint and camera the lifter consumes 14 slots: the shared 10-slot
// view block plus [triangulated x, y, z (metres), availability].
constexpr int kLiftSlots = 14;

// One person's detections indexed by rig camera; null for unseen cameras.
using PersonViews = std::vector<const scene::SkeletonDetection*>;

// Assembles the lifter input vector. The triangulation block of a keypoint
// (multi-view centroid, metres) is replicated into every camera block;
// availability is 1 only when two or more cameras detected the keypoint and
// triangulation succeeded. Throws EmptyGroup when no view is present.
std::vector<double> build_lift_input(const PersonViews& views,
                                     const geometry::CameraRig& rig, int n_k);

struct LifterArch {
  int n_k = 15;
  int n_c = 5;
  std::vector<int> hidden = paper_hidden();

  static std::vector<int> paper_hidden() {
    return {3072, 3072, 2048, 2048, 1024, 1024, 1024};
  }
  static std::vector<int> small_hidden() {
    return {512, 512, 256, 256, 128, 128, 128};
  }

  int input_dim() const { return kLiftSlots * n_c * n_k; }
  int output_dim() const { return 3 * n_k; }
  nlohmann::json to_json() const;
  static LifterArch from_json(const nlohmann::json& doc);
};

struct LiftModel {
  LifterArch arch;
  diff::Mlp mlp;

  static LiftModel make(const LifterArch& arch, std::uint64_t seed);
  diff::Checkpoint to_checkpoint() const;
  static LiftModel from_checkpoint(const diff::Checkpoint& ckpt);
};

// Feed-forward 3D regression. Internally the network works in metres; the
// returned pose is in world millimetres and always carries all n_k joints.
Pose3D lift(const LiftModel& model, std::span<const double> input);

// Seed-sample supervision of one training sample: the unaugmented detections
// per rig camera (null where the seed itself has no detection).
struct SeedSupervision {
  PersonViews views;
};

struct LossReport {
  std::vector<double> per_sample_error;  // projection error e per sample
  std::vector<double> per_camera_error;  // summed over the batch
  double loss = 0.0;                     // mean of e^2 (plus depth barrier)

  double mean_squared_error() const {
    double acc = 0.0;
    for (const double e : per_sample_error) acc += e * e;
    return per_sample_error.empty() ? 0.0 : acc / per_sample_error.size();
  }
};

// Differentiable back-projection loss: poses (metres, [n_k,3] tensors) are
// projected into every camera and compared to the detected seed keypoints
// with the Manhattan distance; undetected keypoints contribute nothing.
// Depths are softly floored so a joint drifting behind a camera yields a
// finite, decreasing penalty instead of aborting.
diff::Tensor reprojection_loss_graph(std::span<const diff::Tensor> poses_metres,
                                     std::span<const SeedSupervision> seeds,
                                     const geometry::CameraRig& rig,
                                     LossReport* report = nullptr);

// Evaluation route over plain poses (millimetres), same formula without the
// tape.
LossReport reprojection_loss(std::span<const Pose3D> poses,
                             std::span<const SeedSupervision> seeds,
                             const geometry::CameraRig& rig);

// The projection the loss applies: pinhole with the soft depth floor. Equal
// to geometry::project up to last-ulp rounding for points in front of the
// camera.
geometry::Vec2 project_with_depth_floor(const geometry::CameraModel& camera,
                                        const geometry::Vec3& point_mm);

// Per-keypoint multiview triangulation; keypoints seen by fewer than two
// cameras stay absent.
PosePrediction triangulation_baseline(const PersonViews& views,
                                      const geometry::CameraRig& rig, int n_k);

struct LifterTrainConfig {
  double lr = 3e-4;
  int batch = 48;
  int max_steps = 3000;
  int eval_every = 50;
  int patience = 20;
  double val_fraction = 0.2;
  int max_subsets_per_frame = 12;  // augmentation variants kept per seed frame
  std::uint64_t seed = 0;
};

struct LifterTrainResult {
  diff::Checkpoint checkpoint;
  std::vector<diff::TrainCurvePoint> curve;
  double initial_val_loss = 0.0;
  double final_val_loss = 0.0;
};

// Self-supervised training over single-person tracks: each step lifts
// view-removed variants and back-projects the prediction against the full
// seed detections.
LifterTrainResult train_lifter(std::span<const scene::PersonTrack> tracks,
                               const geometry::CameraRig& rig,
                               const LifterArch& arch,
                               const LifterTrainConfig& config);

// The per-person detection pointers named by a group, in rig camera order.
PersonViews views_from_group(const scene::FrameSample& frame,
                             const matcher::PersonGroup& group,
                             const geometry::CameraRig& rig);

}  // namespace mvpose::lifter
