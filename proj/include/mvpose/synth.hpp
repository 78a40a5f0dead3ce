#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "mvpose/detections.hpp"
#include "mvpose/geometry.hpp"

namespace mvpose::scene {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Configuration of the synthetic articulated-human scene generator. The
// generator stands in for a motion-capture dataset: it provides exact 3D
// ground truth for every detection it emits.
struct SynthConfig {
  int cameras = 5;
  Range rig_radius_mm{3200.0, 3800.0};
  Range rig_height_mm{1800.0, 2200.0};
  int image_width = 1920;
  int image_height = 1080;
  Range focal_px{880.0, 980.0};

  int n_k = 15;
  Range central_segment_mm{300.0, 420.0};  // torso/neck/head chain
  Range limb_segment_mm{210.0, 310.0};     // arm and leg chain segments

  double arena_radius_mm = 650.0;  // where person roots live
  double pixel_noise_sigma = 0.0;
  double keypoint_drop_prob = 0.0;
  double occlusion_prob = 0.0;  // whole person, per camera per frame
  std::uint64_t seed = 0;

  // Throws InvalidConfig naming the offending field.
  void validate() const;
};

// Canonical articulated skeleton for a given keypoint count: a central
// root-to-head chain plus mirrored left/right limb chains. Left/right
// segments of a pair always share one length.
struct SkeletonTopology {
  struct Segment {
    int joint = 0;      // child joint
    int parent = 0;
    int pair = -1;      // shared-length pair id, -1 for central segments
    double side = 0.0;  // +1 left, -1 right, 0 central
    Eigen::Vector3d rest_dir = Eigen::Vector3d::UnitZ();  // body frame
    bool limb = false;
  };

  int n_k = 0;
  std::vector<Segment> segments;  // n_k - 1, each joint except the root

  static SkeletonTopology canonical(int n_k);
  // Bone list (parent, child) for plotting.
  std::vector<std::pair<int, int>> bones() const;
};

// Deterministic camera rig derived from the config seed: cameras on a ring
// around the arena looking inward.
geometry::CameraRig make_rig(const SynthConfig& config);

struct TrackResult {
  PersonTrack track;
  std::vector<Pose3D> ground_truth;  // one pose per frame
};

// One person moving through the arena for `length` frames, observed by every
// rig camera. Deterministic in (config.seed, track_index).
TrackResult generate_track(const SynthConfig& config,
                           const geometry::CameraRig& rig, int track_index,
                           int length);

struct SceneConfig {
  int persons_min = 2;
  int persons_max = 6;
  int frames = 100;
  double min_separation_mm = 700.0;
};

// Multi-person evaluation frames with ground truth. Persons keep a minimum
// root separation so the true view partition is geometrically recoverable.
std::vector<FrameSample> generate_scene_frames(const SynthConfig& config,
                                               const geometry::CameraRig& rig,
                                               const SceneConfig& scene,
                                               std::uint64_t seed_salt);

// View-removal augmentation policy. `automatic` enumerates all non-empty
// view subsets when the sample has at most five usable views and falls back
// to 2*V random subsets otherwise.
struct AugmentPolicy {
  enum class Mode { automatic, exhaustive, random_subsets };
  Mode mode = Mode::automatic;
  int random_factor = 2;
  std::uint64_t seed = 0;
};

// Bitmasks over `sample.views` selecting the views a variant retains. The
// full set is always first. Only views with at least one visible keypoint
// participate in subset enumeration.
std::vector<std::uint32_t> enumerate_view_subsets(const FrameSample& sample,
                                                  const AugmentPolicy& policy,
                                                  std::mt19937_64& rng);

// Keeps the selected views untouched and zeroes every other view's keypoints.
FrameSample apply_view_subset(const FrameSample& sample, std::uint32_t kept_mask);

// (augmented, seed) pairs per the view-removal scheme; the unmodified sample
// is always included as (seed, seed).
std::vector<std::pair<FrameSample, FrameSample>> augment_views(
    const FrameSample& sample, const AugmentPolicy& policy);

}  // namespace mvpose::scene
