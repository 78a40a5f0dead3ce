#include "mvpose/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

#include "mvpose/util.hpp"

namespace mvpose::scene {

using geometry::CameraModel;
using geometry::CameraRig;
using geometry::Mat3;
using geometry::Vec2;
using geometry::Vec3;

namespace {

void check_range(const Range& range, const char* field, double min_lo) {
  if (!(range.lo >= min_lo) || !(range.hi >= range.lo)) {
    throw InvalidConfig(field, "expected " + std::to_string(min_lo) +
                                   " <= lo <= hi");
  }
}

void check_prob(double p, const char* field) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw InvalidConfig(field, "probability must lie in [0, 1]");
  }
}

Mat3 look_at_rotation(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(Vec3::UnitZ());
  if (right.norm() < 1e-9) {
    right = Vec3::UnitX();
  }
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 rot;
  rot.row(0) = right;
  rot.row(1) = down;
  rot.row(2) = forward;
  return rot;
}

// Ornstein-Uhlenbeck style scalar walk clamped to a symmetric limit.
double walk_angle(double value, double limit, std::mt19937_64& rng) {
  std::normal_distribution<double> step(0.0, 0.06);
  value = 0.92 * value + step(rng);
  return std::clamp(value, -limit, limit);
}

struct BodyState {
  std::vector<double> segment_lengths;  // aligned with topology.segments
  Vec3 home = Vec3::Zero();
  Vec3 root = Vec3::Zero();
  double yaw = 0.0;
  std::vector<double> phi;  // per segment, lateral perturbation
  std::vector<double> psi;  // per segment, sagittal perturbation
};

class BodySimulator {
 public:
  BodySimulator(const SynthConfig& config, const SkeletonTopology& topology,
                const Vec3& home, std::mt19937_64& rng)
      : topology_(topology) {
    const int n_segments = static_cast<int>(topology.segments.size());
    state_.segment_lengths.resize(n_segments);
    std::uniform_real_distribution<double> central(config.central_segment_mm.lo,
                                                   config.central_segment_mm.hi);
    std::uniform_real_distribution<double> limb(config.limb_segment_mm.lo,
                                                config.limb_segment_mm.hi);
    std::vector<double> pair_length(n_segments, -1.0);
    for (int s = 0; s < n_segments; ++s) {
      const auto& seg = topology.segments[s];
      if (seg.pair < 0) {
        state_.segment_lengths[s] = central(rng);
      } else if (pair_length[seg.pair] >= 0.0) {
        state_.segment_lengths[s] = pair_length[seg.pair];
      } else {
        state_.segment_lengths[s] = limb(rng);
        pair_length[seg.pair] = state_.segment_lengths[s];
      }
    }
    state_.home = home;
    state_.root = home;
    std::uniform_real_distribution<double> yaw(0.0, 2.0 * M_PI);
    state_.yaw = yaw(rng);
    state_.phi.assign(n_segments, 0.0);
    state_.psi.assign(n_segments, 0.0);
  }

  void step(std::mt19937_64& rng) {
    std::normal_distribution<double> wander(0.0, 24.0);
    std::normal_distribution<double> bob(0.0, 6.0);
    std::normal_distribution<double> turn(0.0, 0.08);
    for (int axis = 0; axis < 2; ++axis) {
      const double pull = 0.06 * (state_.home[axis] - state_.root[axis]);
      state_.root[axis] += pull + wander(rng);
    }
    // keep the walk near its home so scenes preserve person separation
    Eigen::Vector2d offset = (state_.root - state_.home).head<2>();
    if (offset.norm() > 260.0) {
      offset *= 260.0 / offset.norm();
      state_.root.head<2>() = state_.home.head<2>() + offset;
    }
    state_.root.z() = state_.home.z() + 0.9 * (state_.root.z() - state_.home.z()) + bob(rng);
    state_.yaw += turn(rng);
    for (std::size_t s = 0; s < topology_.segments.size(); ++s) {
      const double limit = topology_.segments[s].limb ? 0.55 : 0.15;
      state_.phi[s] = walk_angle(state_.phi[s], limit, rng);
      state_.psi[s] = walk_angle(state_.psi[s], limit, rng);
    }
  }

  Pose3D pose() const {
    Pose3D pose;
    pose.joints.assign(topology_.n_k, Vec3::Zero());
    pose.joints[0] = state_.root;
    const Eigen::AngleAxisd yaw(state_.yaw, Vec3::UnitZ());
    for (std::size_t s = 0; s < topology_.segments.size(); ++s) {
      const auto& seg = topology_.segments[s];
      const Vec3 rest = seg.rest_dir;
      // orthonormal frame around the rest direction
      Vec3 t1 = rest.cross(Vec3::UnitZ());
      if (t1.norm() < 1e-6) {
        t1 = rest.cross(Vec3::UnitX());
      }
      t1.normalize();
      const Vec3 t2 = rest.cross(t1).normalized();
      const Vec3 dir =
          (rest + state_.phi[s] * t1 + state_.psi[s] * t2).normalized();
      pose.joints[seg.joint] =
          pose.joints[seg.parent] + yaw * (state_.segment_lengths[s] * dir);
    }
    return pose;
  }

 private:
  const SkeletonTopology& topology_;
  BodyState state_;
};

// Projects one body into every camera, applying visibility rules and noise.
std::vector<SkeletonDetection> observe(const Pose3D& pose,
                                       const SynthConfig& config,
                                       const CameraRig& rig, int person_id,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> pixel_noise(0.0, config.pixel_noise_sigma);
  std::uniform_real_distribution<double> conf(0.5, 1.0);
  std::vector<SkeletonDetection> detections;
  detections.reserve(rig.cameras.size());
  for (const CameraModel& camera : rig.cameras) {
    SkeletonDetection det;
    det.camera_id = camera.id;
    det.person_id = person_id;
    det.keypoints.assign(pose.joints.size(), Keypoint2D{});
    const bool person_occluded = unit(rng) < config.occlusion_prob;
    for (std::size_t k = 0; k < pose.joints.size(); ++k) {
      const bool dropped = unit(rng) < config.keypoint_drop_prob;
      if (person_occluded || dropped) {
        continue;
      }
      if (geometry::camera_depth(camera, pose.joints[k]) <= 1e-6) {
        continue;
      }
      Vec2 px = geometry::project(camera, pose.joints[k]);
      if (!camera.contains(px)) {
        continue;
      }
      if (config.pixel_noise_sigma > 0.0) {
        px.x() += pixel_noise(rng);
        px.y() += pixel_noise(rng);
        px.x() = std::clamp(px.x(), 0.0, camera.width - 1.0);
        px.y() = std::clamp(px.y(), 0.0, camera.height - 1.0);
      }
      auto& kp = det.keypoints[k];
      kp.visible = true;
      kp.u = px.x();
      kp.v = px.y();
      kp.confidence = conf(rng);
    }
    detections.push_back(std::move(det));
  }
  return detections;
}

Vec3 sample_home(const SynthConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double radius = config.arena_radius_mm * std::sqrt(unit(rng));
  const double angle = 2.0 * M_PI * unit(rng);
  return {radius * std::cos(angle), radius * std::sin(angle), 1000.0};
}

}  // namespace

void SynthConfig::validate() const {
  if (cameras < 1) throw InvalidConfig("cameras", "need at least one camera");
  check_range(rig_radius_mm, "rig_radius_mm", 500.0);
  check_range(rig_height_mm, "rig_height_mm", 0.0);
  if (image_width < 16 || image_height < 16) {
    throw InvalidConfig("image_width", "image too small");
  }
  check_range(focal_px, "focal_px", 1.0);
  if (n_k < 5) throw InvalidConfig("n_k", "need at least five keypoints");
  check_range(central_segment_mm, "central_segment_mm", 1.0);
  check_range(limb_segment_mm, "limb_segment_mm", 1.0);
  if (!(arena_radius_mm > 0.0)) {
    throw InvalidConfig("arena_radius_mm", "must be positive");
  }
  if (!(pixel_noise_sigma >= 0.0)) {
    throw InvalidConfig("pixel_noise_sigma", "must be non-negative");
  }
  check_prob(keypoint_drop_prob, "keypoint_drop_prob");
  check_prob(occlusion_prob, "occlusion_prob");
}

SkeletonTopology SkeletonTopology::canonical(int n_k) {
  SkeletonTopology topo;
  topo.n_k = n_k;
  const int central = (n_k % 2 == 1) ? (n_k >= 7 ? 3 : 1) : 2;
  const int pairs = (n_k - central) / 2;
  // central chain: root upwards
  for (int c = 1; c < central; ++c) {
    Segment seg;
    seg.joint = c;
    seg.parent = c - 1;
    seg.rest_dir = Vec3::UnitZ();
    topo.segments.push_back(seg);
  }
  const int arm_anchor = central >= 2 ? 1 : 0;
  const int leg_anchor = 0;
  // pair p: even -> arm chain, odd -> leg chain; chains grow outward
  std::vector<int> prev_left{-1, -1};  // per family: last left joint
  std::vector<int> prev_right{-1, -1};
  std::vector<int> depth{0, 0};
  for (int p = 0; p < pairs; ++p) {
    const int family = p % 2;  // 0 arm, 1 leg
    const int left_joint = central + 2 * p;
    const int right_joint = central + 2 * p + 1;
    const int parent_left =
        prev_left[family] >= 0 ? prev_left[family] : (family == 0 ? arm_anchor : leg_anchor);
    const int parent_right =
        prev_right[family] >= 0 ? prev_right[family] : (family == 0 ? arm_anchor : leg_anchor);
    Vec3 rest;
    if (family == 0) {
      rest = depth[family] == 0 ? Vec3(0.97, 0.0, -0.25) : Vec3(0.35, 0.15, -0.92);
    } else {
      rest = depth[family] == 0 ? Vec3(0.28, 0.0, -0.96) : Vec3(0.06, 0.08, -0.99);
    }
    rest.normalize();
    Segment left;
    left.joint = left_joint;
    left.parent = parent_left;
    left.pair = p;
    left.side = 1.0;
    left.rest_dir = rest;
    left.limb = true;
    Segment right = left;
    right.joint = right_joint;
    right.parent = parent_right;
    right.side = -1.0;
    right.rest_dir = Vec3(-rest.x(), rest.y(), rest.z());
    topo.segments.push_back(left);
    topo.segments.push_back(right);
    prev_left[family] = left_joint;
    prev_right[family] = right_joint;
    ++depth[family];
  }
  return topo;
}

std::vector<std::pair<int, int>> SkeletonTopology::bones() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(segments.size());
  for (const auto& seg : segments) {
    out.emplace_back(seg.parent, seg.joint);
  }
  return out;
}

CameraRig make_rig(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(util::mix_seed(config.seed, 0xC0FFEE));
  std::uniform_real_distribution<double> radius(config.rig_radius_mm.lo,
                                                config.rig_radius_mm.hi);
  std::uniform_real_distribution<double> height(config.rig_height_mm.lo,
                                                config.rig_height_mm.hi);
  std::uniform_real_distribution<double> focal(config.focal_px.lo, config.focal_px.hi);
  std::uniform_real_distribution<double> jitter(-0.12, 0.12);
  CameraRig rig;
  for (int c = 0; c < config.cameras; ++c) {
    const double angle = 2.0 * M_PI * c / config.cameras + jitter(rng);
    const double r = radius(rng);
    const Vec3 eye(r * std::cos(angle), r * std::sin(angle), height(rng));
    Mat3 intr = Mat3::Identity();
    const double f = focal(rng);
    intr(0, 0) = f;
    intr(1, 1) = f;
    intr(0, 2) = config.image_width / 2.0;
    intr(1, 2) = config.image_height / 2.0;
    const Mat3 rot = look_at_rotation(eye, Vec3(0.0, 0.0, 900.0));
    rig.cameras.push_back(CameraModel::make("cam" + std::to_string(c),
                                            config.image_width,
                                            config.image_height, intr, rot,
                                            -rot * eye));
  }
  return rig;
}

TrackResult generate_track(const SynthConfig& config, const CameraRig& rig,
                           int track_index, int length) {
  config.validate();
  if (length < 1) {
    throw InvalidConfig("length", "need at least one frame");
  }
  std::mt19937_64 rng(util::mix_seed(config.seed, 0x7A5C + track_index));
  const SkeletonTopology topology = SkeletonTopology::canonical(config.n_k);
  BodySimulator body(config, topology, sample_home(config, rng), rng);
  TrackResult result;
  result.track.person_id = track_index;
  for (int f = 0; f < length; ++f) {
    body.step(rng);
    const Pose3D pose = body.pose();
    FrameSample sample;
    sample.frame_id = f;
    auto detections = observe(pose, config, rig, track_index, rng);
    for (auto& det : detections) {
      ViewDetections view;
      view.camera_id = det.camera_id;
      view.skeletons.push_back(std::move(det));
      sample.views.push_back(std::move(view));
    }
    sample.ground_truth.push_back({track_index, pose});
    result.ground_truth.push_back(pose);
    result.track.frames.push_back(std::move(sample));
  }
  return result;
}

std::vector<FrameSample> generate_scene_frames(const SynthConfig& config,
                                               const CameraRig& rig,
                                               const SceneConfig& scene,
                                               std::uint64_t seed_salt) {
  config.validate();
  if (scene.persons_min < 1 || scene.persons_max < scene.persons_min) {
    throw InvalidConfig("persons_min", "need 1 <= persons_min <= persons_max");
  }
  if (scene.frames < 1) {
    throw InvalidConfig("frames", "need at least one frame");
  }
  std::mt19937_64 rng(util::mix_seed(config.seed, 0x5CE4E + seed_salt));
  std::uniform_int_distribution<int> person_count(scene.persons_min,
                                                  scene.persons_max);
  const int persons = person_count(rng);
  const SkeletonTopology topology = SkeletonTopology::canonical(config.n_k);

  std::vector<Vec3> homes;
  for (int p = 0; p < persons; ++p) {
    Vec3 home = sample_home(config, rng);
    for (int attempt = 0; attempt < 64; ++attempt) {
      bool clear = true;
      for (const Vec3& other : homes) {
        if ((home - other).head<2>().norm() < scene.min_separation_mm) {
          clear = false;
          break;
        }
      }
      if (clear) break;
      home = sample_home(config, rng);
    }
    homes.push_back(home);
  }

  std::vector<BodySimulator> bodies;
  bodies.reserve(persons);
  for (int p = 0; p < persons; ++p) {
    bodies.emplace_back(config, topology, homes[p], rng);
  }

  std::vector<FrameSample> frames;
  frames.reserve(scene.frames);
  for (int f = 0; f < scene.frames; ++f) {
    FrameSample sample;
    sample.frame_id = f;
    for (const CameraModel& camera : rig.cameras) {
      ViewDetections view;
      view.camera_id = camera.id;
      sample.views.push_back(std::move(view));
    }
    for (int p = 0; p < persons; ++p) {
      bodies[p].step(rng);
      const Pose3D pose = bodies[p].pose();
      auto detections = observe(pose, config, rig, p, rng);
      for (auto& det : detections) {
        if (det.visible_count() == 0) {
          continue;  // detectors do not report fully hidden people
        }
        for (auto& view : sample.views) {
          if (view.camera_id == det.camera_id) {
            view.skeletons.push_back(std::move(det));
            break;
          }
        }
      }
      sample.ground_truth.push_back({p, pose});
    }
    frames.push_back(std::move(sample));
  }
  return frames;
}

std::vector<std::uint32_t> enumerate_view_subsets(const FrameSample& sample,
                                                  const AugmentPolicy& policy,
                                                  std::mt19937_64& rng) {
  std::vector<int> usable;
  for (std::size_t v = 0; v < sample.views.size(); ++v) {
    bool any_visible = false;
    for (const auto& det : sample.views[v].skeletons) {
      if (det.visible_count() > 0) {
        any_visible = true;
        break;
      }
    }
    if (any_visible) {
      usable.push_back(static_cast<int>(v));
    }
  }
  std::uint32_t full = 0;
  for (std::size_t v = 0; v < sample.views.size(); ++v) {
    full |= 1u << v;
  }
  const int n = static_cast<int>(usable.size());
  std::vector<std::uint32_t> masks{full};
  if (n <= 1) {
    return masks;
  }
  const bool exhaustive =
      policy.mode == AugmentPolicy::Mode::exhaustive ||
      (policy.mode == AugmentPolicy::Mode::automatic && n <= 5);
  auto expand = [&](std::uint32_t subset_bits) {
    // bits over `usable` -> mask over views; untouched empty views stay kept
    std::uint32_t mask = full;
    for (int i = 0; i < n; ++i) {
      if (!(subset_bits & (1u << i))) {
        mask &= ~(1u << usable[i]);
      }
    }
    return mask;
  };
  if (exhaustive) {
    for (std::uint32_t bits = 1; bits + 1 < (1u << n); ++bits) {
      masks.push_back(expand(bits));
    }
  } else {
    std::uniform_int_distribution<std::uint32_t> draw(1, (1u << n) - 2);
    std::vector<std::uint32_t> seen{(1u << n) - 1};
    const int wanted = policy.random_factor * n;
    int attempts = 0;
    while (static_cast<int>(seen.size()) - 1 < wanted && attempts < wanted * 20) {
      ++attempts;
      const std::uint32_t bits = draw(rng);
      if (std::find(seen.begin(), seen.end(), bits) != seen.end()) {
        continue;
      }
      seen.push_back(bits);
      masks.push_back(expand(bits));
    }
  }
  return masks;
}

FrameSample apply_view_subset(const FrameSample& sample, std::uint32_t kept_mask) {
  FrameSample out = sample;
  for (std::size_t v = 0; v < out.views.size(); ++v) {
    if (kept_mask & (1u << v)) {
      continue;
    }
    for (auto& det : out.views[v].skeletons) {
      for (auto& kp : det.keypoints) {
        kp = Keypoint2D{};
      }
    }
  }
  return out;
}

std::vector<std::pair<FrameSample, FrameSample>> augment_views(
    const FrameSample& sample, const AugmentPolicy& policy) {
  if (sample.views.empty()) {
    throw EmptyFrame("augment_views: sample has no views");
  }
  std::mt19937_64 rng(policy.seed);
  const auto masks = enumerate_view_subsets(sample, policy, rng);
  std::vector<std::pair<FrameSample, FrameSample>> pairs;
  pairs.reserve(masks.size());
  for (const std::uint32_t mask : masks) {
    pairs.emplace_back(apply_view_subset(sample, mask), sample);
  }
  return pairs;
}

}  // namespace mvpose::scene
