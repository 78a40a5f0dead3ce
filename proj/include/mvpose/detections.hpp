#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvpose/errors.hpp"
#include "mvpose/pose.hpp"

namespace mvpose::scene {

struct Keypoint2D {
  bool visible = false;
  double u = 0.0;
  double v = 0.0;
  double confidence = 0.0;

  bool operator==(const Keypoint2D&) const = default;
};

// One person's 2D skeleton in one camera. Invisible keypoints carry zeros.
struct SkeletonDetection {
  std::string camera_id;
  std::optional<int> person_id;
  std::vector<Keypoint2D> keypoints;

  int visible_count() const {
    int n = 0;
    for (const auto& kp : keypoints) n += kp.visible ? 1 : 0;
    return n;
  }

  bool operator==(const SkeletonDetection&) const = default;
};

struct ViewDetections {
  std::string camera_id;
  std::vector<SkeletonDetection> skeletons;

  bool operator==(const ViewDetections&) const = default;
};

struct GroundTruthPose {
  int person_id = 0;
  Pose3D pose;
};

inline bool operator==(const GroundTruthPose& a, const GroundTruthPose& b) {
  return a.person_id == b.person_id && a.pose == b.pose;
}

// All detections from all cameras at one instant, optionally with exact
// ground truth (synthetic data) and person tags.
struct FrameSample {
  long frame_id = 0;
  std::vector<ViewDetections> views;
  std::vector<GroundTruthPose> ground_truth;

  int total_detections() const {
    int n = 0;
    for (const auto& view : views) n += static_cast<int>(view.skeletons.size());
    return n;
  }
  const ViewDetections* view_of(const std::string& camera_id) const {
    for (const auto& view : views) {
      if (view.camera_id == camera_id) return &view;
    }
    return nullptr;
  }

  bool operator==(const FrameSample& other) const {
    return frame_id == other.frame_id && views == other.views &&
           ground_truth == other.ground_truth;
  }
};

// One person observed by all cameras over consecutive frames; the unit the
// label-free training consumes. Each frame holds at most one detection per
// camera and all detections share person_id.
struct PersonTrack {
  int person_id = 0;
  std::vector<FrameSample> frames;
};

// JSON-lines persistence, one FrameSample per line. Strict schema: malformed
// input raises SchemaError with the line number and field path.
std::vector<FrameSample> load_detections(const std::filesystem::path& path);
void save_detections(std::span<const FrameSample> samples,
                     const std::filesystem::path& path);

// Single-sample conversions shared by the JSONL reader/writer and tests.
// `line` is only used for error reporting.
FrameSample frame_from_json_line(const std::string& line, int line_number);
std::string frame_to_json_line(const FrameSample& sample);

std::vector<PersonTrack> load_tracks(std::span<const std::filesystem::path> paths);

}  // namespace mvpose::scene
