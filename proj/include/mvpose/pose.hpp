#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

namespace mvpose {

// An ordered set of 3D keypoints in the world frame, millimetres.
struct Pose3D {
  std::vector<Eigen::Vector3d> joints;

  int size() const { return static_cast<int>(joints.size()); }
};

inline bool operator==(const Pose3D& a, const Pose3D& b) {
  if (a.joints.size() != b.joints.size()) return false;
  for (std::size_t i = 0; i < a.joints.size(); ++i) {
    if (a.joints[i] != b.joints[i]) return false;
  }
  return true;
}

// A predicted pose whose joints may be individually absent (triangulation
// cannot always provide complete poses). Confidence feeds average precision.
struct PosePrediction {
  std::vector<std::optional<Eigen::Vector3d>> joints;
  double confidence = 1.0;

  int size() const { return static_cast<int>(joints.size()); }
  int present_count() const {
    int n = 0;
    for (const auto& j : joints) n += j.has_value() ? 1 : 0;
    return n;
  }

  static PosePrediction from_complete(const Pose3D& pose, double confidence) {
    PosePrediction pred;
    pred.confidence = confidence;
    pred.joints.reserve(pose.joints.size());
    for (const auto& j : pose.joints) pred.joints.emplace_back(j);
    return pred;
  }
};

}  // namespace mvpose
