#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvpose/errors.hpp"

namespace mvpose::geometry {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// One calibrated pinhole camera. World units are millimetres and the
// extrinsics convention is world-to-camera: x_cam = rotation * X + translation.
struct CameraModel {
  std::string id;
  int width = 0;
  int height = 0;
  Mat3 intrinsics = Mat3::Identity();   // fx, fy, cx, cy; zero skew
  Mat3 rotation = Mat3::Identity();     // world-to-camera
  Vec3 translation = Vec3::Zero();      // mm
  Mat34 projection = Mat34::Zero();     // intrinsics * [R|t], kept in sync

  static CameraModel make(std::string id, int width, int height,
                          const Mat3& intrinsics, const Mat3& rotation,
                          const Vec3& translation);

  void refresh_projection();
  // Throws InvalidCamera when an invariant is violated.
  void validate() const;

  Vec3 centre() const { return -rotation.transpose() * translation; }
  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }
  bool contains(const Vec2& pixel) const {
    return pixel.x() >= 0 && pixel.x() < width && pixel.y() >= 0 &&
           pixel.y() < height;
  }
};

// A world-frame 3D line through a camera centre, point-plus-unit-direction.
struct Ray3D {
  Vec3 origin = Vec3::Zero();     // mm
  Vec3 direction = Vec3::UnitZ(); // unit norm
};

// Perspective projection of a world point into pixel coordinates. The result
// may lie outside the image bounds. Throws DegenerateDepth when the point is
// at or behind the optical centre (camera-frame depth <= 1e-6 mm).
Vec2 project(const CameraModel& camera, const Vec3& point);

// Camera-frame depth of a world point, (R*X + t).z.
double camera_depth(const CameraModel& camera, const Vec3& point);

// The world ray through the camera centre and the given pixel.
Ray3D backproject_ray(const CameraModel& camera, const Vec2& pixel);

// Midpoint of the common-perpendicular segment between two 3D lines.
// Throws NearParallel when |sin(angle)| < 1e-6.
Vec3 triangulate_pair(const Ray3D& a, const Ray3D& b);

// Distance from a point to an (infinite) ray's line.
double point_ray_distance(const Vec3& point, const Ray3D& ray);

struct Observation {
  const CameraModel* camera = nullptr;
  Vec2 pixel = Vec2::Zero();
};

// Back-projects each observation, triangulates every camera pair (skipping
// near-parallel ones) and returns the centroid of the pairwise results.
// Absent when fewer than two observations exist or all pairs are degenerate.
std::optional<Vec3> triangulate_multiview(std::span<const Observation> observations);

// The calibrated rig shared by all modules. Camera order follows the
// calibration file and fixes the per-camera feature-block order.
struct CameraRig {
  std::vector<CameraModel> cameras;

  int size() const { return static_cast<int>(cameras.size()); }
  // Index of a camera id in the rig, -1 when absent.
  int index_of(const std::string& id) const;
};

// Calibration JSON with explicit convention and unit header fields; files
// missing either field are rejected with SchemaError.
CameraRig load_calibration(const std::filesystem::path& path);
void save_calibration(const CameraRig& rig, const std::filesystem::path& path);

}  // namespace mvpose::geometry
