#pragma once

#include <Eigen/Geometry>

#include <random>

#include "mvpose/geometry.hpp"

namespace mvpose::testing {

using geometry::CameraModel;
using geometry::Mat3;
using geometry::Vec2;
using geometry::Vec3;

// World-to-camera rotation for a camera at `eye` looking at `target`,
// z-up world, image y pointing down.
inline Mat3 look_at_rotation(const Vec3& eye, const Vec3& target) {
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

inline CameraModel camera_at(const std::string& id, const Vec3& eye,
                             const Vec3& target, double focal = 1100.0,
                             int width = 1920, int height = 1080) {
  Mat3 intrinsics = Mat3::Identity();
  intrinsics(0, 0) = focal;
  intrinsics(1, 1) = focal;
  intrinsics(0, 2) = width / 2.0;
  intrinsics(1, 2) = height / 2.0;
  const Mat3 rot = look_at_rotation(eye, target);
  return CameraModel::make(id, width, height, intrinsics, rot, -rot * eye);
}

// A camera on a randomized orbit around the origin, always looking inward.
inline CameraModel random_camera(std::mt19937_64& rng, const std::string& id) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> radius(2200.0, 4200.0);
  std::uniform_real_distribution<double> height(1200.0, 2800.0);
  std::uniform_real_distribution<double> focal(900.0, 1400.0);
  const double a = angle(rng);
  const double r = radius(rng);
  const Vec3 eye(r * std::cos(a), r * std::sin(a), height(rng));
  return camera_at(id, eye, Vec3(0, 0, 1000), focal(rng));
}

// A random point inside the shared working volume of random_camera rigs.
inline Vec3 random_scene_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> xy(-900.0, 900.0);
  std::uniform_real_distribution<double> z(200.0, 1900.0);
  return {xy(rng), xy(rng), z(rng)};
}

}  // namespace mvpose::testing
