#pragma once

#include <span>

#include "mvpose/detections.hpp"
#include "mvpose/geometry.hpp"

namespace mvpose::features {

// Per keypoint and camera both networks consume the same 10-slot block:
// [detected, u/width, v/height, certainty, ray origin xyz (m), ray dir xyz].
// Undetected keypoints leave the whole block zero.
constexpr int kViewSlots = 10;

inline void fill_view_block(std::span<double> block,
                            const scene::Keypoint2D& keypoint,
                            const geometry::CameraModel& camera) {
  if (!keypoint.visible) {
    std::fill(block.begin(), block.end(), 0.0);
    return;
  }
  const geometry::Ray3D ray =
      geometry::backproject_ray(camera, {keypoint.u, keypoint.v});
  block[0] = 1.0;
  block[1] = keypoint.u / camera.width;
  block[2] = keypoint.v / camera.height;
  block[3] = keypoint.confidence;
  block[4] = ray.origin.x() / 1000.0;  // metres keep magnitudes O(1)
  block[5] = ray.origin.y() / 1000.0;
  block[6] = ray.origin.z() / 1000.0;
  block[7] = ray.direction.x();
  block[8] = ray.direction.y();
  block[9] = ray.direction.z();
}

}  // namespace mvpose::features
