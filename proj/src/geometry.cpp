#include "mvpose/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mvpose::geometry {

namespace {

constexpr double kMinDepthMm = 1e-6;
constexpr double kMinPairSin = 1e-6;

bool finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

}  // namespace

CameraModel CameraModel::make(std::string id, int width, int height,
                              const Mat3& intrinsics, const Mat3& rotation,
                              const Vec3& translation) {
  CameraModel cam;
  cam.id = std::move(id);
  cam.width = width;
  cam.height = height;
  cam.intrinsics = intrinsics;
  cam.rotation = rotation;
  cam.translation = translation;
  cam.refresh_projection();
  cam.validate();
  return cam;
}

void CameraModel::refresh_projection() {
  Mat34 rt;
  rt.block<3, 3>(0, 0) = rotation;
  rt.col(3) = translation;
  projection = intrinsics * rt;
}

void CameraModel::validate() const {
  const Mat3 rtr = rotation.transpose() * rotation - Mat3::Identity();
  if (rtr.cwiseAbs().maxCoeff() >= 1e-9) {
    throw InvalidCamera("camera '" + id + "': rotation is not orthonormal");
  }
  if (rotation.determinant() < 0.0) {
    throw InvalidCamera("camera '" + id + "': rotation determinant is not +1");
  }
  if (!(fx() > 0.0) || !(fy() > 0.0)) {
    throw InvalidCamera("camera '" + id + "': focal lengths must be positive");
  }
  if (!(cx() > 0.0 && cx() < width) || !(cy() > 0.0 && cy() < height)) {
    throw InvalidCamera("camera '" + id +
                        "': principal point outside the image");
  }
  const Mat34 expect = [&] {
    Mat34 rt;
    rt.block<3, 3>(0, 0) = rotation;
    rt.col(3) = translation;
    return Mat34(intrinsics * rt);
  }();
  if ((projection - expect).cwiseAbs().maxCoeff() > 1e-9) {
    throw InvalidCamera("camera '" + id + "': stale projection matrix");
  }
}

double camera_depth(const CameraModel& camera, const Vec3& point) {
  return camera.rotation.row(2).dot(point) + camera.translation.z();
}

Vec2 project(const CameraModel& camera, const Vec3& point) {
  if (!finite(point)) {
    throw DegenerateDepth("project: non-finite point");
  }
  const Eigen::Vector4d homog(point.x(), point.y(), point.z(), 1.0);
  const Vec3 p = camera.projection * homog;
  if (p.z() <= kMinDepthMm) {
    throw DegenerateDepth("project: point at or behind the optical centre of camera '" +
                          camera.id + "'");
  }
  return {p.x() / p.z(), p.y() / p.z()};
}

Ray3D backproject_ray(const CameraModel& camera, const Vec2& pixel) {
  Ray3D ray;
  ray.origin = camera.centre();
  const Vec3 homog(pixel.x(), pixel.y(), 1.0);
  const Vec3 cam_dir = camera.intrinsics.inverse() * homog;
  ray.direction = (camera.rotation.transpose() * cam_dir).normalized();
  return ray;
}

double point_ray_distance(const Vec3& point, const Ray3D& ray) {
  const Vec3 rel = point - ray.origin;
  return rel.cross(ray.direction).norm() / ray.direction.norm();
}

Vec3 triangulate_pair(const Ray3D& a, const Ray3D& b) {
  const double d1d2 = a.direction.dot(b.direction);
  const double denom = 1.0 - d1d2 * d1d2;  // sin^2 of the angle
  if (denom < kMinPairSin * kMinPairSin) {
    throw NearParallel("triangulate_pair: rays are near parallel");
  }
  const Vec3 w = a.origin - b.origin;
  const double d = a.direction.dot(w);
  const double e = b.direction.dot(w);
  const double s1 = (d1d2 * e - d) / denom;
  const double s2 = (e - d1d2 * d) / denom;
  const Vec3 p1 = a.origin + s1 * a.direction;
  const Vec3 p2 = b.origin + s2 * b.direction;
  return 0.5 * (p1 + p2);
}

std::optional<Vec3> triangulate_multiview(std::span<const Observation> observations) {
  if (observations.size() < 2) {
    return std::nullopt;
  }
  std::vector<Ray3D> rays;
  rays.reserve(observations.size());
  for (const Observation& obs : observations) {
    rays.push_back(backproject_ray(*obs.camera, obs.pixel));
  }
  Vec3 sum = Vec3::Zero();
  int count = 0;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    for (std::size_t j = i + 1; j < rays.size(); ++j) {
      const double d1d2 = rays[i].direction.dot(rays[j].direction);
      if (1.0 - d1d2 * d1d2 < kMinPairSin * kMinPairSin) {
        continue;
      }
      sum += triangulate_pair(rays[i], rays[j]);
      ++count;
    }
  }
  if (count == 0) {
    return std::nullopt;
  }
  return Vec3(sum / count);
}

int CameraRig::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    if (cameras[i].id == id) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

namespace {

Mat3 mat3_from_json(const nlohmann::json& rows, const std::string& field) {
  if (!rows.is_array() || rows.size() != 3) {
    throw SchemaError(0, field, "expected a 3x3 array");
  }
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    const auto& row = rows[r];
    if (!row.is_array() || row.size() != 3) {
      throw SchemaError(0, field, "expected a 3x3 array");
    }
    for (int c = 0; c < 3; ++c) {
      if (!row[c].is_number()) {
        throw SchemaError(0, field, "expected numeric entries");
      }
      m(r, c) = row[c].get<double>();
    }
  }
  return m;
}

}  // namespace

CameraRig load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw SchemaError(0, "path", "cannot open calibration file " + path.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw SchemaError(0, "", std::string("calibration parse error: ") + err.what());
  }
  if (!doc.contains("convention")) {
    throw SchemaError(0, "convention", "missing required field");
  }
  if (doc["convention"].get<std::string>() != "world_to_camera") {
    throw SchemaError(0, "convention", "expected 'world_to_camera'");
  }
  if (!doc.contains("unit")) {
    throw SchemaError(0, "unit", "missing required field");
  }
  if (doc["unit"].get<std::string>() != "mm") {
    throw SchemaError(0, "unit", "expected 'mm'");
  }
  if (!doc.contains("cameras") || !doc["cameras"].is_array()) {
    throw SchemaError(0, "cameras", "missing camera list");
  }
  CameraRig rig;
  int index = 0;
  for (const auto& entry : doc["cameras"]) {
    const std::string field = "cameras[" + std::to_string(index) + "]";
    for (const char* key : {"id", "width", "height", "K", "R", "t"}) {
      if (!entry.contains(key)) {
        throw SchemaError(0, field + "." + key, "missing required field");
      }
    }
    const auto& t = entry["t"];
    if (!t.is_array() || t.size() != 3) {
      throw SchemaError(0, field + ".t", "expected a 3-vector");
    }
    Vec3 translation(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
    CameraModel cam;
    try {
      cam = CameraModel::make(entry["id"].get<std::string>(),
                              entry["width"].get<int>(),
                              entry["height"].get<int>(),
                              mat3_from_json(entry["K"], field + ".K"),
                              mat3_from_json(entry["R"], field + ".R"),
                              translation);
    } catch (const InvalidCamera& err) {
      throw SchemaError(0, field, err.what());
    }
    if (rig.index_of(cam.id) >= 0) {
      throw SchemaError(0, field + ".id", "duplicate camera id '" + cam.id + "'");
    }
    rig.cameras.push_back(std::move(cam));
    ++index;
  }
  return rig;
}

void save_calibration(const CameraRig& rig, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["convention"] = "world_to_camera";
  doc["unit"] = "mm";
  doc["cameras"] = nlohmann::json::array();
  for (const CameraModel& cam : rig.cameras) {
    nlohmann::json entry;
    entry["id"] = cam.id;
    entry["width"] = cam.width;
    entry["height"] = cam.height;
    auto mat = [](const Mat3& m) {
      nlohmann::json rows = nlohmann::json::array();
      for (int r = 0; r < 3; ++r) {
        rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
      }
      return rows;
    };
    entry["K"] = mat(cam.intrinsics);
    entry["R"] = mat(cam.rotation);
    entry["t"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
    doc["cameras"].push_back(std::move(entry));
  }
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write calibration file " + path.string());
  }
  out << doc.dump(2) << "\n";
}

}  // namespace mvpose::geometry
