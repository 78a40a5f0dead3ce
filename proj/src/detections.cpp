#include "mvpose/detections.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mvpose::scene {

namespace {

using nlohmann::json;

double number_at(const json& node, const std::string& field, int line) {
  if (!node.is_number()) {
    throw SchemaError(line, field, "expected a number");
  }
  const double value = node.get<double>();
  if (!std::isfinite(value)) {
    throw SchemaError(line, field, "expected a finite number");
  }
  return value;
}

Keypoint2D keypoint_from_json(const json& node, const std::string& field, int line) {
  if (!node.is_array() || node.size() != 4) {
    throw SchemaError(line, field, "expected [visible, u, v, conf]");
  }
  const double visible = number_at(node[0], field + "[0]", line);
  if (visible != 0.0 && visible != 1.0) {
    throw SchemaError(line, field + "[0]", "visible flag must be 0 or 1");
  }
  Keypoint2D kp;
  kp.visible = visible == 1.0;
  kp.u = number_at(node[1], field + "[1]", line);
  kp.v = number_at(node[2], field + "[2]", line);
  kp.confidence = number_at(node[3], field + "[3]", line);
  if (kp.visible) {
    if (!(kp.confidence > 0.0 && kp.confidence <= 1.0)) {
      throw SchemaError(line, field + "[3]",
                        "confidence of a visible keypoint must be in (0, 1]");
    }
  } else {
    if (kp.u != 0.0 || kp.v != 0.0 || kp.confidence != 0.0) {
      throw SchemaError(line, field,
                        "invisible keypoints must carry zero u, v and confidence");
    }
  }
  return kp;
}

}  // namespace

FrameSample frame_from_json_line(const std::string& line, int line_number) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& err) {
    throw SchemaError(line_number, "", std::string("not valid JSON: ") + err.what());
  }
  if (!doc.is_object()) {
    throw SchemaError(line_number, "", "expected a JSON object");
  }
  if (!doc.contains("frame_id") || !doc["frame_id"].is_number_integer()) {
    throw SchemaError(line_number, "frame_id", "missing integer frame_id");
  }
  FrameSample sample;
  sample.frame_id = doc["frame_id"].get<long>();
  if (!doc.contains("views") || !doc["views"].is_array()) {
    throw SchemaError(line_number, "views", "missing views array");
  }
  int n_k = -1;
  int view_idx = 0;
  for (const auto& view_node : doc["views"]) {
    const std::string vfield = "views[" + std::to_string(view_idx) + "]";
    if (!view_node.is_object() || !view_node.contains("camera_id") ||
        !view_node["camera_id"].is_string()) {
      throw SchemaError(line_number, vfield + ".camera_id", "missing camera id");
    }
    ViewDetections view;
    view.camera_id = view_node["camera_id"].get<std::string>();
    for (const auto& existing : sample.views) {
      if (existing.camera_id == view.camera_id) {
        throw SchemaError(line_number, vfield + ".camera_id",
                          "duplicate camera id '" + view.camera_id + "'");
      }
    }
    if (!view_node.contains("skeletons") || !view_node["skeletons"].is_array()) {
      throw SchemaError(line_number, vfield + ".skeletons", "missing skeletons array");
    }
    int skel_idx = 0;
    for (const auto& skel_node : view_node["skeletons"]) {
      const std::string sfield = vfield + ".skeletons[" + std::to_string(skel_idx) + "]";
      SkeletonDetection det;
      det.camera_id = view.camera_id;
      if (skel_node.contains("person_id")) {
        if (!skel_node["person_id"].is_number_integer()) {
          throw SchemaError(line_number, sfield + ".person_id", "expected an integer");
        }
        det.person_id = skel_node["person_id"].get<int>();
      }
      if (!skel_node.contains("kps") || !skel_node["kps"].is_array()) {
        throw SchemaError(line_number, sfield + ".kps", "missing keypoint array");
      }
      int kp_idx = 0;
      for (const auto& kp_node : skel_node["kps"]) {
        det.keypoints.push_back(keypoint_from_json(
            kp_node, sfield + ".kps[" + std::to_string(kp_idx) + "]", line_number));
        ++kp_idx;
      }
      if (n_k < 0) {
        n_k = kp_idx;
      } else if (kp_idx != n_k) {
        throw SchemaError(line_number, sfield + ".kps",
                          "inconsistent keypoint count (" + std::to_string(kp_idx) +
                              " vs " + std::to_string(n_k) + ")");
      }
      view.skeletons.push_back(std::move(det));
      ++skel_idx;
    }
    sample.views.push_back(std::move(view));
    ++view_idx;
  }
  if (doc.contains("gt")) {
    if (!doc["gt"].is_array()) {
      throw SchemaError(line_number, "gt", "expected an array");
    }
    int gt_idx = 0;
    for (const auto& gt_node : doc["gt"]) {
      const std::string gfield = "gt[" + std::to_string(gt_idx) + "]";
      if (!gt_node.is_object() || !gt_node.contains("person_id") ||
          !gt_node["person_id"].is_number_integer()) {
        throw SchemaError(line_number, gfield + ".person_id", "missing integer person id");
      }
      GroundTruthPose gt;
      gt.person_id = gt_node["person_id"].get<int>();
      if (!gt_node.contains("joints") || !gt_node["joints"].is_array()) {
        throw SchemaError(line_number, gfield + ".joints", "missing joints array");
      }
      int joint_idx = 0;
      for (const auto& joint_node : gt_node["joints"]) {
        const std::string jfield = gfield + ".joints[" + std::to_string(joint_idx) + "]";
        if (!joint_node.is_array() || joint_node.size() != 3) {
          throw SchemaError(line_number, jfield, "expected [x, y, z]");
        }
        gt.pose.joints.emplace_back(number_at(joint_node[0], jfield + "[0]", line_number),
                                    number_at(joint_node[1], jfield + "[1]", line_number),
                                    number_at(joint_node[2], jfield + "[2]", line_number));
        ++joint_idx;
      }
      if (n_k >= 0 && joint_idx != n_k) {
        throw SchemaError(line_number, gfield + ".joints",
                          "ground truth joint count differs from detections");
      }
      sample.ground_truth.push_back(std::move(gt));
      ++gt_idx;
    }
  }
  return sample;
}

std::string frame_to_json_line(const FrameSample& sample) {
  json doc;
  doc["frame_id"] = sample.frame_id;
  doc["views"] = json::array();
  for (const auto& view : sample.views) {
    json view_node;
    view_node["camera_id"] = view.camera_id;
    view_node["skeletons"] = json::array();
    for (const auto& det : view.skeletons) {
      json skel_node;
      if (det.person_id.has_value()) {
        skel_node["person_id"] = *det.person_id;
      }
      json kps = json::array();
      for (const auto& kp : det.keypoints) {
        kps.push_back({kp.visible ? 1 : 0, kp.u, kp.v, kp.confidence});
      }
      skel_node["kps"] = std::move(kps);
      view_node["skeletons"].push_back(std::move(skel_node));
    }
    doc["views"].push_back(std::move(view_node));
  }
  if (!sample.ground_truth.empty()) {
    doc["gt"] = json::array();
    for (const auto& gt : sample.ground_truth) {
      json gt_node;
      gt_node["person_id"] = gt.person_id;
      json joints = json::array();
      for (const auto& j : gt.pose.joints) {
        joints.push_back({j.x(), j.y(), j.z()});
      }
      gt_node["joints"] = std::move(joints);
      doc["gt"].push_back(std::move(gt_node));
    }
  }
  return doc.dump();
}

std::vector<FrameSample> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw SchemaError(0, "path", "cannot open detections file " + path.string());
  }
  std::vector<FrameSample> samples;
  std::string line;
  int line_number = 0;
  int n_k = -1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    FrameSample sample = frame_from_json_line(line, line_number);
    int sample_nk = -1;
    for (const auto& view : sample.views) {
      if (!view.skeletons.empty()) {
        sample_nk = static_cast<int>(view.skeletons.front().keypoints.size());
        break;
      }
    }
    if (sample_nk < 0 && !sample.ground_truth.empty()) {
      sample_nk = sample.ground_truth.front().pose.size();
    }
    if (sample_nk >= 0) {
      if (n_k < 0) {
        n_k = sample_nk;
      } else if (sample_nk != n_k) {
        throw SchemaError(line_number, "views",
                          "keypoint count differs from earlier frames");
      }
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

void save_detections(std::span<const FrameSample> samples,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write detections file " + path.string());
  }
  for (const auto& sample : samples) {
    out << frame_to_json_line(sample) << "\n";
  }
}

std::vector<PersonTrack> load_tracks(std::span<const std::filesystem::path> paths) {
  std::vector<PersonTrack> tracks;
  int fallback_id = 0;
  for (const auto& path : paths) {
    PersonTrack track;
    track.frames = load_detections(path);
    track.person_id = fallback_id++;
    for (const auto& frame : track.frames) {
      for (const auto& view : frame.views) {
        if (view.skeletons.size() > 1) {
          throw SchemaError(0, path.string(),
                            "track file contains a multi-person frame");
        }
        if (!view.skeletons.empty() && view.skeletons.front().person_id) {
          track.person_id = *view.skeletons.front().person_id;
        }
      }
    }
    tracks.push_back(std::move(track));
  }
  return tracks;
}

}  // namespace mvpose::scene
