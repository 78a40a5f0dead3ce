#include "mvpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mvpose::metrics {

namespace {

struct PairDistance {
  double mean_dist = std::numeric_limits<double>::infinity();
  double sum_dist = 0.0;
  int joint_count = 0;
  bool covers_truth = false;
};

PairDistance pose_distance(const PosePrediction& pred, const Pose3D& truth) {
  if (pred.size() != truth.size()) {
    throw ShapeMismatch("pose_distance: joint counts differ (" +
                        std::to_string(pred.size()) + " vs " +
                        std::to_string(truth.size()) + ")");
  }
  PairDistance dist;
  for (int k = 0; k < truth.size(); ++k) {
    if (!pred.joints[k].has_value()) {
      continue;
    }
    dist.sum_dist += (*pred.joints[k] - truth.joints[k]).norm();
    ++dist.joint_count;
  }
  if (dist.joint_count > 0) {
    dist.mean_dist = dist.sum_dist / dist.joint_count;
  }
  dist.covers_truth = dist.joint_count == truth.size();
  return dist;
}

}  // namespace

Assignment match_poses(std::span<const PosePrediction> predicted,
                       std::span<const Pose3D> truth) {
  Assignment assignment;
  assignment.n_pred = static_cast<int>(predicted.size());
  assignment.n_truth = static_cast<int>(truth.size());

  struct Candidate {
    double mean_dist;
    int pred;
    int truth;
  };
  std::vector<Candidate> candidates;
  std::vector<PairDistance> distances(predicted.size() * truth.size());
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    for (std::size_t t = 0; t < truth.size(); ++t) {
      const PairDistance dist = pose_distance(predicted[p], truth[t]);
      distances[p * truth.size() + t] = dist;
      if (dist.joint_count > 0) {
        candidates.push_back({dist.mean_dist, static_cast<int>(p),
                              static_cast<int>(t)});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.mean_dist != b.mean_dist) return a.mean_dist < b.mean_dist;
              if (a.pred != b.pred) return a.pred < b.pred;
              return a.truth < b.truth;
            });
  std::vector<bool> pred_used(predicted.size(), false);
  std::vector<bool> truth_used(truth.size(), false);
  for (const Candidate& cand : candidates) {
    if (pred_used[cand.pred] || truth_used[cand.truth]) {
      continue;
    }
    pred_used[cand.pred] = true;
    truth_used[cand.truth] = true;
    const PairDistance& dist = distances[cand.pred * truth.size() + cand.truth];
    assignment.matched.push_back({cand.pred, cand.truth, dist.mean_dist,
                                  dist.sum_dist, dist.joint_count,
                                  dist.covers_truth});
  }
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    if (!pred_used[p]) assignment.unmatched_pred.push_back(static_cast<int>(p));
  }
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (!truth_used[t]) assignment.unmatched_truth.push_back(static_cast<int>(t));
  }
  return assignment;
}

std::pair<double, double> recall_precision(const Assignment& assignment,
                                           double threshold) {
  int correct = 0;
  for (const auto& pair : assignment.matched) {
    if (pair.covers_truth && pair.mean_dist < threshold) {
      ++correct;
    }
  }
  double recall, precision;
  if (assignment.n_truth == 0) {
    recall = 100.0;
  } else {
    recall = 100.0 * correct / assignment.n_truth;
  }
  if (assignment.n_pred == 0) {
    precision = assignment.n_truth == 0 ? 100.0 : 0.0;
  } else {
    precision = 100.0 * correct / assignment.n_pred;
  }
  return {recall, precision};
}

double mpjpe(const Assignment& assignment) {
  double sum = 0.0;
  long joints = 0;
  for (const auto& pair : assignment.matched) {
    sum += pair.sum_dist;
    joints += pair.joint_count;
  }
  if (joints == 0) {
    throw NoMatches("mpjpe: no matched pose pairs");
  }
  return sum / joints;
}

namespace {

struct SweepEntry {
  double confidence = 0.0;
  int frame = 0;
  int pred = 0;
};

double ap_sweep(std::span<const FrameEval> frames, double threshold) {
  long total_truth = 0;
  std::vector<SweepEntry> entries;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    total_truth += static_cast<long>(frames[f].truths.size());
    for (std::size_t p = 0; p < frames[f].predictions.size(); ++p) {
      const double conf = frames[f].predictions[p].confidence;
      if (std::isnan(conf)) {
        throw MissingConfidence("average_precision: prediction without confidence");
      }
      entries.push_back({conf, static_cast<int>(f), static_cast<int>(p)});
    }
  }
  if (entries.empty()) {
    return total_truth == 0 ? 100.0 : 0.0;
  }
  if (total_truth == 0) {
    return 0.0;  // every prediction is spurious
  }
  std::sort(entries.begin(), entries.end(),
            [](const SweepEntry& a, const SweepEntry& b) {
              if (a.confidence != b.confidence) return a.confidence > b.confidence;
              if (a.frame != b.frame) return a.frame < b.frame;
              return a.pred < b.pred;
            });
  std::vector<std::vector<bool>> consumed(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    consumed[f].assign(frames[f].truths.size(), false);
  }
  std::vector<double> precisions, recalls;
  long tp = 0, fp = 0;
  for (const SweepEntry& entry : entries) {
    const auto& frame = frames[entry.frame];
    const PosePrediction& pred = frame.predictions[entry.pred];
    int best_truth = -1;
    double best_dist = threshold;
    for (std::size_t t = 0; t < frame.truths.size(); ++t) {
      if (consumed[entry.frame][t]) continue;
      const PairDistance dist = pose_distance(pred, frame.truths[t]);
      if (dist.covers_truth && dist.mean_dist < best_dist) {
        best_dist = dist.mean_dist;
        best_truth = static_cast<int>(t);
      }
    }
    if (best_truth >= 0) {
      consumed[entry.frame][best_truth] = true;
      ++tp;
    } else {
      ++fp;
    }
    precisions.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recalls.push_back(static_cast<double>(tp) / static_cast<double>(total_truth));
  }
  // all-point interpolation: area under recall -> max precision at >= recall
  double area = 0.0;
  double running_max = 0.0;
  for (long i = static_cast<long>(precisions.size()) - 1; i >= 0; --i) {
    running_max = std::max(running_max, precisions[i]);
    const double lower = i > 0 ? recalls[i - 1] : 0.0;
    area += (recalls[i] - lower) * running_max;
  }
  return 100.0 * area;
}

}  // namespace

double average_precision(std::span<const FrameEval> frames, double threshold) {
  return ap_sweep(frames, threshold);
}

double average_precision(std::span<const PosePrediction> predictions,
                         std::span<const Pose3D> truths, double threshold) {
  FrameEval frame;
  frame.predictions.assign(predictions.begin(), predictions.end());
  frame.truths.assign(truths.begin(), truths.end());
  return ap_sweep({&frame, 1}, threshold);
}

void EvalConfig::validate() const {
  if (thresholds.empty()) {
    throw InvalidConfig("thresholds", "need at least one threshold");
  }
  double prev = 0.0;
  for (const double th : thresholds) {
    if (!(th > prev)) {
      throw InvalidConfig("thresholds", "must be positive and strictly increasing");
    }
    prev = th;
  }
}

EvalReport evaluate(std::span<const FrameEval> frames, const EvalConfig& config) {
  config.validate();
  EvalReport report;
  long total_truth = 0;
  long total_pred = 0;
  double dist_sum = 0.0;
  long joint_sum = 0;
  std::vector<Assignment> assignments;
  assignments.reserve(frames.size());
  for (const FrameEval& frame : frames) {
    Assignment assignment = match_poses(frame.predictions, frame.truths);
    total_truth += assignment.n_truth;
    total_pred += assignment.n_pred;
    for (const auto& pair : assignment.matched) {
      dist_sum += pair.sum_dist;
      joint_sum += pair.joint_count;
      ++report.matched_pairs;
    }
    assignments.push_back(std::move(assignment));
  }
  report.mpjpe_mm = joint_sum > 0 ? dist_sum / joint_sum
                                  : std::numeric_limits<double>::quiet_NaN();
  for (const double threshold : config.thresholds) {
    long correct = 0;
    for (const Assignment& assignment : assignments) {
      for (const auto& pair : assignment.matched) {
        if (pair.covers_truth && pair.mean_dist < threshold) {
          ++correct;
        }
      }
    }
    ThresholdMetrics row;
    row.threshold = threshold;
    row.recall_pct = total_truth == 0
                         ? 100.0
                         : 100.0 * correct / static_cast<double>(total_truth);
    row.precision_pct =
        total_pred == 0
            ? (total_truth == 0 ? 100.0 : 0.0)
            : 100.0 * correct / static_cast<double>(total_pred);
    row.ap_pct = ap_sweep(frames, threshold);
    report.per_threshold.push_back(row);
  }
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json doc;
  doc["thresholds_mm"] = nlohmann::json::array();
  doc["recall_pct"] = nlohmann::json::array();
  doc["precision_pct"] = nlohmann::json::array();
  doc["ap_pct"] = nlohmann::json::array();
  for (const auto& row : per_threshold) {
    doc["thresholds_mm"].push_back(row.threshold);
    doc["recall_pct"].push_back(row.recall_pct);
    doc["precision_pct"].push_back(row.precision_pct);
    doc["ap_pct"].push_back(row.ap_pct);
  }
  if (std::isnan(mpjpe_mm)) {
    doc["mpjpe_mm"] = nullptr;
  } else {
    doc["mpjpe_mm"] = mpjpe_mm;
  }
  doc["matched_pairs"] = matched_pairs;
  if (timing.has_value()) {
    doc["t_pp_ms"] = timing->t_pp_ms;
    doc["t_3Dg_ms"] = timing->t_3dg_ms;
    doc["t_3Di_ms"] = timing->t_3di_ms;
  }
  return doc;
}

namespace {

std::string fmt2(double value) {
  if (std::isnan(value)) {
    return "";
  }
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.2f", value);
  return buffer;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::string csv = "metric";
  for (const auto& row : per_threshold) {
    csv += "," + fmt2(row.threshold);
  }
  csv += "\n";
  auto emit_row = [&](const std::string& name, auto getter) {
    csv += name;
    for (const auto& row : per_threshold) {
      csv += "," + fmt2(getter(row));
    }
    csv += "\n";
  };
  emit_row("recall_pct", [](const ThresholdMetrics& r) { return r.recall_pct; });
  emit_row("precision_pct",
           [](const ThresholdMetrics& r) { return r.precision_pct; });
  emit_row("ap_pct", [](const ThresholdMetrics& r) { return r.ap_pct; });
  auto emit_scalar = [&](const std::string& name, double value) {
    csv += name + "," + fmt2(value);
    for (std::size_t i = 1; i < per_threshold.size(); ++i) {
      csv += ",";
    }
    csv += "\n";
  };
  emit_scalar("mpjpe_mm", mpjpe_mm);
  emit_scalar("t_pp_ms", timing ? timing->t_pp_ms
                                : std::numeric_limits<double>::quiet_NaN());
  emit_scalar("t_3Dg_ms", timing ? timing->t_3dg_ms
                                 : std::numeric_limits<double>::quiet_NaN());
  emit_scalar("t_3Di_ms", timing ? timing->t_3di_ms
                                 : std::numeric_limits<double>::quiet_NaN());
  return csv;
}

}  // namespace mvpose::metrics
