#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvpose/errors.hpp"
#include "mvpose/pose.hpp"

namespace mvpose::metrics {

// Greedy one-to-one pred/truth matching by ascending mean per-joint distance.
struct Assignment {
  struct Pair {
    int pred = -1;
    int truth = -1;
    double mean_dist = 0.0;   // over joints present in both
    double sum_dist = 0.0;
    int joint_count = 0;
    bool covers_truth = false;  // prediction provides every truth joint
  };
  std::vector<Pair> matched;
  std::vector<int> unmatched_pred;
  std::vector<int> unmatched_truth;
  int n_pred = 0;
  int n_truth = 0;
};

Assignment match_poses(std::span<const PosePrediction> predicted,
                       std::span<const Pose3D> truth);

// A matched pose counts as correct when it covers every truth joint and its
// mean per-joint distance is smaller than the threshold. Incomplete
// predictions are never correct. Empty-set conventions: recall is 100 when
// there is no truth; precision is 100 only when both sides are empty, 0 when
// predictions face no truth or truth faces no predictions.
std::pair<double, double> recall_precision(const Assignment& assignment,
                                           double threshold);

// Mean distance pooled over all shared joints of all matched pairs.
// Throws NoMatches when nothing matched.
double mpjpe(const Assignment& assignment);

struct FrameEval {
  std::vector<PosePrediction> predictions;
  std::vector<Pose3D> truths;
};

// Confidence-swept average precision with all-point interpolation and
// one-to-one truth consumption per frame. Throws MissingConfidence when any
// prediction carries a NaN confidence.
double average_precision(std::span<const FrameEval> frames, double threshold);
// Single-frame convenience overload.
double average_precision(std::span<const PosePrediction> predictions,
                         std::span<const Pose3D> truths, double threshold);

struct EvalConfig {
  std::vector<double> thresholds{25.0, 50.0, 75.0, 100.0, 125.0, 150.0};

  void validate() const;  // strictly increasing, positive
};

struct ThresholdMetrics {
  double threshold = 0.0;
  double recall_pct = 0.0;
  double precision_pct = 0.0;
  double ap_pct = 0.0;
};

struct TimingAggregate {
  double t_pp_ms = 0.0;   // person-proposal (matching) stage per frame
  double t_3dg_ms = 0.0;  // 3D estimation per frame
  double t_3di_ms = 0.0;  // 3D estimation per person
};

struct EvalReport {
  std::vector<ThresholdMetrics> per_threshold;
  double mpjpe_mm = 0.0;
  long matched_pairs = 0;
  std::optional<TimingAggregate> timing;

  nlohmann::json to_json() const;
  // Table-shaped CSV: one metric per row, one threshold per column.
  std::string to_csv() const;
};

// Pools assignments, counts and the AP sweep over all frames.
EvalReport evaluate(std::span<const FrameEval> frames, const EvalConfig& config);

}  // namespace mvpose::metrics
