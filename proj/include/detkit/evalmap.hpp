#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "detkit/detection.hpp"

namespace detkit {

// 0.50:0.05:0.95
inline constexpr std::array<double, 10> kIouThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                       0.75, 0.80, 0.85, 0.90, 0.95};
inline constexpr std::size_t kRecallPoints = 101;

using PrecisionCurve = std::array<double, kRecallPoints>;

enum class AreaRange { all, small, medium, large };
inline constexpr std::array<AreaRange, 4> kAreaRanges{AreaRange::all, AreaRange::small,
                                                      AreaRange::medium, AreaRange::large};

// Inclusive [lo, hi] bounds on ground-truth box area; 32^2 and 96^2 splits.
std::array<double, 2> area_bounds(AreaRange range);

enum class MatchLabel { true_positive, false_positive };

struct MatchResult {
  // Indexed like the input detections.
  std::vector<MatchLabel> labels;
  std::vector<std::optional<std::size_t>> matched_gt;
  // Indexed like the input ground truths.
  std::vector<bool> gt_matched;

  std::size_t true_positives() const;
  std::size_t false_negatives() const;
};

// Greedy matching per (image, category): detections in descending confidence
// each take the unmatched same-category ground truth with the highest IoU
// among those with IoU >= tau (lowest index on ties).
MatchResult match(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                  double tau);

// 101-point interpolated precision: at each recall level r = k/100 the
// maximum precision attained at any recall >= r, or 0 if none.
PrecisionCurve interpolated_precision(std::span<const MatchLabel> labels_by_rank,
                                      std::size_t n_gt);

// Mean of interpolated_precision. nullopt when n_gt == 0 (excluded from
// averaging).
std::optional<double> average_precision(std::span<const MatchLabel> labels_by_rank,
                                        std::size_t n_gt);

struct EvalReport {
  // Mean over kIouThresholds of ap_at_threshold.
  double ap = 0.0;
  std::array<double, kIouThresholds.size()> ap_at_threshold{};
  double ap_small = 0.0;
  double ap_medium = 0.0;
  double ap_large = 0.0;
  // Category-averaged interpolated precision per threshold (all areas).
  std::array<PrecisionCurve, kIouThresholds.size()> pr_curves{};
  std::size_t num_categories_evaluated = 0;

  // Throws std::out_of_range for a threshold not in kIouThresholds.
  double ap_at(double threshold) const;
  double ap50() const { return ap_at(0.50); }
  double ap60() const { return ap_at(0.60); }
  double ap70() const { return ap_at(0.70); }
  double ap75() const { return ap_at(0.75); }
  double ap80() const { return ap_at(0.80); }
  double ap90() const { return ap_at(0.90); }
};

// COCO-style evaluation: per category AP averaged over categories that have
// ground truth; area splits ignore out-of-range ground truth and unmatched
// out-of-range detections. Parallel over (image, category) groups.
EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruthObject> gts);

// Straight-line single-threaded reference for evaluate.
EvalReport evaluate_serial(std::span<const Detection> dets,
                           std::span<const GroundTruthObject> gts);

// Max IoU to any ground truth in the detection's image, category ignored.
double iou_truth(const Detection& det, std::span<const GroundTruthObject> gts);
// Max IoU to ground truths in the detection's image and category.
double iou_eval(const Detection& det, std::span<const GroundTruthObject> gts);

inline constexpr const char* kScatterHeader = "confidence,iou_eval,iou_truth,category_id";

// Writes one row per detection under kScatterHeader. Throws
// std::runtime_error when the file cannot be written.
void scatter_export(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                    const std::filesystem::path& path);

}  // namespace detkit
