#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "detkit/detection.hpp"

namespace detkit {

enum class FusionMode { score_only, fused_predicted_iou, fused_ground_truth_iou };

std::string_view to_string(FusionMode mode);
// Accepts "score_only", "fused_predicted_iou", "fused_ground_truth_iou" and
// the short forms "score", "pred", "gt". Throws std::invalid_argument.
FusionMode parse_fusion_mode(std::string_view text);

struct FusionConfig {
  double alpha = 0.5;
  FusionMode mode = FusionMode::fused_predicted_iou;

  void validate() const;
};

// Best-performing alpha for each training regime of the target-IoU gradient.
inline double default_alpha(bool propagate_target_iou_gradient) {
  return propagate_target_iou_gradient ? 0.4 : 0.5;
}

// S_det = score^alpha * iou^(1 - alpha); score_only returns score unchanged.
// Throws std::invalid_argument if a fused mode is given no iou.
double fuse(double score, std::optional<double> iou, const FusionConfig& cfg);

// Returns the ground-truth IoU of a detection, or nullopt when unknown.
using GroundTruthIouLookup = std::function<std::optional<double>(const Detection&)>;

// Sets confidence on every detection, preserving order. Predicted mode reads
// Detection::predicted_iou; ground-truth mode queries the lookup, and a miss
// throws std::invalid_argument.
std::vector<Detection> fuse_batch(std::vector<Detection> dets, const FusionConfig& cfg,
                                  const GroundTruthIouLookup& gt_iou_lookup = {});

}  // namespace detkit
