#include "detkit/confidence.hpp"

#include <cmath>
#include <exception>
#include <stdexcept>

namespace detkit {

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::score_only:
      return "score_only";
    case FusionMode::fused_predicted_iou:
      return "fused_predicted_iou";
    case FusionMode::fused_ground_truth_iou:
      return "fused_ground_truth_iou";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "score_only" || text == "score") {
    return FusionMode::score_only;
  }
  if (text == "fused_predicted_iou" || text == "pred") {
    return FusionMode::fused_predicted_iou;
  }
  if (text == "fused_ground_truth_iou" || text == "gt") {
    return FusionMode::fused_ground_truth_iou;
  }
  throw std::invalid_argument("unknown fusion mode '" + std::string(text) + "'");
}

void FusionConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("fusion alpha must lie in [0, 1]");
  }
}

double fuse(double score, std::optional<double> iou, const FusionConfig& cfg) {
  cfg.validate();
  if (cfg.mode == FusionMode::score_only) {
    return score;
  }
  if (!iou) {
    throw std::invalid_argument("fused confidence requires an IoU value");
  }
  // pow(x, 0) == 1 exactly, including x == 0.
  return std::pow(score, cfg.alpha) * std::pow(*iou, 1.0 - cfg.alpha);
}

std::vector<Detection> fuse_batch(std::vector<Detection> dets, const FusionConfig& cfg,
                                  const GroundTruthIouLookup& gt_iou_lookup) {
  cfg.validate();
  if (cfg.mode == FusionMode::fused_ground_truth_iou && !gt_iou_lookup) {
    throw std::invalid_argument("ground-truth IoU fusion requires a lookup");
  }

  const auto n = static_cast<std::ptrdiff_t>(dets.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto& d = dets[i];
    try {
      std::optional<double> iou_value;
      if (cfg.mode == FusionMode::fused_predicted_iou) {
        iou_value = d.predicted_iou;
      } else if (cfg.mode == FusionMode::fused_ground_truth_iou) {
        iou_value = gt_iou_lookup(d);
        if (!iou_value) {
          throw std::invalid_argument("ground-truth IoU lookup has no entry for detection " +
                                      std::to_string(i));
        }
      }
      d.confidence = fuse(d.score, iou_value, cfg);
    } catch (...) {
#pragma omp critical(detkit_fuse_failure)
      if (!failure) {
        failure = std::current_exception();
      }
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  return dets;
}

}  // namespace detkit
