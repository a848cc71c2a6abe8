#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "detkit/confidence.hpp"
#include "detkit/detection.hpp"
#include "detkit/evalmap.hpp"
#include "detkit/nms.hpp"

namespace detkit {

struct IntRange {
  int min = 1;
  int max = 1;
};

// Synthetic detector model. Scores come from a latent that is correlated
// with the true IoU by score_coupling; predicted IoUs are the true IoU plus
// clamped Gaussian noise.
struct SimConfig {
  std::uint64_t seed = 1;
  int n_images = 200;
  int num_categories = 3;
  double image_width = 512.0;
  double image_height = 512.0;
  IntRange gt_per_image{1, 6};
  IntRange detections_per_gt{3, 8};
  // Object side lengths are log-uniform in [min_object_size, max_object_size].
  double min_object_size = 12.0;
  double max_object_size = 200.0;
  // Each detection draws its own jitter scale as localization_noise * |N(0,1)|.
  double localization_noise = 0.1;
  // Correlation between the score latent and the standardized true IoU.
  double score_coupling = 0.3;
  double score_scale = 1.5;
  double score_offset = -0.5;
  // Logit bonus for detections of a real object with the right category.
  double classification_margin = 2.5;
  double iou_noise = 0.15;
  // Expected background detections per ground truth object.
  double false_positive_rate = 1.0;
  double misclassification_rate = 0.4;

  // Throws std::invalid_argument on degenerate settings.
  void validate() const;
};

struct ImageInfo {
  ImageId id = 0;
  double width = 0.0;
  double height = 0.0;

  friend bool operator==(const ImageInfo&, const ImageInfo&) = default;
};

struct SimScene {
  std::vector<ImageInfo> images;
  std::vector<CategoryId> categories;
  std::vector<GroundTruthObject> ground_truths;
  // Every detection carries score and predicted_iou; confidence unset.
  std::vector<Detection> detections;
  // Category-agnostic max IoU of each detection; parallel to detections.
  std::vector<double> true_iou;

  friend bool operator==(const SimScene&, const SimScene&) = default;
};

// Deterministic in cfg (including the seed).
SimScene generate(const SimConfig& cfg);

// Lookup returning iou_truth against the given ground truths.
GroundTruthIouLookup make_iou_truth_lookup(std::vector<GroundTruthObject> gts);

// fuse -> nms -> evaluate.
EvalReport run_pipeline(const SimScene& scene, const FusionConfig& fusion, const NmsConfig& nms);

struct MismatchReport {
  // Overlapping same-category pairs where score-ranked NMS keeps the
  // lower-IoU box and fused NMS keeps the higher-IoU one.
  std::size_t flips = 0;
  // Pairs flipped the other way (fusion kept the worse box).
  std::size_t reverse_flips = 0;
  std::vector<std::pair<std::size_t, std::size_t>> flipped_pairs;  // (lower, higher)
};

// fusion must be a fused mode.
MismatchReport mismatch_demo(const SimScene& scene, const FusionConfig& fusion,
                             const NmsConfig& nms);

}  // namespace detkit
