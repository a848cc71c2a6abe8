#pragma once

#include <cstdint>
#include <optional>

#include "detkit/geometry.hpp"

namespace detkit {

using ImageId = std::int64_t;
using CategoryId = std::int64_t;

struct Detection {
  ImageId image_id = 0;
  CategoryId category_id = 0;
  Box box;
  // Classification score p_i.
  double score = 0.0;
  std::optional<double> predicted_iou;
  // Fused ranking confidence S_det; set by fuse_batch.
  std::optional<double> confidence;

  // Value used for ranking. An unset confidence ranks by the raw score,
  // which is what score-only fusion would produce.
  double rank_value() const { return confidence.value_or(score); }

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruthObject {
  ImageId image_id = 0;
  CategoryId category_id = 0;
  Box box;

  friend bool operator==(const GroundTruthObject&, const GroundTruthObject&) = default;
};

}  // namespace detkit
