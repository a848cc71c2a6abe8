#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "detkit/detection.hpp"

namespace detkit {

struct NmsConfig {
  double iou_threshold = 0.5;
  // Cap on kept detections per (image, category).
  std::optional<std::size_t> max_kept;

  void validate() const;
};

// Greedy per-(image, category) suppression ranked by Detection::rank_value().
// A detection is removed when its IoU with a kept detection is strictly
// greater than the threshold. Returns indices into dets, ordered by
// descending confidence with ties broken by input index.
//
// Groups are processed in parallel with OpenMP.
std::vector<std::size_t> nms_keep_indices(std::span<const Detection> dets, const NmsConfig& cfg);
std::vector<Detection> nms(std::span<const Detection> dets, const NmsConfig& cfg);

// Single-threaded reference: one pass over the globally sorted list.
std::vector<std::size_t> nms_keep_indices_serial(std::span<const Detection> dets,
                                                 const NmsConfig& cfg);
std::vector<Detection> nms_serial(std::span<const Detection> dets, const NmsConfig& cfg);

// Descending rank_value, ascending index on ties.
std::vector<std::size_t> rank_order(std::span<const Detection> dets);

}  // namespace detkit
