#include <map>
#include <utility>

#include "detkit/nms.hpp"

namespace detkit {

std::vector<std::size_t> nms_keep_indices_serial(std::span<const Detection> dets,
                                                 const NmsConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> kept;
  std::map<std::pair<ImageId, CategoryId>, std::size_t> kept_count;
  for (std::size_t idx : rank_order(dets)) {
    const Detection& d = dets[idx];
    auto& count = kept_count[{d.image_id, d.category_id}];
    if (cfg.max_kept && count >= *cfg.max_kept) {
      continue;
    }
    bool suppressed = false;
    for (std::size_t k : kept) {
      const Detection& other = dets[k];
      if (other.image_id == d.image_id && other.category_id == d.category_id &&
          iou(other.box, d.box) > cfg.iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(idx);
      ++count;
    }
  }
  return kept;
}

std::vector<Detection> nms_serial(std::span<const Detection> dets, const NmsConfig& cfg) {
  std::vector<Detection> out;
  for (std::size_t idx : nms_keep_indices_serial(dets, cfg)) {
    out.push_back(dets[idx]);
  }
  return out;
}

}  // namespace detkit
