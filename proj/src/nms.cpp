#include "detkit/nms.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace detkit {

void NmsConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw std::invalid_argument("NMS IoU threshold must lie in (0, 1)");
  }
}

std::vector<std::size_t> rank_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].rank_value() > dets[b].rank_value();
  });
  return order;
}

namespace {

// Suppresses within one group whose members are already in rank order.
void suppress_group(std::span<const Detection> dets, std::span<const std::size_t> members,
                    const NmsConfig& cfg, std::vector<std::size_t>& kept) {
  std::vector<char> removed(members.size(), 0);
  std::size_t n_kept = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (removed[i]) {
      continue;
    }
    if (cfg.max_kept && n_kept >= *cfg.max_kept) {
      break;
    }
    kept.push_back(members[i]);
    ++n_kept;
    const Box& keep_box = dets[members[i]].box;
    for (std::size_t j = i + 1; j < members.size(); ++j) {
      if (!removed[j] && iou(keep_box, dets[members[j]].box) > cfg.iou_threshold) {
        removed[j] = 1;
      }
    }
  }
}

}  // namespace

std::vector<std::size_t> nms_keep_indices(std::span<const Detection> dets, const NmsConfig& cfg) {
  cfg.validate();
  const auto order = rank_order(dets);

  std::map<std::pair<ImageId, CategoryId>, std::vector<std::size_t>> by_group;
  for (std::size_t idx : order) {
    by_group[{dets[idx].image_id, dets[idx].category_id}].push_back(idx);
  }
  std::vector<const std::vector<std::size_t>*> groups;
  groups.reserve(by_group.size());
  for (const auto& [key, members] : by_group) {
    groups.push_back(&members);
  }

  std::vector<std::vector<std::size_t>> kept_per_group(groups.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t g = 0; g < static_cast<std::ptrdiff_t>(groups.size()); ++g) {
    suppress_group(dets, *groups[g], cfg, kept_per_group[g]);
  }

  std::vector<std::size_t> kept;
  for (const auto& k : kept_per_group) {
    kept.insert(kept.end(), k.begin(), k.end());
  }
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    const double ra = dets[a].rank_value();
    const double rb = dets[b].rank_value();
    return ra > rb || (ra == rb && a < b);
  });
  return kept;
}

std::vector<Detection> nms(std::span<const Detection> dets, const NmsConfig& cfg) {
  std::vector<Detection> out;
  for (std::size_t idx : nms_keep_indices(dets, cfg)) {
    out.push_back(dets[idx]);
  }
  return out;
}

}  // namespace detkit
