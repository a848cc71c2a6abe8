#include <algorithm>
#include <numeric>
#include <set>

#include "detkit/evalmap.hpp"
#include "detkit/nms.hpp"

namespace detkit {

namespace {

// AP for one category, threshold and area range.
std::optional<PrecisionCurve> category_curve(std::span<const Detection> dets,
                                             std::span<const std::size_t> order,
                                             std::span<const GroundTruthObject> gts,
                                             CategoryId cat, double tau, AreaRange range) {
  const auto [lo, hi] = area_bounds(range);
  auto out_of_range = [&](const Box& b) { return b.area() < lo || b.area() > hi; };

  std::size_t n_gt = 0;
  for (const auto& gt : gts) {
    if (gt.category_id == cat && !out_of_range(gt.box)) {
      ++n_gt;
    }
  }
  if (n_gt == 0) {
    return std::nullopt;
  }

  std::vector<char> taken(gts.size(), 0);
  std::vector<MatchLabel> labels;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    if (d.category_id != cat) {
      continue;
    }
    std::optional<std::size_t> best;
    for (bool want_ignored : {false, true}) {
      double best_iou = -1.0;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        const auto& gt = gts[j];
        if (taken[j] || gt.image_id != d.image_id || gt.category_id != cat ||
            out_of_range(gt.box) != want_ignored) {
          continue;
        }
        const double v = iou(d.box, gt.box);
        if (v >= tau && v > best_iou) {
          best_iou = v;
          best = j;
        }
      }
      if (best) {
        break;
      }
    }
    if (best) {
      taken[*best] = 1;
      if (!out_of_range(gts[*best].box)) {
        labels.push_back(MatchLabel::true_positive);
      }
    } else if (!out_of_range(d.box)) {
      labels.push_back(MatchLabel::false_positive);
    }
  }
  return interpolated_precision(labels, n_gt);
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

EvalReport evaluate_serial(std::span<const Detection> dets,
                           std::span<const GroundTruthObject> gts) {
  std::set<CategoryId> categories;
  for (const auto& d : dets) {
    categories.insert(d.category_id);
  }
  for (const auto& gt : gts) {
    categories.insert(gt.category_id);
  }
  const auto order = rank_order(dets);

  EvalReport report;
  std::array<double, kAreaRanges.size()> area_ap{};
  for (std::size_t a = 0; a < kAreaRanges.size(); ++a) {
    std::vector<double> per_threshold;
    for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
      std::vector<double> aps;
      PrecisionCurve mean_curve{};
      for (CategoryId cat : categories) {
        const auto curve = category_curve(dets, order, gts, cat, kIouThresholds[t], kAreaRanges[a]);
        if (!curve) {
          continue;
        }
        aps.push_back(std::accumulate(curve->begin(), curve->end(), 0.0) /
                      static_cast<double>(kRecallPoints));
        for (std::size_t r = 0; r < kRecallPoints; ++r) {
          mean_curve[r] += (*curve)[r];
        }
      }
      per_threshold.push_back(mean(aps));
      if (a == 0) {
        report.ap_at_threshold[t] = per_threshold.back();
        report.num_categories_evaluated = aps.size();
        if (!aps.empty()) {
          for (double& v : mean_curve) {
            v /= static_cast<double>(aps.size());
          }
        }
        report.pr_curves[t] = mean_curve;
      }
    }
    area_ap[a] = mean(per_threshold);
  }
  report.ap = area_ap[0];
  report.ap_small = area_ap[1];
  report.ap_medium = area_ap[2];
  report.ap_large = area_ap[3];
  return report;
}

}  // namespace detkit
