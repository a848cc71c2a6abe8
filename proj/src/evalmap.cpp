#include "detkit/evalmap.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "detkit/io.hpp"
#include "detkit/nms.hpp"

namespace detkit {

namespace {

constexpr std::size_t kNumThresholds = kIouThresholds.size();
constexpr std::size_t kNumAreas = kAreaRanges.size();

// Per-detection outcome of matching within one (area, threshold) setting.
enum class Outcome : unsigned char { ignored, true_positive, false_positive };

struct Group {
  std::vector<std::size_t> dets;  // rank order
  std::vector<std::size_t> gts;   // input order
  std::vector<double> ious;       // dets.size() x gts.size()
};

bool outside(double area, const std::array<double, 2>& bounds) {
  return area < bounds[0] || area > bounds[1];
}

// Matches one group at one threshold. gt_ignore may be empty (no ignores).
// Non-ignored ground truths are preferred; a detection matched to an
// ignored ground truth is itself ignored.
void match_group(const Group& g, double tau, std::span<const char> gt_ignore,
                 std::span<const char> det_out_of_range, std::span<Outcome> outcome,
                 std::span<std::optional<std::size_t>> matched_gt = {}) {
  const std::size_t n_gt = g.gts.size();
  std::vector<char> taken(n_gt, 0);
  auto ignored = [&](std::size_t j) { return !gt_ignore.empty() && gt_ignore[j]; };

  for (std::size_t i = 0; i < g.dets.size(); ++i) {
    const double* row = g.ious.data() + i * n_gt;
    std::optional<std::size_t> best;
    // Two passes: regular ground truths, then ignored ones.
    for (int pass = 0; pass < 2 && !best; ++pass) {
      double best_iou = -1.0;
      for (std::size_t j = 0; j < n_gt; ++j) {
        if (taken[j] || ignored(j) != (pass == 1)) {
          continue;
        }
        if (row[j] >= tau && row[j] > best_iou) {
          best_iou = row[j];
          best = j;
        }
      }
    }
    if (best) {
      taken[*best] = 1;
      outcome[i] = ignored(*best) ? Outcome::ignored : Outcome::true_positive;
      if (!matched_gt.empty()) {
        matched_gt[i] = *best;
      }
    } else {
      const bool skip = !det_out_of_range.empty() && det_out_of_range[i];
      outcome[i] = skip ? Outcome::ignored : Outcome::false_positive;
    }
  }
}

std::vector<Group> build_groups(std::span<const Detection> dets,
                                std::span<const GroundTruthObject> gts) {
  std::map<std::pair<ImageId, CategoryId>, Group> by_key;
  for (std::size_t idx : rank_order(dets)) {
    by_key[{dets[idx].image_id, dets[idx].category_id}].dets.push_back(idx);
  }
  for (std::size_t j = 0; j < gts.size(); ++j) {
    by_key[{gts[j].image_id, gts[j].category_id}].gts.push_back(j);
  }
  std::vector<Group> groups;
  groups.reserve(by_key.size());
  for (auto& [key, g] : by_key) {
    groups.push_back(std::move(g));
  }

#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(groups.size()); ++k) {
    Group& g = groups[k];
    g.ious.resize(g.dets.size() * g.gts.size());
    for (std::size_t i = 0; i < g.dets.size(); ++i) {
      for (std::size_t j = 0; j < g.gts.size(); ++j) {
        g.ious[i * g.gts.size() + j] = iou(dets[g.dets[i]].box, gts[g.gts[j]].box);
      }
    }
  }
  return groups;
}

double mean_or_zero(std::span<const double> values) {
  if (values.empty()) {
    return 0.0;
  }
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

std::array<double, 2> area_bounds(AreaRange range) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  switch (range) {
    case AreaRange::all:
      return {0.0, kInf};
    case AreaRange::small:
      return {0.0, 32.0 * 32.0};
    case AreaRange::medium:
      return {32.0 * 32.0, 96.0 * 96.0};
    case AreaRange::large:
      return {96.0 * 96.0, kInf};
  }
  return {0.0, kInf};
}

std::size_t MatchResult::true_positives() const {
  return static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), MatchLabel::true_positive));
}

std::size_t MatchResult::false_negatives() const {
  return static_cast<std::size_t>(std::count(gt_matched.begin(), gt_matched.end(), false));
}

MatchResult match(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                  double tau) {
  MatchResult result;
  result.labels.assign(dets.size(), MatchLabel::false_positive);
  result.matched_gt.assign(dets.size(), std::nullopt);
  result.gt_matched.assign(gts.size(), false);

  for (const Group& g : build_groups(dets, gts)) {
    std::vector<Outcome> outcome(g.dets.size(), Outcome::false_positive);
    std::vector<std::optional<std::size_t>> local(g.dets.size());
    match_group(g, tau, {}, {}, outcome, local);
    for (std::size_t i = 0; i < g.dets.size(); ++i) {
      if (outcome[i] == Outcome::true_positive) {
        const std::size_t det = g.dets[i];
        const std::size_t gt = g.gts[*local[i]];
        result.labels[det] = MatchLabel::true_positive;
        result.matched_gt[det] = gt;
        result.gt_matched[gt] = true;
      }
    }
  }
  return result;
}

PrecisionCurve interpolated_precision(std::span<const MatchLabel> labels_by_rank,
                                      std::size_t n_gt) {
  PrecisionCurve curve{};
  if (n_gt == 0 || labels_by_rank.empty()) {
    return curve;
  }
  const std::size_t n = labels_by_rank.size();
  std::vector<double> recall(n);
  std::vector<double> precision(n);
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels_by_rank[i] == MatchLabel::true_positive) {
      tp += 1.0;
    } else {
      fp += 1.0;
    }
    recall[i] = tp / static_cast<double>(n_gt);
    precision[i] = tp / (tp + fp);
  }
  // Precision envelope, then sample at the first point reaching each recall level.
  for (std::size_t i = n - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  for (std::size_t k = 0; k < kRecallPoints; ++k) {
    const double level = static_cast<double>(k) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) {
      curve[k] = precision[static_cast<std::size_t>(it - recall.begin())];
    }
  }
  return curve;
}

std::optional<double> average_precision(std::span<const MatchLabel> labels_by_rank,
                                        std::size_t n_gt) {
  if (n_gt == 0) {
    return std::nullopt;
  }
  const PrecisionCurve curve = interpolated_precision(labels_by_rank, n_gt);
  return std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(kRecallPoints);
}

double EvalReport::ap_at(double threshold) const {
  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
    if (std::abs(kIouThresholds[t] - threshold) < 1e-9) {
      return ap_at_threshold[t];
    }
  }
  throw std::out_of_range("no AP recorded at IoU threshold " + std::to_string(threshold));
}

EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruthObject> gts) {
  const std::vector<Group> groups = build_groups(dets, gts);

  // Outcome per (area, threshold, detection), written by the owning group.
  std::vector<Outcome> outcomes(kNumAreas * kNumThresholds * dets.size(), Outcome::ignored);
  auto slot = [&](std::size_t a, std::size_t t) {
    return std::span<Outcome>(outcomes).subspan((a * kNumThresholds + t) * dets.size(),
                                                dets.size());
  };

#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(groups.size()); ++k) {
    const Group& g = groups[k];
    std::vector<char> gt_ignore(g.gts.size());
    std::vector<char> det_out(g.dets.size());
    std::vector<Outcome> local(g.dets.size());
    for (std::size_t a = 0; a < kNumAreas; ++a) {
      const auto bounds = area_bounds(kAreaRanges[a]);
      for (std::size_t j = 0; j < g.gts.size(); ++j) {
        gt_ignore[j] = outside(gts[g.gts[j]].box.area(), bounds);
      }
      for (std::size_t i = 0; i < g.dets.size(); ++i) {
        det_out[i] = outside(dets[g.dets[i]].box.area(), bounds);
      }
      for (std::size_t t = 0; t < kNumThresholds; ++t) {
        match_group(g, kIouThresholds[t], gt_ignore, det_out, local);
        auto out = slot(a, t);
        for (std::size_t i = 0; i < g.dets.size(); ++i) {
          out[g.dets[i]] = local[i];
        }
      }
    }
  }

  // Category membership in global rank order, plus per-area ground-truth counts.
  std::map<CategoryId, std::size_t> category_index;
  for (const auto& d : dets) {
    category_index.emplace(d.category_id, 0);
  }
  for (const auto& gt : gts) {
    category_index.emplace(gt.category_id, 0);
  }
  std::size_t next = 0;
  for (auto& [cat, idx] : category_index) {
    idx = next++;
  }
  const std::size_t n_cat = category_index.size();
  std::vector<std::vector<std::size_t>> cat_dets(n_cat);
  for (std::size_t idx : rank_order(dets)) {
    cat_dets[category_index.at(dets[idx].category_id)].push_back(idx);
  }
  std::vector<std::array<std::size_t, kNumAreas>> cat_gt(n_cat);
  for (const auto& gt : gts) {
    for (std::size_t a = 0; a < kNumAreas; ++a) {
      if (!outside(gt.box.area(), area_bounds(kAreaRanges[a]))) {
        ++cat_gt[category_index.at(gt.category_id)][a];
      }
    }
  }

  // Curves per (area, threshold, category); nullopt marks "no ground truth".
  const std::size_t n_jobs = kNumAreas * kNumThresholds * n_cat;
  std::vector<std::optional<PrecisionCurve>> curves(n_jobs);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t job = 0; job < static_cast<std::ptrdiff_t>(n_jobs); ++job) {
    const std::size_t c = static_cast<std::size_t>(job) % n_cat;
    const std::size_t t = (static_cast<std::size_t>(job) / n_cat) % kNumThresholds;
    const std::size_t a = static_cast<std::size_t>(job) / (n_cat * kNumThresholds);
    const std::size_t n_gt = cat_gt[c][a];
    if (n_gt == 0) {
      continue;
    }
    const auto out = slot(a, t);
    std::vector<MatchLabel> labels;
    labels.reserve(cat_dets[c].size());
    for (std::size_t idx : cat_dets[c]) {
      if (out[idx] == Outcome::true_positive) {
        labels.push_back(MatchLabel::true_positive);
      } else if (out[idx] == Outcome::false_positive) {
        labels.push_back(MatchLabel::false_positive);
      }
    }
    curves[job] = interpolated_precision(labels, n_gt);
  }

  EvalReport report;
  std::array<double, kNumAreas> area_ap{};
  for (std::size_t a = 0; a < kNumAreas; ++a) {
    std::array<double, kNumThresholds> per_threshold{};
    for (std::size_t t = 0; t < kNumThresholds; ++t) {
      std::vector<double> aps;
      PrecisionCurve mean_curve{};
      for (std::size_t c = 0; c < n_cat; ++c) {
        const auto& curve = curves[(a * kNumThresholds + t) * n_cat + c];
        if (!curve) {
          continue;
        }
        aps.push_back(std::accumulate(curve->begin(), curve->end(), 0.0) /
                      static_cast<double>(kRecallPoints));
        for (std::size_t r = 0; r < kRecallPoints; ++r) {
          mean_curve[r] += (*curve)[r];
        }
      }
      per_threshold[t] = mean_or_zero(aps);
      if (a == 0) {
        report.num_categories_evaluated = aps.size();
        if (!aps.empty()) {
          for (double& v : mean_curve) {
            v /= static_cast<double>(aps.size());
          }
        }
        report.pr_curves[t] = mean_curve;
      }
    }
    area_ap[a] = mean_or_zero(per_threshold);
    if (a == 0) {
      report.ap_at_threshold = per_threshold;
    }
  }
  report.ap = area_ap[0];
  report.ap_small = area_ap[1];
  report.ap_medium = area_ap[2];
  report.ap_large = area_ap[3];
  return report;
}

double iou_truth(const Detection& det, std::span<const GroundTruthObject> gts) {
  double best = 0.0;
  for (const auto& gt : gts) {
    if (gt.image_id == det.image_id) {
      best = std::max(best, iou(det.box, gt.box));
    }
  }
  return best;
}

double iou_eval(const Detection& det, std::span<const GroundTruthObject> gts) {
  double best = 0.0;
  for (const auto& gt : gts) {
    if (gt.image_id == det.image_id && gt.category_id == det.category_id) {
      best = std::max(best, iou(det.box, gt.box));
    }
  }
  return best;
}

void scatter_export(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                    const std::filesystem::path& path) {
  std::ostringstream out;
  out << kScatterHeader << '\n';
  char line[128];
  for (const auto& d : dets) {
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%lld\n", d.rank_value(),
                  iou_eval(d, gts), iou_truth(d, gts), static_cast<long long>(d.category_id));
    out << line;
  }
  write_file_atomic(path, out.str());
}

}  // namespace detkit
