#pragma once

#include "detkit/evalmap.hpp"
#include "detkit/simgen.hpp"

namespace scenario {

using namespace detkit;

// Three objects, each with an accurate low-score box and an inaccurate
// high-score box overlapping it above 0.5. Predicted IoU equals true IoU.
//   accurate:   iou 0.95 with its ground truth, score 0.6
//   inaccurate: iou 0.625 with its ground truth, score 0.8
inline SimScene mismatch_scene() {
  SimScene s;
  s.images.push_back({1, 400.0, 100.0});
  s.categories = {1, 2, 3};
  for (int k = 0; k < 3; ++k) {
    const double x = 100.0 * k;
    const CategoryId cat = k + 1;
    const Box gt{x, 0, x + 10, 10};
    s.ground_truths.push_back({1, cat, gt});
    Detection accurate{1, cat, Box{x, 0, x + 10, 9.5}, 0.6, 0.95, std::nullopt};
    Detection inaccurate{1, cat, Box{x, 0, x + 10, 16}, 0.8, 0.625, std::nullopt};
    s.detections.push_back(accurate);
    s.detections.push_back(inaccurate);
    s.true_iou.push_back(iou(accurate.box, gt));
    s.true_iou.push_back(iou(inaccurate.box, gt));
  }
  return s;
}

// Ground truth A (category 1) and B (category 2); detection C predicted as
// category 2 with iou(A, C) = 0.7 and iou(B, C) = 0.3.
struct CrossCategory {
  std::vector<GroundTruthObject> gts;
  Detection c;
};

inline CrossCategory cross_category_scene() {
  CrossCategory f;
  f.gts.push_back({1, 1, Box{0, 0, 10, 7}});
  f.gts.push_back({1, 2, Box{0, 7, 10, 10}});
  f.c = Detection{1, 2, Box{0, 0, 10, 10}, 0.9, std::nullopt, std::nullopt};
  return f;
}

}  // namespace scenario
