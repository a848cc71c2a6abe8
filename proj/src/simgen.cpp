#include "detkit/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "detkit/stats.hpp"

namespace detkit {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

class SceneSampler {
 public:
  explicit SceneSampler(const SimConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  int uniform_int(IntRange r) { return std::uniform_int_distribution<int>(r.min, r.max)(rng_); }
  int poisson(double mean) {
    return mean > 0.0 ? std::poisson_distribution<int>(mean)(rng_) : 0;
  }
  bool bernoulli(double p) { return p > 0.0 && uniform(0.0, 1.0) < p; }

  Box object_box() {
    const double size = std::exp(uniform(std::log(cfg_.min_object_size), std::log(cfg_.max_object_size)));
    const double aspect = std::exp(uniform(-0.5, 0.5));
    const double w = std::min(size * aspect, cfg_.image_width);
    const double h = std::min(size / aspect, cfg_.image_height);
    const double x = uniform(0.0, cfg_.image_width - w);
    const double y = uniform(0.0, cfg_.image_height - h);
    return Box::from_xywh(x, y, w, h);
  }

  Box jitter(const Box& b) {
    const double s = cfg_.localization_noise * std::abs(normal());
    const double n[4] = {normal(), normal(), normal(), normal()};
    if (s == 0.0) {
      return b;
    }
    const double cx = b.center_x() + s * b.width() * n[0];
    const double cy = b.center_y() + s * b.height() * n[1];
    const double w = b.width() * std::exp(s * n[2]);
    const double h = b.height() * std::exp(s * n[3]);
    return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  CategoryId other_category(CategoryId c) {
    const int offset = std::uniform_int_distribution<int>(1, cfg_.num_categories - 1)(rng_);
    return (c + offset) % cfg_.num_categories;
  }

  CategoryId any_category() {
    return std::uniform_int_distribution<int>(0, cfg_.num_categories - 1)(rng_);
  }

 private:
  const SimConfig& cfg_;
  std::mt19937_64 rng_;
};

}  // namespace

void SimConfig::validate() const {
  auto fail = [](const char* what) { throw std::invalid_argument(std::string("SimConfig: ") + what); };
  if (n_images < 1) fail("n_images must be >= 1");
  if (num_categories < 1) fail("num_categories must be >= 1");
  if (!(image_width > 0.0 && image_height > 0.0)) fail("image size must be positive");
  if (gt_per_image.min < 0 || gt_per_image.min > gt_per_image.max) fail("bad gt_per_image range");
  if (gt_per_image.max < 1) fail("gt_per_image must allow at least one object");
  if (detections_per_gt.min < 0 || detections_per_gt.min > detections_per_gt.max)
    fail("bad detections_per_gt range");
  if (!(min_object_size > 0.0 && min_object_size <= max_object_size)) fail("bad object size range");
  if (!(localization_noise >= 0.0)) fail("localization_noise must be >= 0");
  if (!(score_coupling >= -1.0 && score_coupling <= 1.0)) fail("score_coupling must lie in [-1, 1]");
  if (!(score_scale >= 0.0)) fail("score_scale must be >= 0");
  if (!std::isfinite(score_offset)) fail("score_offset must be finite");
  if (!(classification_margin >= 0.0)) fail("classification_margin must be >= 0");
  if (!(iou_noise >= 0.0)) fail("iou_noise must be >= 0");
  if (!(false_positive_rate >= 0.0)) fail("false_positive_rate must be >= 0");
  if (!(misclassification_rate >= 0.0 && misclassification_rate <= 1.0))
    fail("misclassification_rate must lie in [0, 1]");
}

SimScene generate(const SimConfig& cfg) {
  cfg.validate();
  SceneSampler rng(cfg);
  SimScene scene;
  for (int c = 0; c < cfg.num_categories; ++c) {
    scene.categories.push_back(c);
  }

  // First pass: geometry, categories and the independent noise draws.
  std::vector<char> correct;
  std::vector<double> score_noise;
  std::vector<double> iou_noise;
  for (int img = 0; img < cfg.n_images; ++img) {
    scene.images.push_back(ImageInfo{img, cfg.image_width, cfg.image_height});
    const std::size_t first_gt = scene.ground_truths.size();
    const int n_gt = rng.uniform_int(cfg.gt_per_image);
    for (int k = 0; k < n_gt; ++k) {
      scene.ground_truths.push_back(GroundTruthObject{img, rng.any_category(), rng.object_box()});
    }
    const std::span<const GroundTruthObject> image_gts(scene.ground_truths.data() + first_gt,
                                                       static_cast<std::size_t>(n_gt));

    auto add = [&](Detection d, bool is_correct) {
      scene.true_iou.push_back(iou_truth(d, image_gts));
      scene.detections.push_back(std::move(d));
      correct.push_back(is_correct);
      score_noise.push_back(rng.normal());
      iou_noise.push_back(rng.normal());
    };

    for (const auto& gt : image_gts) {
      const int n_det = rng.uniform_int(cfg.detections_per_gt);
      for (int k = 0; k < n_det; ++k) {
        Detection d;
        d.image_id = img;
        d.box = rng.jitter(gt.box);
        d.category_id = gt.category_id;
        bool is_correct = true;
        if (cfg.num_categories > 1 && rng.bernoulli(cfg.misclassification_rate)) {
          d.category_id = rng.other_category(gt.category_id);
          is_correct = false;
        }
        add(std::move(d), is_correct);
      }
    }

    const int n_fp = rng.poisson(cfg.false_positive_rate * n_gt);
    for (int k = 0; k < n_fp; ++k) {
      Detection d;
      d.image_id = img;
      d.category_id = rng.any_category();
      // Background boxes: resample a few times to stay clear of objects.
      d.box = rng.object_box();
      for (int attempt = 0; attempt < 8 && iou_truth(d, image_gts) >= 0.3; ++attempt) {
        d.box = rng.object_box();
      }
      add(std::move(d), false);
    }
  }

  // Second pass: scores from the standardized true IoU, predicted IoUs.
  const std::size_t n = scene.detections.size();
  const double mu = stats::mean(scene.true_iou);
  double var = 0.0;
  for (double v : scene.true_iou) {
    var += (v - mu) * (v - mu);
  }
  const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n)) : 0.0;
  const double rho = cfg.score_coupling;
  const double rest = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  for (std::size_t i = 0; i < n; ++i) {
    const double u = sd > 0.0 ? (scene.true_iou[i] - mu) / sd : 0.0;
    const double latent = rho * u + rest * score_noise[i];
    const double logit = cfg.score_scale * latent + cfg.score_offset +
                         (correct[i] ? cfg.classification_margin : 0.0);
    auto& d = scene.detections[i];
    d.score = sigmoid(logit);
    d.predicted_iou = std::clamp(scene.true_iou[i] + cfg.iou_noise * iou_noise[i], 0.0, 1.0);
  }
  return scene;
}

GroundTruthIouLookup make_iou_truth_lookup(std::vector<GroundTruthObject> gts) {
  auto by_image = std::make_shared<std::unordered_map<ImageId, std::vector<GroundTruthObject>>>();
  for (auto& gt : gts) {
    (*by_image)[gt.image_id].push_back(std::move(gt));
  }
  return [by_image](const Detection& d) -> std::optional<double> {
    const auto it = by_image->find(d.image_id);
    if (it == by_image->end()) {
      return 0.0;
    }
    return iou_truth(d, it->second);
  };
}

EvalReport run_pipeline(const SimScene& scene, const FusionConfig& fusion, const NmsConfig& nms_cfg) {
  GroundTruthIouLookup lookup;
  if (fusion.mode == FusionMode::fused_ground_truth_iou) {
    lookup = make_iou_truth_lookup(scene.ground_truths);
  }
  const auto fused = fuse_batch(scene.detections, fusion, lookup);
  const auto kept = nms(fused, nms_cfg);
  return evaluate(kept, scene.ground_truths);
}

MismatchReport mismatch_demo(const SimScene& scene, const FusionConfig& fusion,
                             const NmsConfig& nms_cfg) {
  if (fusion.mode == FusionMode::score_only) {
    throw std::invalid_argument("mismatch_demo needs a fused ranking mode");
  }
  std::vector<Detection> by_score = scene.detections;
  for (auto& d : by_score) {
    d.confidence = d.score;
  }
  std::vector<Detection> fused = scene.detections;
  fusion.validate();
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const std::optional<double> v = fusion.mode == FusionMode::fused_ground_truth_iou
                                        ? std::optional<double>(scene.true_iou[i])
                                        : fused[i].predicted_iou;
    fused[i].confidence = fuse(fused[i].score, v, fusion);
  }

  const auto keep_a = nms_keep_indices(by_score, nms_cfg);
  const auto keep_b = nms_keep_indices(fused, nms_cfg);
  const std::unordered_set<std::size_t> kept_score(keep_a.begin(), keep_a.end());
  const std::unordered_set<std::size_t> kept_fused(keep_b.begin(), keep_b.end());

  std::map<std::pair<ImageId, CategoryId>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < scene.detections.size(); ++i) {
    groups[{scene.detections[i].image_id, scene.detections[i].category_id}].push_back(i);
  }

  MismatchReport report;
  for (const auto& [key, members] : groups) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        std::size_t lo = members[a];
        std::size_t hi = members[b];
        if (scene.true_iou[lo] == scene.true_iou[hi]) {
          continue;
        }
        if (scene.true_iou[lo] > scene.true_iou[hi]) {
          std::swap(lo, hi);
        }
        if (iou(scene.detections[lo].box, scene.detections[hi].box) <= nms_cfg.iou_threshold) {
          continue;
        }
        const bool score_keeps_worse = kept_score.contains(lo) && !kept_score.contains(hi);
        const bool fused_keeps_better = kept_fused.contains(hi) && !kept_fused.contains(lo);
        const bool score_keeps_better = kept_score.contains(hi) && !kept_score.contains(lo);
        const bool fused_keeps_worse = kept_fused.contains(lo) && !kept_fused.contains(hi);
        if (score_keeps_worse && fused_keeps_better) {
          ++report.flips;
          report.flipped_pairs.emplace_back(lo, hi);
        } else if (score_keeps_better && fused_keeps_worse) {
          ++report.reverse_flips;
        }
      }
    }
  }
  return report;
}

}  // namespace detkit
