#include "detkit/toydet.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <sstream>

#include "detkit/stats.hpp"

namespace detkit::toy {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double dot(std::span<const double> w, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += w[i] * x[i];
  }
  return s;
}

// Adds scale * [x, 1] to a weight row whose last entry is the bias.
void accumulate_row(std::span<double> row, std::span<const double> x, double scale) {
  if (scale == 0.0) {
    return;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    row[i] += scale * x[i];
  }
  row[x.size()] += scale;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  // SplitMix64 finalizer over a combined key.
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kShuffleStream = 3;
constexpr std::uint64_t kInitStream = 4;
constexpr ImageId kEvalImageBase = 1'000'000;

struct PreparedBatch {
  Assignment assignment;
  LossBatch batch;
  std::vector<Box> decoded;
};

}  // namespace

// ---- scenes and anchors ---------------------------------------------------

void SceneConfig::validate() const {
  if (grid_width < 1 || grid_height < 1 || !(cell_size > 0.0)) {
    throw std::invalid_argument("toy scene grid must be non-empty");
  }
  if (num_categories < 1) {
    throw std::invalid_argument("toy scene needs at least one category");
  }
  if (objects_per_scene.min < 0 || objects_per_scene.min > objects_per_scene.max) {
    throw std::invalid_argument("bad objects_per_scene range");
  }
  if (!(min_object_size > 0.0 && min_object_size <= max_object_size) ||
      max_object_size > std::min(width(), height())) {
    throw std::invalid_argument("object sizes must be positive and fit the scene");
  }
  if (!(pixel_noise >= 0.0) || !(category_confusion >= 0.0)) {
    throw std::invalid_argument("noise and confusion must be non-negative");
  }
}

ToyScene render_scene(const SceneConfig& cfg, std::uint64_t seed, ImageId image_id) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  ToyScene scene;
  scene.image_id = image_id;
  scene.grid_width = cfg.grid_width;
  scene.grid_height = cfg.grid_height;
  scene.channels = cfg.channels();
  scene.cell_size = cfg.cell_size;

  const int n_obj = std::uniform_int_distribution<int>(cfg.objects_per_scene.min,
                                                       cfg.objects_per_scene.max)(rng);
  for (int k = 0; k < n_obj; ++k) {
    const CategoryId cat = std::uniform_int_distribution<int>(0, cfg.num_categories - 1)(rng);
    const double w = std::exp(uniform(std::log(cfg.min_object_size), std::log(cfg.max_object_size)));
    const double h = std::exp(uniform(std::log(cfg.min_object_size), std::log(cfg.max_object_size)));
    const double x = uniform(0.0, cfg.width() - w);
    const double y = uniform(0.0, cfg.height() - h);
    scene.objects.push_back(GroundTruthObject{image_id, cat, Box::from_xywh(x, y, w, h)});
  }

  const int n_ch = scene.channels;
  const double cell_area = cfg.cell_size * cfg.cell_size;
  scene.features.assign(static_cast<std::size_t>(cfg.grid_width) * cfg.grid_height * n_ch, 0.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int gy = 0; gy < cfg.grid_height; ++gy) {
    for (int gx = 0; gx < cfg.grid_width; ++gx) {
      const Box cell = Box::from_xywh(gx * cfg.cell_size, gy * cfg.cell_size, cfg.cell_size, cfg.cell_size);
      double* px = scene.features.data() + (static_cast<std::size_t>(gy) * cfg.grid_width + gx) * n_ch;
      for (const auto& obj : scene.objects) {
        const double cov = intersection_area(cell, obj.box) / cell_area;
        if (cov <= 0.0) {
          continue;
        }
        for (int ch = 0; ch < cfg.num_categories; ++ch) {
          px[ch] += cov * (ch == obj.category_id ? 1.0 : cfg.category_confusion);
        }
        px[cfg.num_categories] += cov;
      }
      for (int ch = 0; ch < n_ch; ++ch) {
        px[ch] += cfg.pixel_noise * noise(rng);
      }
    }
  }
  return scene;
}

std::vector<Box> make_anchors(const SceneConfig& scene, const AnchorConfig& anchors) {
  std::vector<Box> out;
  out.reserve(static_cast<std::size_t>(scene.grid_width) * scene.grid_height * anchors.per_cell());
  for (int gy = 0; gy < scene.grid_height; ++gy) {
    for (int gx = 0; gx < scene.grid_width; ++gx) {
      const double cx = (gx + 0.5) * scene.cell_size;
      const double cy = (gy + 0.5) * scene.cell_size;
      for (double size : anchors.sizes) {
        for (double ratio : anchors.aspect_ratios) {
          const double w = size * std::sqrt(ratio);
          const double h = size / std::sqrt(ratio);
          out.push_back(Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return out;
}

std::size_t Assignment::num_positive() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), AnchorLabel::positive));
}

Assignment assign(std::span<const Box> anchors, std::span<const GroundTruthObject> gts,
                  double positive_threshold, double negative_threshold) {
  if (anchors.empty()) {
    throw std::invalid_argument("assign: no anchors");
  }
  if (!(negative_threshold >= 0.0 && negative_threshold <= positive_threshold &&
        positive_threshold <= 1.0)) {
    throw std::invalid_argument("assign: need 0 <= negative <= positive <= 1");
  }
  Assignment out;
  out.labels.assign(anchors.size(), AnchorLabel::negative);
  out.matched_gt.assign(anchors.size(), -1);

  std::vector<double> ious(anchors.size() * gts.size());
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g].box);
      ious[a * gts.size() + g] = v;
      if (best_gt < 0 || v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= positive_threshold) {
      out.labels[a] = AnchorLabel::positive;
      out.matched_gt[a] = best_gt;
    } else if (best_gt >= 0 && best >= negative_threshold) {
      out.labels[a] = AnchorLabel::ignore;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    double best = 0.0;
    std::size_t best_a = 0;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (ious[a * gts.size() + g] > best) {
        best = ious[a * gts.size() + g];
        best_a = a;
      }
    }
    if (best > 0.0) {
      out.labels[best_a] = AnchorLabel::positive;
      out.matched_gt[best_a] = static_cast<int>(g);
    }
  }
  return out;
}

// ---- model ------------------------------------------------------------------

std::size_t ModelShape::cls_size() const {
  return static_cast<std::size_t>(anchor_types) * num_categories * (feature_dim + 1);
}
std::size_t ModelShape::shared_size() const {
  return static_cast<std::size_t>(hidden) * (feature_dim + 1);
}
std::size_t ModelShape::reg_size() const {
  return static_cast<std::size_t>(anchor_types) * 4 * (hidden + 1);
}
std::size_t ModelShape::iou_size() const {
  return static_cast<std::size_t>(anchor_types) * (hidden + 1);
}

void TrainConfig::validate() const {
  scene.validate();
  if (batch_size < 1) {
    throw std::invalid_argument("batch_size must be >= 1");
  }
  if (epochs < 0 || warmup_epochs < 0) {
    throw std::invalid_argument("epochs must be non-negative");
  }
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("learning rate must be positive");
  }
  if (!(negative_threshold >= 0.0 && negative_threshold <= positive_threshold &&
        positive_threshold <= 1.0)) {
    throw std::invalid_argument("need 0 <= negative_threshold <= positive_threshold <= 1");
  }
  if (train_scenes < 1 || eval_scenes < 1) {
    throw std::invalid_argument("need at least one train and one eval scene");
  }
  if (hidden_units < 1 || neighborhood_radius < 0) {
    throw std::invalid_argument("bad head dimensions");
  }
  if (anchors.sizes.empty() || anchors.aspect_ratios.empty()) {
    throw std::invalid_argument("anchor config must list sizes and aspect ratios");
  }
  if (!(smooth_l1_beta > 0.0)) {
    throw std::invalid_argument("smooth-L1 beta must be positive");
  }
  focal.validate();
  nms.validate();
  eval_fusion().validate();
}

FusionConfig TrainConfig::eval_fusion() const {
  if (iou_loss == IouLossKind::none) {
    return FusionConfig{1.0, FusionMode::score_only};
  }
  return FusionConfig{fusion_alpha.value_or(default_alpha(propagate_target_iou_gradient)),
                      FusionMode::fused_predicted_iou};
}

std::vector<double> ForwardOutput::as_matrix() const {
  const std::size_t width = static_cast<std::size_t>(num_categories) + 5;
  std::vector<double> m(num_anchors * width);
  for (std::size_t a = 0; a < num_anchors; ++a) {
    double* row = m.data() + a * width;
    for (int c = 0; c < num_categories; ++c) {
      row[c] = class_probs[a * num_categories + c];
    }
    const auto o = offsets[a].as_array();
    std::copy(o.begin(), o.end(), row + num_categories);
    row[num_categories + 4] = predicted_iou[a];
  }
  return m;
}

ToyDetector::ToyDetector(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int side = 2 * cfg_.neighborhood_radius + 1;
  shape_.num_categories = cfg_.scene.num_categories;
  shape_.anchor_types = static_cast<int>(cfg_.anchors.per_cell());
  shape_.feature_dim = side * side * cfg_.scene.channels();
  shape_.hidden = cfg_.hidden_units;
  anchors_ = make_anchors(cfg_.scene, cfg_.anchors);
}

void ToyDetector::check_scene(const ToyScene& scene) const {
  if (scene.grid_width != cfg_.scene.grid_width || scene.grid_height != cfg_.scene.grid_height ||
      scene.channels != cfg_.scene.channels()) {
    throw std::invalid_argument("scene layout does not match the detector");
  }
}

void ToyDetector::anchor_features(const ToyScene& scene, int gx, int gy, std::span<double> out) const {
  const int r = cfg_.neighborhood_radius;
  std::size_t k = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int x = gx + dx;
      const int y = gy + dy;
      const bool inside = x >= 0 && y >= 0 && x < scene.grid_width && y < scene.grid_height;
      for (int ch = 0; ch < scene.channels; ++ch) {
        out[k++] = inside ? scene.feature(x, y, ch) : 0.0;
      }
    }
  }
}

ForwardOutput ToyDetector::forward(const ToyModelParams& params, const ToyScene& scene) const {
  check_scene(scene);
  if (params.shape != shape_) {
    throw std::invalid_argument("parameter shape does not match the detector");
  }
  const int C = shape_.num_categories;
  const int A = shape_.anchor_types;
  const std::size_t D = static_cast<std::size_t>(shape_.feature_dim);
  const std::size_t H = static_cast<std::size_t>(shape_.hidden);
  const std::size_t n_cells = static_cast<std::size_t>(scene.grid_width) * scene.grid_height;
  const std::span<const double> w(params.values);
  const auto cls = w.subspan(shape_.cls_offset(), shape_.cls_size());
  const auto shared = w.subspan(shape_.shared_offset(), shape_.shared_size());
  const auto reg = w.subspan(shape_.reg_offset(), shape_.reg_size());
  const auto iouw = w.subspan(shape_.iou_offset(), shape_.iou_size());

  ForwardOutput out;
  out.num_anchors = anchors_.size();
  out.num_categories = C;
  out.class_probs.resize(out.num_anchors * C);
  out.offsets.resize(out.num_anchors);
  out.predicted_iou.resize(out.num_anchors);
  out.hidden.resize(n_cells * H);

  std::vector<double> feat(D);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    anchor_features(scene, static_cast<int>(cell % scene.grid_width),
                    static_cast<int>(cell / scene.grid_width), feat);
    const std::span<double> h(out.hidden.data() + cell * H, H);
    for (std::size_t k = 0; k < H; ++k) {
      const auto row = shared.subspan(k * (D + 1), D + 1);
      h[k] = std::tanh(dot(row, feat) + row[D]);
    }
    for (int t = 0; t < A; ++t) {
      const std::size_t a = cell * A + t;
      for (int c = 0; c < C; ++c) {
        const auto row = cls.subspan((static_cast<std::size_t>(t) * C + c) * (D + 1), D + 1);
        out.class_probs[a * C + c] = sigmoid(dot(row, feat) + row[D]);
      }
      std::array<double, 4> o{};
      for (int m = 0; m < 4; ++m) {
        const auto row = reg.subspan((static_cast<std::size_t>(t) * 4 + m) * (H + 1), H + 1);
        o[m] = dot(row, h) + row[H];
      }
      out.offsets[a] = RegressionOffsets::from_array(o);
      const auto row = iouw.subspan(static_cast<std::size_t>(t) * (H + 1), H + 1);
      out.predicted_iou[a] = sigmoid(dot(row, h) + row[H]);
    }
  }
  return out;
}

namespace {

PreparedBatch prepare(const ToyDetector& det, const ForwardOutput& fwd, const ToyScene& scene,
                      std::span<const double> frozen_target_iou) {
  const auto& cfg = det.config();
  PreparedBatch p;
  p.assignment = assign(det.anchors(), scene.objects, cfg.positive_threshold, cfg.negative_threshold);
  const int C = fwd.num_categories;
  p.batch.records.resize(fwd.num_anchors);
  p.decoded.resize(fwd.num_anchors);
  for (std::size_t a = 0; a < fwd.num_anchors; ++a) {
    auto& r = p.batch.records[a];
    r.label = p.assignment.labels[a];
    r.class_probs.assign(fwd.class_probs.begin() + a * C, fwd.class_probs.begin() + (a + 1) * C);
    r.pred_offsets = fwd.offsets[a];
    r.pred_iou = fwd.predicted_iou[a];
    if (r.label != AnchorLabel::positive) {
      continue;
    }
    const auto& gt = scene.objects[p.assignment.matched_gt[a]];
    r.target_class = static_cast<int>(gt.category_id);
    r.target_offsets = encode(det.anchors()[a], gt.box);
    p.decoded[a] = decode(det.anchors()[a], r.pred_offsets);
    r.target_iou = frozen_target_iou.empty() ? iou(p.decoded[a], gt.box) : frozen_target_iou[a];
  }
  return p;
}

LossBreakdown breakdown(const LossBatch& batch, const TrainConfig& cfg, IouLossKind kind) {
  LossBreakdown b;
  b.cls = focal_loss(batch, cfg.focal);
  b.loc = smooth_l1_loss(batch, cfg.smooth_l1_beta);
  b.iou = iou_loss(batch, kind);
  b.total = b.cls + b.loc + b.iou;
  b.num_positive = batch.num_positive();
  return b;
}

}  // namespace

std::optional<LossBreakdown> ToyDetector::loss(const ToyModelParams& params, const ToyScene& scene,
                                               const BackwardOptions& opts,
                                               std::span<const double> frozen_target_iou) const {
  const auto fwd = forward(params, scene);
  if (!frozen_target_iou.empty() && frozen_target_iou.size() != fwd.num_anchors) {
    throw std::invalid_argument("frozen target IoUs must cover every anchor");
  }
  const auto p = prepare(*this, fwd, scene, frozen_target_iou);
  if (p.assignment.num_positive() == 0) {
    return std::nullopt;
  }
  return breakdown(p.batch, cfg_, opts.iou_loss);
}

std::vector<double> ToyDetector::target_ious(const ToyModelParams& params, const ToyScene& scene) const {
  const auto fwd = forward(params, scene);
  const auto p = prepare(*this, fwd, scene, {});
  std::vector<double> out(fwd.num_anchors, 0.0);
  for (std::size_t a = 0; a < out.size(); ++a) {
    out[a] = p.batch.records[a].target_iou;
  }
  return out;
}

std::optional<LossBreakdown> ToyDetector::backward(ToyModelParams& params, const ToyScene& scene,
                                                   const BackwardOptions& opts) const {
  params.zero_gradient();
  const auto fwd = forward(params, scene);
  const auto p = prepare(*this, fwd, scene, {});
  if (p.assignment.num_positive() == 0) {
    return std::nullopt;
  }
  const LossBreakdown result = breakdown(p.batch, cfg_, opts.iou_loss);
  const LossGradients g = total_loss_gradients(p.batch, cfg_.focal, cfg_.smooth_l1_beta, opts.iou_loss);

  const int C = shape_.num_categories;
  const int A = shape_.anchor_types;
  const std::size_t D = static_cast<std::size_t>(shape_.feature_dim);
  const std::size_t H = static_cast<std::size_t>(shape_.hidden);
  const std::size_t n_cells = static_cast<std::size_t>(scene.grid_width) * scene.grid_height;
  const std::span<const double> w(params.values);
  const auto reg = w.subspan(shape_.reg_offset(), shape_.reg_size());
  const auto iouw = w.subspan(shape_.iou_offset(), shape_.iou_size());
  const std::span<double> gw(params.gradient);
  const auto g_cls = gw.subspan(shape_.cls_offset(), shape_.cls_size());
  const auto g_shared = gw.subspan(shape_.shared_offset(), shape_.shared_size());
  const auto g_reg = gw.subspan(shape_.reg_offset(), shape_.reg_size());
  const auto g_iou = gw.subspan(shape_.iou_offset(), shape_.iou_size());

  std::vector<double> feat(D);
  std::vector<double> d_hidden(H);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    anchor_features(scene, static_cast<int>(cell % scene.grid_width),
                    static_cast<int>(cell / scene.grid_width), feat);
    const std::span<const double> h(fwd.hidden.data() + cell * H, H);
    std::fill(d_hidden.begin(), d_hidden.end(), 0.0);

    for (int t = 0; t < A; ++t) {
      const std::size_t a = cell * A + t;
      for (int c = 0; c < C; ++c) {
        const double prob = fwd.class_probs[a * C + c];
        const double dz = g.d_class_probs[a][c] * prob * (1.0 - prob);
        accumulate_row(g_cls.subspan((static_cast<std::size_t>(t) * C + c) * (D + 1), D + 1), feat, dz);
      }

      std::array<double, 4> d_off = g.d_pred_offsets[a];
      if (opts.propagate_target_iou_gradient && p.batch.records[a].label == AnchorLabel::positive &&
          g.d_target_iou[a] != 0.0) {
        const auto& gt = scene.objects[p.assignment.matched_gt[a]];
        const BoxGradient g_box = iou_gradient(p.decoded[a], gt.box);
        const auto g_o = decode_backward(anchors_[a], fwd.offsets[a], g_box).as_array();
        for (int m = 0; m < 4; ++m) {
          d_off[m] += g.d_target_iou[a] * g_o[m];
        }
      }
      const double q = fwd.predicted_iou[a];
      const double dv = g.d_pred_iou[a] * q * (1.0 - q);

      for (int m = 0; m < 4; ++m) {
        const std::size_t row_off = (static_cast<std::size_t>(t) * 4 + m) * (H + 1);
        accumulate_row(g_reg.subspan(row_off, H + 1), h, d_off[m]);
        for (std::size_t k = 0; k < H; ++k) {
          d_hidden[k] += d_off[m] * reg[row_off + k];
        }
      }
      const std::size_t iou_off = static_cast<std::size_t>(t) * (H + 1);
      accumulate_row(g_iou.subspan(iou_off, H + 1), h, dv);
      for (std::size_t k = 0; k < H; ++k) {
        d_hidden[k] += dv * iouw[iou_off + k];
      }
    }

    for (std::size_t k = 0; k < H; ++k) {
      const double du = d_hidden[k] * (1.0 - h[k] * h[k]);
      accumulate_row(g_shared.subspan(k * (D + 1), D + 1), feat, du);
    }
  }
  return result;
}

std::vector<Detection> ToyDetector::detect(const ToyModelParams& params, const ToyScene& scene) const {
  const auto fwd = forward(params, scene);
  const int C = shape_.num_categories;
  std::vector<Detection> dets;
  for (std::size_t a = 0; a < fwd.num_anchors; ++a) {
    for (int c = 0; c < C; ++c) {
      const double p = fwd.class_probs[a * C + c];
      if (p < cfg_.score_threshold) {
        continue;
      }
      Detection d;
      d.image_id = scene.image_id;
      d.category_id = c;
      d.box = decode(anchors_[a], fwd.offsets[a]);
      d.score = p;
      d.predicted_iou = fwd.predicted_iou[a];
      if (d.box.non_degenerate()) {
        dets.push_back(d);
      }
    }
  }
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& x, const Detection& y) {
    return x.score > y.score;
  });
  if (dets.size() > cfg_.max_detections_per_scene) {
    dets.resize(cfg_.max_detections_per_scene);
  }
  return dets;
}

// ---- training ---------------------------------------------------------------

ToyModelParams init_params(const ToyDetector& det, std::uint64_t seed) {
  const ModelShape& s = det.shape();
  ToyModelParams params(s);
  std::mt19937_64 rng(mix_seed(seed, kInitStream, 0));
  std::normal_distribution<double> normal(0.0, det.config().init_scale);
  for (double& v : params.values) {
    v = normal(rng);
  }
  // Biases: classification starts at a 1% foreground prior, the rest at zero.
  const double prior_bias = -std::log((1.0 - 0.01) / 0.01);
  const std::size_t D = static_cast<std::size_t>(s.feature_dim);
  const std::size_t H = static_cast<std::size_t>(s.hidden);
  auto cls = params.cls();
  for (std::size_t r = 0; r < cls.size() / (D + 1); ++r) {
    cls[r * (D + 1) + D] = prior_bias;
  }
  auto shared = params.shared();
  for (std::size_t r = 0; r < shared.size() / (D + 1); ++r) {
    shared[r * (D + 1) + D] = 0.0;
  }
  auto reg = params.reg();
  for (std::size_t r = 0; r < reg.size() / (H + 1); ++r) {
    reg[r * (H + 1) + H] = 0.0;
  }
  auto iouw = params.iou_head();
  for (std::size_t r = 0; r < iouw.size() / (H + 1); ++r) {
    iouw[r * (H + 1) + H] = 0.0;
  }
  return params;
}

std::vector<ToyScene> make_scenes(const SceneConfig& cfg, std::uint64_t seed, int count, ImageId first_id) {
  std::vector<ToyScene> scenes;
  scenes.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    scenes.push_back(render_scene(cfg, mix_seed(seed, 0, static_cast<std::uint64_t>(i)), first_id + i));
  }
  return scenes;
}

std::vector<ToyScene> train_scenes(const TrainConfig& cfg) {
  return make_scenes(cfg.scene, mix_seed(cfg.seed, kTrainStream, 0), cfg.train_scenes, 0);
}

std::vector<ToyScene> eval_scenes(const TrainConfig& cfg) {
  return make_scenes(cfg.scene, mix_seed(cfg.seed, kEvalStream, 0), cfg.eval_scenes, kEvalImageBase);
}

IouAgreement iou_agreement(const ToyDetector& det, const ToyModelParams& params,
                           std::span<const ToyScene> scenes) {
  std::vector<double> predicted;
  std::vector<double> target;
  for (const auto& scene : scenes) {
    const auto fwd = det.forward(params, scene);
    const auto p = prepare(det, fwd, scene, {});
    for (const auto& r : p.batch.records) {
      if (r.label == AnchorLabel::positive) {
        predicted.push_back(r.pred_iou);
        target.push_back(r.target_iou);
      }
    }
  }
  IouAgreement out;
  out.count = predicted.size();
  if (predicted.empty()) {
    return out;
  }
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    abs_sum += std::abs(predicted[i] - target[i]);
  }
  out.mae = abs_sum / static_cast<double>(predicted.size());
  out.pearson = stats::pearson(predicted, target);
  return out;
}

EvalReport evaluate_model(const ToyDetector& det, const ToyModelParams& params,
                          std::span<const ToyScene> scenes, const FusionConfig& fusion) {
  std::vector<Detection> dets;
  std::vector<GroundTruthObject> gts;
  for (const auto& scene : scenes) {
    const auto d = det.detect(params, scene);
    dets.insert(dets.end(), d.begin(), d.end());
    gts.insert(gts.end(), scene.objects.begin(), scene.objects.end());
  }
  GroundTruthIouLookup lookup;
  if (fusion.mode == FusionMode::fused_ground_truth_iou) {
    lookup = make_iou_truth_lookup(gts);
  }
  const auto fused = fuse_batch(std::move(dets), fusion, lookup);
  return evaluate(nms(fused, det.config().nms), gts);
}

TrainResult train(const TrainConfig& cfg) {
  const ToyDetector det(cfg);
  const auto train_set = train_scenes(cfg);
  const auto eval_set = eval_scenes(cfg);

  TrainResult result;
  result.params = init_params(det, cfg.seed);
  const auto initial = iou_agreement(det, result.params, eval_set);
  result.initial_iou_mae = initial.mae;
  result.initial_iou_pearson = initial.pearson;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, kShuffleStream, 0));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    BackwardOptions opts;
    opts.iou_loss = cfg.iou_loss;
    opts.propagate_target_iou_gradient = cfg.propagate_target_iou_gradient && epoch >= cfg.warmup_epochs;

    EpochMetrics m;
    m.epoch = epoch;
    std::size_t used = 0;
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
    std::vector<double> accum(result.params.values.size());
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::fill(accum.begin(), accum.end(), 0.0);
      std::size_t in_batch = 0;
      for (std::size_t j = start; j < std::min(start + batch, order.size()); ++j) {
        const auto& scene = train_set[order[j]];
        std::optional<LossBreakdown> step;
        try {
          step = det.backward(result.params, scene, opts);
        } catch (const std::invalid_argument& e) {
          throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", scene " +
                                 std::to_string(scene.image_id) + ": " + e.what());
        }
        if (!step) {
          ++m.skipped_scenes;
          continue;
        }
        const bool finite_grad = std::all_of(result.params.gradient.begin(), result.params.gradient.end(),
                                             [](double v) { return std::isfinite(v); });
        if (!std::isfinite(step->total) || !finite_grad) {
          std::ostringstream msg;
          msg << "training diverged at epoch " << epoch << ", scene " << scene.image_id
              << ": loss=" << step->total << " (cls=" << step->cls << ", loc=" << step->loc
              << ", iou=" << step->iou << "), finite gradient=" << std::boolalpha << finite_grad;
          throw TrainingDiverged(msg.str());
        }
        for (std::size_t k = 0; k < accum.size(); ++k) {
          accum[k] += result.params.gradient[k];
        }
        m.mean_loss += step->total;
        m.mean_cls += step->cls;
        m.mean_loc += step->loc;
        m.mean_iou += step->iou;
        ++in_batch;
      }
      if (in_batch == 0) {
        continue;
      }
      const double scale = cfg.learning_rate / static_cast<double>(in_batch);
      for (std::size_t k = 0; k < accum.size(); ++k) {
        result.params.values[k] -= scale * accum[k];
      }
      used += in_batch;
    }
    if (used > 0) {
      const double inv = 1.0 / static_cast<double>(used);
      m.mean_loss *= inv;
      m.mean_cls *= inv;
      m.mean_loc *= inv;
      m.mean_iou *= inv;
    }
    m.eval = evaluate_model(det, result.params, eval_set, cfg.eval_fusion());
    const auto agreement = iou_agreement(det, result.params, eval_set);
    m.iou_mae = agreement.mae;
    m.iou_pearson = agreement.pearson;
    result.epochs.push_back(m);
  }
  return result;
}

// ---- ablation -----------------------------------------------------------------

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::baseline:
      return "baseline";
    case Variant::iou_detached:
      return "iou_detached";
    case Variant::iou_propagated:
      return "iou_propagated";
  }
  return "unknown";
}

namespace {

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::baseline, Variant::iou_detached, Variant::iou_propagated}) {
    if (s == to_string(v)) {
      return v;
    }
  }
  throw std::invalid_argument("unknown ablation variant '" + s + "'");
}

AblationRow make_row(std::uint64_t seed, Variant v, double alpha, const EvalReport& r) {
  return AblationRow{seed, v, alpha, r.ap, r.ap50(), r.ap60(), r.ap70(), r.ap75(), r.ap80(), r.ap90()};
}

}  // namespace

AblationSummary ablation_suite(const TrainConfig& base, std::span<const std::uint64_t> seeds,
                               std::span<const double> alphas) {
  constexpr std::array<Variant, 3> kVariants{Variant::baseline, Variant::iou_detached,
                                             Variant::iou_propagated};
  const std::size_t n_jobs = seeds.size() * kVariants.size();
  std::vector<AblationRow> rows(n_jobs);
  std::vector<std::vector<EpochMetrics>> histories(n_jobs);
  std::vector<ToyModelParams> params(n_jobs);

  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t job = 0; job < static_cast<std::ptrdiff_t>(n_jobs); ++job) {
    try {
      const std::uint64_t seed = seeds[static_cast<std::size_t>(job) / kVariants.size()];
      const Variant variant = kVariants[static_cast<std::size_t>(job) % kVariants.size()];
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.iou_loss = variant == Variant::baseline ? IouLossKind::none
                                                  : (base.iou_loss == IouLossKind::none ? IouLossKind::bce
                                                                                        : base.iou_loss);
      cfg.propagate_target_iou_gradient = variant == Variant::iou_propagated;

      auto trained = train(cfg);
      histories[job] = std::move(trained.epochs);
      params[job] = trained.params;
      const ToyDetector det(cfg);
      const auto eval_set = eval_scenes(cfg);
      if (variant == Variant::baseline) {
        const auto report = evaluate_model(det, trained.params, eval_set, {1.0, FusionMode::score_only});
        rows[job] = make_row(seed, variant, 1.0, report);
        continue;
      }
      std::optional<AblationRow> best;
      for (double alpha : alphas) {
        const auto report =
            evaluate_model(det, trained.params, eval_set, {alpha, FusionMode::fused_predicted_iou});
        if (!best || report.ap > best->ap) {
          best = make_row(seed, variant, alpha, report);
        }
      }
      rows[job] = best.value_or(make_row(seed, variant, 1.0, EvalReport{}));
    } catch (...) {
#pragma omp critical(detkit_ablation_error)
      if (!error) {
        error = std::current_exception();
      }
    }
  }
  if (error) {
    std::rethrow_exception(error);
  }

  AblationSummary s;
  s.rows = rows;
  s.histories = std::move(histories);
  s.params = std::move(params);
  std::vector<double> ap_base, ap_det, ap_prop;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const double b = rows[i * 3].ap;
    const double d = rows[i * 3 + 1].ap;
    const double p = rows[i * 3 + 2].ap;
    ap_base.push_back(b);
    ap_det.push_back(d);
    ap_prop.push_back(p);
    s.propagated_beats_detached += p > d;
    s.detached_beats_baseline += d > b;
    s.baseline_beats_both += (b > d && b > p);
  }
  s.mean_ap_baseline = stats::mean(ap_base);
  s.mean_ap_detached = stats::mean(ap_det);
  s.mean_ap_propagated = stats::mean(ap_prop);
  s.p_propagated_vs_detached = stats::sign_test_p_value(s.propagated_beats_detached, seeds.size());
  s.p_detached_vs_baseline = stats::sign_test_p_value(s.detached_beats_baseline, seeds.size());
  s.ordering_holds = s.mean_ap_propagated >= s.mean_ap_detached && s.mean_ap_detached >= s.mean_ap_baseline;
  const auto hard_fail_count = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(seeds.size())));
  s.hard_fail = !seeds.empty() && s.baseline_beats_both >= hard_fail_count;
  return s;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << kAblationCsvHeader << '\n';
  out.precision(17);
  for (const auto& r : rows) {
    out << r.seed << ',' << to_string(r.variant) << ',' << r.alpha << ',' << r.ap << ',' << r.ap50 << ','
        << r.ap60 << ',' << r.ap70 << ',' << r.ap75 << ',' << r.ap80 << ',' << r.ap90 << '\n';
  }
  return out.str();
}

std::vector<AblationRow> parse_ablation_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kAblationCsvHeader) {
    throw std::invalid_argument("ablation CSV: missing or unexpected header");
  }
  std::vector<AblationRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      cells.push_back(cell);
    }
    if (cells.size() != 10) {
      throw std::invalid_argument("ablation CSV line " + std::to_string(line_no) + ": expected 10 fields");
    }
    try {
      AblationRow r;
      r.seed = std::stoull(cells[0]);
      r.variant = parse_variant(cells[1]);
      double* fields[] = {&r.alpha, &r.ap, &r.ap50, &r.ap60, &r.ap70, &r.ap75, &r.ap80, &r.ap90};
      for (std::size_t k = 0; k < 8; ++k) {
        *fields[k] = std::stod(cells[k + 2]);
      }
      rows.push_back(r);
    } catch (const std::logic_error& e) {
      throw std::invalid_argument("ablation CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace detkit::toy
