#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "detkit/confidence.hpp"
#include "detkit/detection.hpp"
#include "detkit/evalmap.hpp"
#include "detkit/losses.hpp"
#include "detkit/nms.hpp"
#include "detkit/simgen.hpp"

namespace detkit::toy {

// Procedural scene: a coarse grid of cells whose channels carry the
// fractional coverage of each cell by the objects, mixed through a
// category appearance matrix, plus Gaussian pixel noise. The last channel
// is category-agnostic occupancy.
struct SceneConfig {
  int grid_width = 8;
  int grid_height = 8;
  double cell_size = 8.0;
  int num_categories = 3;
  IntRange objects_per_scene{1, 3};
  double min_object_size = 10.0;
  double max_object_size = 28.0;
  double pixel_noise = 0.15;
  // Off-diagonal weight of the appearance matrix; 0 makes categories orthogonal.
  double category_confusion = 0.6;

  int channels() const { return num_categories + 1; }
  double width() const { return grid_width * cell_size; }
  double height() const { return grid_height * cell_size; }
  void validate() const;
};

struct ToyScene {
  ImageId image_id = 0;
  int grid_width = 0;
  int grid_height = 0;
  int channels = 0;
  double cell_size = 0.0;
  // Row-major (y, x, channel).
  std::vector<double> features;
  std::vector<GroundTruthObject> objects;

  double feature(int gx, int gy, int ch) const {
    return features[(static_cast<std::size_t>(gy) * grid_width + gx) * channels + ch];
  }
};

// Deterministic per (cfg, seed).
ToyScene render_scene(const SceneConfig& cfg, std::uint64_t seed, ImageId image_id);

struct AnchorConfig {
  std::vector<double> sizes{16.0, 24.0};
  std::vector<double> aspect_ratios{1.0};

  std::size_t per_cell() const { return sizes.size() * aspect_ratios.size(); }
};

// Anchors centred on every cell: index = cell * per_cell + type, cells row-major.
std::vector<Box> make_anchors(const SceneConfig& scene, const AnchorConfig& anchors);

struct Assignment {
  std::vector<AnchorLabel> labels;
  // Matched ground-truth index for positives, -1 otherwise.
  std::vector<int> matched_gt;

  std::size_t num_positive() const;
};

// Positive iff max IoU >= positive_threshold, negative iff < negative_threshold,
// ignore otherwise. Each ground truth then claims its highest-IoU anchor
// (lowest index on ties, later ground truths override earlier claims) when
// that IoU is positive. Throws std::invalid_argument on an empty anchor set.
Assignment assign(std::span<const Box> anchors, std::span<const GroundTruthObject> gts,
                  double positive_threshold = 0.5, double negative_threshold = 0.4);

// Sizes of the three heads. The classification head reads the anchor's
// feature patch directly; regression and IoU heads sit on a shared tanh
// layer (the regression branch).
struct ModelShape {
  int num_categories = 3;
  int anchor_types = 2;
  int feature_dim = 0;  // (2r+1)^2 * channels
  int hidden = 16;

  std::size_t cls_size() const;
  std::size_t shared_size() const;
  std::size_t reg_size() const;
  std::size_t iou_size() const;
  std::size_t total() const { return cls_size() + shared_size() + reg_size() + iou_size(); }
  std::size_t cls_offset() const { return 0; }
  std::size_t shared_offset() const { return cls_size(); }
  std::size_t reg_offset() const { return shared_offset() + shared_size(); }
  std::size_t iou_offset() const { return reg_offset() + reg_size(); }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Flat parameter vector plus a gradient buffer of identical shape.
//   cls    [anchor_type][category][feature_dim + 1]
//   shared [hidden][feature_dim + 1]
//   reg    [anchor_type][4][hidden + 1]
//   iou    [anchor_type][hidden + 1]
// The trailing entry of every row is the bias.
struct ToyModelParams {
  ModelShape shape;
  std::vector<double> values;
  std::vector<double> gradient;

  ToyModelParams() = default;
  explicit ToyModelParams(const ModelShape& s)
      : shape(s), values(s.total(), 0.0), gradient(s.total(), 0.0) {}

  std::span<double> cls() { return std::span(values).subspan(shape.cls_offset(), shape.cls_size()); }
  std::span<double> shared() { return std::span(values).subspan(shape.shared_offset(), shape.shared_size()); }
  std::span<double> reg() { return std::span(values).subspan(shape.reg_offset(), shape.reg_size()); }
  std::span<double> iou_head() { return std::span(values).subspan(shape.iou_offset(), shape.iou_size()); }
  std::span<double> reg_gradient() {
    return std::span(gradient).subspan(shape.reg_offset(), shape.reg_size());
  }
  void zero_gradient() { std::fill(gradient.begin(), gradient.end(), 0.0); }
};

struct TrainConfig {
  std::uint64_t seed = 1;
  int epochs = 30;
  double learning_rate = 0.02;
  // Scenes per SGD step; the step uses the mean of the per-scene gradients.
  int batch_size = 1;
  double positive_threshold = 0.5;
  double negative_threshold = 0.4;
  bool propagate_target_iou_gradient = false;
  // Epochs trained with the target IoU detached before propagation starts.
  int warmup_epochs = 0;
  IouLossKind iou_loss = IouLossKind::bce;
  // Unset: default_alpha(propagate_target_iou_gradient).
  std::optional<double> fusion_alpha;
  int train_scenes = 400;
  int eval_scenes = 200;
  int hidden_units = 32;
  int neighborhood_radius = 2;
  double init_scale = 0.05;
  double smooth_l1_beta = 1.0 / 9.0;
  double score_threshold = 0.05;
  std::size_t max_detections_per_scene = 100;
  FocalParams focal;
  NmsConfig nms;
  SceneConfig scene;
  AnchorConfig anchors;

  void validate() const;
  FusionConfig eval_fusion() const;
};

struct ForwardOutput {
  std::size_t num_anchors = 0;
  int num_categories = 0;
  std::vector<double> class_probs;  // num_anchors x num_categories
  std::vector<RegressionOffsets> offsets;
  std::vector<double> predicted_iou;
  // Cached activations for backward.
  std::vector<double> hidden;  // num_cells x hidden

  // Row-major (num_anchors, C + 4 + 1): probs, offsets, predicted IoU.
  std::vector<double> as_matrix() const;
};

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double loc = 0.0;
  double iou = 0.0;
  std::size_t num_positive = 0;
};

struct BackwardOptions {
  bool propagate_target_iou_gradient = false;
  IouLossKind iou_loss = IouLossKind::bce;
};

// Binds the architecture to one scene layout.
class ToyDetector {
 public:
  explicit ToyDetector(const TrainConfig& cfg);

  const ModelShape& shape() const { return shape_; }
  std::span<const Box> anchors() const { return anchors_; }
  const TrainConfig& config() const { return cfg_; }

  ForwardOutput forward(const ToyModelParams& params, const ToyScene& scene) const;

  // Total loss. With frozen_target_iou the target IoUs of positives are
  // taken from it (one entry per anchor) instead of the decoded boxes.
  // Returns nullopt when the scene has no positive anchor.
  std::optional<LossBreakdown> loss(const ToyModelParams& params, const ToyScene& scene,
                                    const BackwardOptions& opts,
                                    std::span<const double> frozen_target_iou = {}) const;

  // Overwrites params.gradient with the exact gradient. With propagation off
  // the target IoUs are constants; with it on the chain runs through the
  // decoded boxes into the regression branch. Returns nullopt (gradient
  // zeroed) when the scene has no positive anchor.
  std::optional<LossBreakdown> backward(ToyModelParams& params, const ToyScene& scene,
                                        const BackwardOptions& opts) const;

  // Target IoU per anchor (0 for non-positives) at the current parameters.
  std::vector<double> target_ious(const ToyModelParams& params, const ToyScene& scene) const;

  // Candidate detections above the score threshold, capped per scene.
  std::vector<Detection> detect(const ToyModelParams& params, const ToyScene& scene) const;

 private:
  void anchor_features(const ToyScene& scene, int gx, int gy, std::span<double> out) const;
  void check_scene(const ToyScene& scene) const;

  TrainConfig cfg_;
  ModelShape shape_;
  std::vector<Box> anchors_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_cls = 0.0;
  double mean_loc = 0.0;
  double mean_iou = 0.0;
  std::size_t skipped_scenes = 0;
  EvalReport eval;
  // Predicted vs target IoU over positive anchors of the eval scenes.
  double iou_mae = 0.0;
  double iou_pearson = 0.0;
};

struct TrainResult {
  ToyModelParams params;
  std::vector<EpochMetrics> epochs;
  // Eval-set IoU statistics of the initial parameters.
  double initial_iou_mae = 0.0;
  double initial_iou_pearson = 0.0;
};

ToyModelParams init_params(const ToyDetector& det, std::uint64_t seed);

std::vector<ToyScene> make_scenes(const SceneConfig& cfg, std::uint64_t seed, int count,
                                  ImageId first_id);
std::vector<ToyScene> train_scenes(const TrainConfig& cfg);
std::vector<ToyScene> eval_scenes(const TrainConfig& cfg);

struct IouAgreement {
  double mae = 0.0;
  double pearson = 0.0;
  std::size_t count = 0;
};
IouAgreement iou_agreement(const ToyDetector& det, const ToyModelParams& params,
                           std::span<const ToyScene> scenes);

// fuse -> nms -> evaluate over the scenes.
EvalReport evaluate_model(const ToyDetector& det, const ToyModelParams& params,
                          std::span<const ToyScene> scenes, const FusionConfig& fusion);

// Plain SGD. Throws TrainingDiverged on a non-finite loss.
TrainResult train(const TrainConfig& cfg);

enum class Variant { baseline, iou_detached, iou_propagated };
std::string_view to_string(Variant v);

struct AblationRow {
  std::uint64_t seed = 0;
  Variant variant = Variant::baseline;
  double alpha = 1.0;
  double ap = 0.0;
  double ap50 = 0.0;
  double ap60 = 0.0;
  double ap70 = 0.0;
  double ap75 = 0.0;
  double ap80 = 0.0;
  double ap90 = 0.0;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct AblationSummary {
  // Per seed, in order: baseline, iou_detached, iou_propagated.
  std::vector<AblationRow> rows;
  // Indexed like rows.
  std::vector<std::vector<EpochMetrics>> histories;
  std::vector<ToyModelParams> params;
  double mean_ap_baseline = 0.0;
  double mean_ap_detached = 0.0;
  double mean_ap_propagated = 0.0;
  std::size_t propagated_beats_detached = 0;
  std::size_t detached_beats_baseline = 0;
  std::size_t baseline_beats_both = 0;
  double p_propagated_vs_detached = 1.0;
  double p_detached_vs_baseline = 1.0;
  bool ordering_holds = false;
  // Baseline beats both IoU variants in at least 80% of seeds.
  bool hard_fail = false;
};

inline constexpr const char* kAblationCsvHeader = "seed,variant,alpha,AP,AP50,AP60,AP70,AP75,AP80,AP90";

// Trains the three variants per seed and reports each at its best alpha
// from the sweep (baseline is always score-only).
AblationSummary ablation_suite(const TrainConfig& base, std::span<const std::uint64_t> seeds,
                               std::span<const double> alphas);

std::string ablation_csv(std::span<const AblationRow> rows);
std::vector<AblationRow> parse_ablation_csv(const std::string& text);

}  // namespace detkit::toy
