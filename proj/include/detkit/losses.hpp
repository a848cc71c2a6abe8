#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "detkit/geometry.hpp"

namespace detkit {

// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] before any log.
inline constexpr double kProbEpsilon = 1e-6;

struct FocalParams {
  double gamma = 2.0;
  // Positive-class balancing weight; unrelated to the fusion exponent.
  double balance = 0.25;

  void validate() const;
};

enum class AnchorLabel { positive, negative, ignore };

enum class IouLossKind { bce, l2, none };

std::string_view to_string(IouLossKind kind);
// Throws std::invalid_argument.
IouLossKind parse_iou_loss_kind(std::string_view text);

struct AnchorRecord {
  AnchorLabel label = AnchorLabel::ignore;
  // Index of the one-hot target class for positives; unused otherwise.
  int target_class = -1;
  // Per-category sigmoid probabilities.
  std::vector<double> class_probs;
  RegressionOffsets pred_offsets;
  RegressionOffsets target_offsets;
  double pred_iou = 0.5;
  double target_iou = 0.0;
};

struct LossBatch {
  std::vector<AnchorRecord> records;

  std::size_t num_positive() const;
  // Throws std::invalid_argument when a record is out of range.
  void validate() const;
};

// ---- scalar terms -------------------------------------------------------

double clamp_prob(double p);

// Focal term for one (anchor, class) entry with binary target.
double focal_term(double p, bool positive_target, const FocalParams& params);
double focal_term_grad(double p, bool positive_target, const FocalParams& params);

double smooth_l1(double x, double beta);
double smooth_l1_grad(double x, double beta);

// Binary cross-entropy with a soft target: -(t ln q + (1 - t) ln(1 - q)).
double bce(double pred, double target);
double bce_grad_wrt_pred(double pred, double target);

// d BCE(pred_iou, t) / d t = log((1 - pred_iou) / pred_iou). Throws
// std::invalid_argument unless 0 < pred_iou < 1.
double iou_bce_grad_wrt_target(double pred_iou);

// ---- batch losses (all normalized by N_pos; throw when N_pos == 0) ------

double focal_loss(const LossBatch& batch, const FocalParams& params);
double smooth_l1_loss(const LossBatch& batch, double beta = 1.0);
double iou_bce_loss(const LossBatch& batch);
double iou_l2_loss(const LossBatch& batch);
double iou_loss(const LossBatch& batch, IouLossKind kind);
double total_loss(const LossBatch& batch, const FocalParams& params, double beta,
                  IouLossKind kind);

struct LossGradients {
  // Indexed by record, then class.
  std::vector<std::vector<double>> d_class_probs;
  std::vector<std::array<double, 4>> d_pred_offsets;
  std::vector<double> d_pred_iou;
  std::vector<double> d_target_iou;
};

// Analytic gradient of total_loss with respect to every per-record input.
LossGradients total_loss_gradients(const LossBatch& batch, const FocalParams& params,
                                   double beta, IouLossKind kind);

}  // namespace detkit
