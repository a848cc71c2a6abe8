#include "detkit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "detkit/reduce.hpp"

namespace detkit {

namespace {

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

double require_positives(const LossBatch& batch) {
  batch.validate();
  const std::size_t n = batch.num_positive();
  if (n == 0) {
    throw std::invalid_argument("loss normalized by N_pos evaluated with no positive anchors");
  }
  return static_cast<double>(n);
}

// Evaluates term(record) for every record in parallel and reduces in fixed order.
template <typename Term>
double reduce_records(const LossBatch& batch, Term term) {
  const auto n = static_cast<std::ptrdiff_t>(batch.records.size());
  std::vector<double> values(batch.records.size(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    values[i] = term(batch.records[i]);
  }
  return pairwise_sum(values);
}

void check_beta(double beta) {
  if (!(beta > 0.0)) {
    throw std::invalid_argument("smooth-L1 beta must be positive");
  }
}

}  // namespace

void FocalParams::validate() const {
  if (!(gamma >= 0.0)) {
    throw std::invalid_argument("focal gamma must be >= 0");
  }
  if (!(balance > 0.0 && balance < 1.0)) {
    throw std::invalid_argument("focal balance must lie in (0, 1)");
  }
}

std::size_t LossBatch::num_positive() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) {
    return r.label == AnchorLabel::positive;
  }));
}

void LossBatch::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto where = "record " + std::to_string(i) + ": ";
    for (double p : r.class_probs) {
      if (!in_unit(p)) {
        throw std::invalid_argument(where + "class probability outside [0, 1]");
      }
    }
    if (!in_unit(r.pred_iou) || !in_unit(r.target_iou)) {
      throw std::invalid_argument(where + "IoU outside [0, 1]");
    }
    if (r.label == AnchorLabel::positive &&
        (r.target_class < 0 || r.target_class >= static_cast<int>(r.class_probs.size()))) {
      throw std::invalid_argument(where + "positive record without a valid target class");
    }
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

double focal_term(double p, bool positive_target, const FocalParams& params) {
  const double q = clamp_prob(p);
  if (positive_target) {
    return -params.balance * std::pow(1.0 - q, params.gamma) * std::log(q);
  }
  return -(1.0 - params.balance) * std::pow(q, params.gamma) * std::log(1.0 - q);
}

double focal_term_grad(double p, bool positive_target, const FocalParams& params) {
  if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) {
    return 0.0;
  }
  const double g = params.gamma;
  if (positive_target) {
    // d/dp [-b (1-p)^g ln p] = b [g (1-p)^(g-1) ln p - (1-p)^g / p]
    const double lead = g == 0.0 ? 0.0 : g * std::pow(1.0 - p, g - 1.0) * std::log(p);
    return params.balance * (lead - std::pow(1.0 - p, g) / p);
  }
  // d/dp [-(1-b) p^g ln(1-p)] = -(1-b) [g p^(g-1) ln(1-p) - p^g / (1-p)]
  const double lead = g == 0.0 ? 0.0 : g * std::pow(p, g - 1.0) * std::log(1.0 - p);
  return -(1.0 - params.balance) * (lead - std::pow(p, g) / (1.0 - p));
}

double smooth_l1(double x, double beta) {
  const double ax = std::abs(x);
  return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  if (std::abs(x) < beta) {
    return x / beta;
  }
  return x > 0.0 ? 1.0 : -1.0;
}

double bce(double pred, double target) {
  const double q = clamp_prob(pred);
  return -(target * std::log(q) + (1.0 - target) * std::log(1.0 - q));
}

double bce_grad_wrt_pred(double pred, double target) {
  if (pred < kProbEpsilon || pred > 1.0 - kProbEpsilon) {
    return 0.0;
  }
  return (pred - target) / (pred * (1.0 - pred));
}

double iou_bce_grad_wrt_target(double pred_iou) {
  if (!(pred_iou > 0.0 && pred_iou < 1.0)) {
    throw std::invalid_argument("predicted IoU must lie strictly inside (0, 1)");
  }
  return std::log((1.0 - pred_iou) / pred_iou);
}

double focal_loss(const LossBatch& batch, const FocalParams& params) {
  params.validate();
  const double n_pos = require_positives(batch);
  const double sum = reduce_records(batch, [&](const AnchorRecord& r) {
    if (r.label == AnchorLabel::ignore) {
      return 0.0;
    }
    double s = 0.0;
    for (std::size_t c = 0; c < r.class_probs.size(); ++c) {
      const bool target = r.label == AnchorLabel::positive && static_cast<int>(c) == r.target_class;
      s += focal_term(r.class_probs[c], target, params);
    }
    return s;
  });
  return sum / n_pos;
}

double smooth_l1_loss(const LossBatch& batch, double beta) {
  check_beta(beta);
  const double n_pos = require_positives(batch);
  const double sum = reduce_records(batch, [&](const AnchorRecord& r) {
    if (r.label != AnchorLabel::positive) {
      return 0.0;
    }
    const auto l = r.pred_offsets.as_array();
    const auto g = r.target_offsets.as_array();
    double s = 0.0;
    for (int m = 0; m < 4; ++m) {
      s += smooth_l1(l[m] - g[m], beta);
    }
    return s;
  });
  return sum / n_pos;
}

double iou_bce_loss(const LossBatch& batch) {
  const double n_pos = require_positives(batch);
  const double sum = reduce_records(batch, [](const AnchorRecord& r) {
    return r.label == AnchorLabel::positive ? bce(r.pred_iou, r.target_iou) : 0.0;
  });
  return sum / n_pos;
}

double iou_l2_loss(const LossBatch& batch) {
  const double n_pos = require_positives(batch);
  const double sum = reduce_records(batch, [](const AnchorRecord& r) {
    if (r.label != AnchorLabel::positive) {
      return 0.0;
    }
    const double d = r.pred_iou - r.target_iou;
    return d * d;
  });
  return sum / n_pos;
}

double iou_loss(const LossBatch& batch, IouLossKind kind) {
  switch (kind) {
    case IouLossKind::bce:
      return iou_bce_loss(batch);
    case IouLossKind::l2:
      return iou_l2_loss(batch);
    case IouLossKind::none:
      require_positives(batch);
      return 0.0;
  }
  throw std::invalid_argument("unknown IoU loss kind");
}

double total_loss(const LossBatch& batch, const FocalParams& params, double beta,
                  IouLossKind kind) {
  return focal_loss(batch, params) + smooth_l1_loss(batch, beta) + iou_loss(batch, kind);
}

LossGradients total_loss_gradients(const LossBatch& batch, const FocalParams& params,
                                   double beta, IouLossKind kind) {
  params.validate();
  check_beta(beta);
  const double inv_n = 1.0 / require_positives(batch);

  const std::size_t n = batch.records.size();
  LossGradients out;
  out.d_class_probs.resize(n);
  out.d_pred_offsets.assign(n, {0.0, 0.0, 0.0, 0.0});
  out.d_pred_iou.assign(n, 0.0);
  out.d_target_iou.assign(n, 0.0);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto& r = batch.records[i];
    auto& dp = out.d_class_probs[i];
    dp.assign(r.class_probs.size(), 0.0);
    if (r.label == AnchorLabel::ignore) {
      continue;
    }
    for (std::size_t c = 0; c < r.class_probs.size(); ++c) {
      const bool target = r.label == AnchorLabel::positive && static_cast<int>(c) == r.target_class;
      dp[c] = inv_n * focal_term_grad(r.class_probs[c], target, params);
    }
    if (r.label != AnchorLabel::positive) {
      continue;
    }
    const auto l = r.pred_offsets.as_array();
    const auto g = r.target_offsets.as_array();
    for (int m = 0; m < 4; ++m) {
      out.d_pred_offsets[i][m] = inv_n * smooth_l1_grad(l[m] - g[m], beta);
    }
    switch (kind) {
      case IouLossKind::bce: {
        out.d_pred_iou[i] = inv_n * bce_grad_wrt_pred(r.pred_iou, r.target_iou);
        const double q = clamp_prob(r.pred_iou);
        out.d_target_iou[i] = inv_n * std::log((1.0 - q) / q);
        break;
      }
      case IouLossKind::l2: {
        const double d = r.pred_iou - r.target_iou;
        out.d_pred_iou[i] = inv_n * 2.0 * d;
        out.d_target_iou[i] = -inv_n * 2.0 * d;
        break;
      }
      case IouLossKind::none:
        break;
    }
  }
  return out;
}

std::string_view to_string(IouLossKind kind) {
  switch (kind) {
    case IouLossKind::bce:
      return "bce";
    case IouLossKind::l2:
      return "l2";
    case IouLossKind::none:
      return "none";
  }
  return "unknown";
}

IouLossKind parse_iou_loss_kind(std::string_view text) {
  for (IouLossKind k : {IouLossKind::bce, IouLossKind::l2, IouLossKind::none}) {
    if (text == to_string(k)) {
      return k;
    }
  }
  throw std::invalid_argument("unknown IoU loss '" + std::string(text) + "' (bce, l2, none)");
}

}  // namespace detkit
