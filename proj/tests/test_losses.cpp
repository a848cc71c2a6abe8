#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "detkit/losses.hpp"
#include "oracles.hpp"

using namespace detkit;

namespace {

AnchorRecord positive(std::vector<double> probs, int cls) {
  AnchorRecord r;
  r.label = AnchorLabel::positive;
  r.class_probs = std::move(probs);
  r.target_class = cls;
  return r;
}

AnchorRecord negative(std::vector<double> probs) {
  AnchorRecord r;
  r.label = AnchorLabel::negative;
  r.class_probs = std::move(probs);
  return r;
}

LossBatch random_batch(std::mt19937_64& rng, int n, int classes) {
  std::uniform_real_distribution<double> u(0.0, 1.0), off(-1.0, 1.0);
  LossBatch b;
  b.records.push_back(positive(std::vector<double>(classes, 0.3), 0));
  b.records.back().target_iou = 0.4;
  for (int i = 0; i < n; ++i) {
    AnchorRecord r;
    const double k = u(rng);
    r.label = k < 0.4 ? AnchorLabel::positive : k < 0.9 ? AnchorLabel::negative : AnchorLabel::ignore;
    for (int c = 0; c < classes; ++c) r.class_probs.push_back(u(rng));
    r.target_class = static_cast<int>(u(rng) * classes);
    r.pred_offsets = {off(rng), off(rng), off(rng), off(rng)};
    r.target_offsets = {off(rng), off(rng), off(rng), off(rng)};
    r.pred_iou = 0.02 + 0.96 * u(rng);
    r.target_iou = 0.01 + 0.98 * u(rng);
    b.records.push_back(r);
  }
  return b;
}

}  // namespace

TEST(Focal, NearPerfectPositiveIsTiny) {
  LossBatch b;
  b.records.push_back(positive({1.0 - 1e-9}, 0));
  EXPECT_LT(focal_loss(b, {}), 1e-6);
}

TEST(Focal, ScalarFormula) {
  LossBatch b;
  b.records.push_back(positive({0.9}, 0));
  const double expected = 0.25 * 0.1 * 0.1 * -std::log(0.9);
  EXPECT_NEAR(focal_loss(b, {}), expected, 1e-15);
  EXPECT_NEAR(focal_loss(b, {}), 2.634e-4, 1e-7);
}

TEST(Focal, GammaZeroIsHalfCrossEntropy) {
  std::mt19937_64 rng(2);
  const LossBatch b = random_batch(rng, 40, 3);
  double ce = 0.0;
  std::size_t n_pos = 0;
  for (const auto& r : b.records) {
    if (r.label == AnchorLabel::ignore) continue;
    n_pos += r.label == AnchorLabel::positive;
    for (std::size_t c = 0; c < r.class_probs.size(); ++c) {
      const bool t = r.label == AnchorLabel::positive && static_cast<int>(c) == r.target_class;
      ce += -std::log(t ? r.class_probs[c] : 1.0 - r.class_probs[c]);
    }
  }
  EXPECT_NEAR(focal_loss(b, {0.0, 0.5}), 0.5 * ce / static_cast<double>(n_pos), 1e-12);
}

TEST(Focal, RequiresPositives) {
  LossBatch b;
  b.records.push_back(negative({0.2}));
  EXPECT_THROW(focal_loss(b, {}), std::invalid_argument);
}

TEST(SmoothL1, ZeroResidual) {
  LossBatch b;
  auto r = positive({0.5}, 0);
  r.pred_offsets = r.target_offsets = {0.1, -0.2, 0.3, 0.4};
  b.records.push_back(r);
  EXPECT_EQ(smooth_l1_loss(b), 0.0);
}

TEST(SmoothL1, TransitionPoint) {
  const double beta = 0.7;
  LossBatch b;
  auto r = positive({0.5}, 0);
  r.pred_offsets = {beta, 0, 0, 0};
  b.records.push_back(r);
  EXPECT_NEAR(smooth_l1_loss(b, beta), beta / 2.0, 1e-15);
}

TEST(SmoothL1, LinearBranch) {
  LossBatch b;
  auto r = positive({0.5}, 0);
  r.pred_offsets = {3, 0, 0, 0};
  b.records.push_back(r);
  EXPECT_DOUBLE_EQ(smooth_l1_loss(b, 1.0), 2.5);
}

TEST(IouBce, MatchedHalfIsLn2) {
  LossBatch b;
  for (int i = 0; i < 3; ++i) {
    auto r = positive({0.5}, 0);
    r.pred_iou = r.target_iou = 0.5;
    b.records.push_back(r);
  }
  EXPECT_NEAR(iou_bce_loss(b), std::log(2.0), 1e-15);
}

TEST(IouBce, SoftTargetFloor) {
  LossBatch b;
  auto r = positive({0.5}, 0);
  r.pred_iou = r.target_iou = 0.9;
  b.records.push_back(r);
  EXPECT_NEAR(iou_bce_loss(b), -(0.9 * std::log(0.9) + 0.1 * std::log(0.1)), 1e-15);
  EXPECT_NEAR(iou_bce_loss(b), 0.325083, 1e-6);
}

TEST(IouBce, MinimizerEqualsTarget) {
  for (double t = 0.05; t < 0.96; t += 0.05) {
    const double x = oracle::golden_section_min([&](double q) { return bce(q, t); }, 1e-4,
                                                1.0 - 1e-4, 1e-10);
    EXPECT_NEAR(x, t, 1e-6) << t;
  }
}

TEST(IouBceTargetGradient, SymmetricPoint) { EXPECT_EQ(iou_bce_grad_wrt_target(0.5), 0.0); }

TEST(IouBceTargetGradient, MatchesFiniteDifference) {
  for (double q : {0.9, 0.1}) {
    const double fd = oracle::central_difference([&](double t) { return bce(q, t); }, 0.5, 1e-6);
    EXPECT_NEAR(iou_bce_grad_wrt_target(q), fd, 1e-6);
  }
  EXPECT_NEAR(iou_bce_grad_wrt_target(0.9), std::log(1.0 / 9.0), 1e-12);
  EXPECT_NEAR(iou_bce_grad_wrt_target(0.1), std::log(9.0), 1e-12);
  EXPECT_EQ(iou_bce_grad_wrt_target(0.1), -iou_bce_grad_wrt_target(0.9));
  EXPECT_NEAR(iou_bce_grad_wrt_target(0.9), -2.19722, 1e-5);
}

TEST(IouBceTargetGradient, RejectsBoundary) {
  EXPECT_THROW(iou_bce_grad_wrt_target(0.0), std::invalid_argument);
  EXPECT_THROW(iou_bce_grad_wrt_target(1.0), std::invalid_argument);
}

TEST(IouL2, Values) {
  LossBatch b;
  auto r = positive({0.5}, 0);
  r.pred_iou = r.target_iou = 0.4;
  b.records.push_back(r);
  EXPECT_EQ(iou_l2_loss(b), 0.0);
  b.records[0].pred_iou = 0.3;
  b.records[0].target_iou = 0.8;
  EXPECT_DOUBLE_EQ(iou_l2_loss(b), 0.25);
}

TEST(IouL2, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(9);
  const LossBatch b = random_batch(rng, 20, 2);
  const auto g = total_loss_gradients(b, {}, 1.0, IouLossKind::l2);
  for (std::size_t i = 0; i < b.records.size(); ++i) {
    if (b.records[i].label != AnchorLabel::positive) continue;
    auto f = [&](double v) {
      LossBatch c = b;
      c.records[i].pred_iou = v;
      return iou_l2_loss(c);
    };
    EXPECT_NEAR(g.d_pred_iou[i], oracle::central_difference(f, b.records[i].pred_iou, 1e-6), 1e-6);
  }
}

TEST(TotalLoss, ZeroResidualLeavesBceFloor) {
  LossBatch b;
  double floor = 0.0;
  for (double t : {0.55, 0.7, 0.9}) {
    auto r = positive({1.0, 0.0}, 0);
    r.pred_offsets = r.target_offsets = {0.1, 0.2, -0.1, 0.05};
    r.pred_iou = r.target_iou = t;
    floor += -(t * std::log(t) + (1 - t) * std::log(1 - t));
    b.records.push_back(r);
  }
  b.records.push_back(negative({0.0, 0.0}));
  EXPECT_NEAR(total_loss(b, {}, 1.0, IouLossKind::bce), floor / 3.0, 1e-12);
}

TEST(TotalLoss, EqualsSumOfTermsExactly) {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 100; ++k) {
    const LossBatch b = random_batch(rng, 30, 3);
    for (auto kind : {IouLossKind::bce, IouLossKind::l2, IouLossKind::none}) {
      const double parts = focal_loss(b, {}) + smooth_l1_loss(b, 0.5) + iou_loss(b, kind);
      EXPECT_EQ(total_loss(b, {}, 0.5, kind), parts);
    }
  }
}

TEST(TotalLoss, NegativesOnlyAffectFocal) {
  std::mt19937_64 rng(37);
  const LossBatch b = random_batch(rng, 40, 3);
  LossBatch pos_only;
  for (const auto& r : b.records)
    if (r.label != AnchorLabel::negative) pos_only.records.push_back(r);
  EXPECT_NE(focal_loss(b, {}), focal_loss(pos_only, {}));
  EXPECT_DOUBLE_EQ(smooth_l1_loss(b), smooth_l1_loss(pos_only));
  EXPECT_DOUBLE_EQ(iou_bce_loss(b), iou_bce_loss(pos_only));
  EXPECT_DOUBLE_EQ(iou_l2_loss(b), iou_l2_loss(pos_only));
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(41);
  const LossBatch b = random_batch(rng, 25, 2);
  const double beta = 0.5;
  for (auto kind : {IouLossKind::bce, IouLossKind::l2}) {
    const auto g = total_loss_gradients(b, {}, beta, kind);
    auto loss_with = [&](auto&& mutate) {
      return [&, mutate](double v) {
        LossBatch c = b;
        mutate(c, v);
        return total_loss(c, {}, beta, kind);
      };
    };
    for (std::size_t i = 0; i < b.records.size(); ++i) {
      const auto& r = b.records[i];
      for (std::size_t c = 0; c < r.class_probs.size(); ++c) {
        auto f = loss_with([&](LossBatch& x, double v) { x.records[i].class_probs[c] = v; });
        EXPECT_NEAR(g.d_class_probs[i][c], oracle::central_difference(f, r.class_probs[c], 1e-7),
                    1e-5 * std::max(1.0, std::abs(g.d_class_probs[i][c])));
      }
      if (r.label != AnchorLabel::positive) continue;
      for (int m = 0; m < 4; ++m) {
        const double res = r.pred_offsets.as_array()[m] - r.target_offsets.as_array()[m];
        if (std::abs(std::abs(res) - beta) < 1e-4) continue;
        auto f = loss_with([&](LossBatch& x, double v) {
          auto a = x.records[i].pred_offsets.as_array();
          a[m] = v;
          x.records[i].pred_offsets = RegressionOffsets::from_array(a);
        });
        EXPECT_NEAR(g.d_pred_offsets[i][m],
                    oracle::central_difference(f, r.pred_offsets.as_array()[m], 1e-7), 1e-6);
      }
      auto fq = loss_with([&](LossBatch& x, double v) { x.records[i].pred_iou = v; });
      EXPECT_NEAR(g.d_pred_iou[i], oracle::central_difference(fq, r.pred_iou, 1e-7),
                  1e-5 * std::max(1.0, std::abs(g.d_pred_iou[i])));
      auto ft = loss_with([&](LossBatch& x, double v) { x.records[i].target_iou = v; });
      EXPECT_NEAR(g.d_target_iou[i], oracle::central_difference(ft, r.target_iou, 1e-7), 1e-6);
    }
  }
}

TEST(IouLossKindText, RoundTrip) {
  for (auto k : {IouLossKind::bce, IouLossKind::l2, IouLossKind::none})
    EXPECT_EQ(parse_iou_loss_kind(to_string(k)), k);
  EXPECT_THROW(parse_iou_loss_kind("huber"), std::invalid_argument);
}
