#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "detkit/evalmap.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace detkit;
using L = MatchLabel;

namespace {

std::vector<L> labels_by_rank(const std::vector<Detection>& dets, const MatchResult& m) {
  std::vector<L> out;
  for (std::size_t i : oracle::ranked(dets)) out.push_back(m.labels[i]);
  return out;
}

}  // namespace

TEST(Match, ExactCopyIsTruePositiveEverywhere) {
  const std::vector<GroundTruthObject> gts{{1, 1, {0, 0, 10, 10}}};
  const std::vector<Detection> dets{{1, 1, {0, 0, 10, 10}, 0.5, {}, {}}};
  for (double tau : kIouThresholds) {
    const auto m = match(dets, gts, tau);
    EXPECT_EQ(m.labels[0], L::true_positive);
    EXPECT_EQ(m.matched_gt[0], 0u);
    EXPECT_EQ(m.true_positives(), 1u);
    EXPECT_EQ(m.false_negatives(), 0u);
  }
}

TEST(Match, ThresholdStraddle) {
  const std::vector<GroundTruthObject> gts{{1, 1, {0, 0, 10, 10}}};
  const std::vector<Detection> dets{{1, 1, {0, 0, 10, 6}, 0.5, {}, {}}};
  ASSERT_DOUBLE_EQ(iou(dets[0].box, gts[0].box), 0.6);
  EXPECT_EQ(match(dets, gts, 0.5).labels[0], L::true_positive);
  EXPECT_EQ(match(dets, gts, 0.75).labels[0], L::false_positive);
}

TEST(Match, EachGroundTruthUsedOnce) {
  const std::vector<GroundTruthObject> gts{{1, 1, {0, 0, 10, 10}}};
  const std::vector<Detection> dets{{1, 1, {0, 0, 10, 10}, 0.4, {}, {}}, {1, 1, {0, 0, 10, 9}, 0.9, {}, {}}};
  const auto m = match(dets, gts, 0.5);
  EXPECT_EQ(m.labels[1], L::true_positive);
  EXPECT_EQ(m.labels[0], L::false_positive);
}

TEST(Match, RandomInstancesMatchGreedyOracle) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 500; ++k) {
    const auto inst = oracle::random_instance(rng, 10, 5, 3);
    for (double tau : {0.5, 0.75}) {
      const auto m = match(inst.dets, inst.gts, tau);
      const auto expected = oracle::greedy_match(inst.dets, inst.gts, tau);
      for (std::size_t i = 0; i < inst.dets.size(); ++i)
        EXPECT_EQ(m.labels[i] == L::true_positive, expected[i]);
    }
  }
}

TEST(AveragePrecision, AllTruePositives) {
  EXPECT_DOUBLE_EQ(*average_precision(std::vector{L::true_positive, L::true_positive}, 2), 1.0);
}

TEST(AveragePrecision, SingleFalsePositive) {
  EXPECT_EQ(*average_precision(std::vector{L::false_positive}, 1), 0.0);
}

TEST(AveragePrecision, NoGroundTruthIsExcluded) {
  EXPECT_FALSE(average_precision(std::vector{L::false_positive}, 0).has_value());
}

TEST(AveragePrecision, TpFpTpAgainstReference) {
  const std::vector labels{L::true_positive, L::false_positive, L::true_positive};
  const double ref = oracle::reference_ap({true, false, true}, 2);
  EXPECT_NEAR(*average_precision(labels, 2), ref, 1e-12);
  EXPECT_NEAR(ref, (51.0 + 50.0 * 2.0 / 3.0) / 101.0, 1e-12);
  const auto curve = interpolated_precision(labels, 2);
  EXPECT_EQ(curve[0], 1.0);
  EXPECT_EQ(curve[50], 1.0);
  EXPECT_NEAR(curve[51], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(curve[100], 2.0 / 3.0, 1e-15);
}

TEST(Evaluate, EmptyDetectionsGiveZero) {
  const std::vector<GroundTruthObject> gts{{1, 1, {0, 0, 10, 10}}, {1, 2, {5, 5, 50, 50}}};
  const auto r = evaluate({}, gts);
  EXPECT_EQ(r.ap, 0.0);
  for (double v : r.ap_at_threshold) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.num_categories_evaluated, 2u);
}

TEST(Evaluate, ExactCopiesGiveOne) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<GroundTruthObject> gts;
  std::vector<Detection> dets;
  for (int i = 0; i < 30; ++i) {
    const double x = 300 * u(rng), y = 300 * u(rng), s = 10 + 150 * u(rng);
    gts.push_back({i % 4, i % 3, {x, y, x + s, y + s * (0.5 + u(rng))}});
    dets.push_back({gts.back().image_id, gts.back().category_id, gts.back().box, u(rng), {}, {}});
  }
  const auto r = evaluate(dets, gts);
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
  for (double v : r.ap_at_threshold) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Evaluate, NoGroundTruthAtAll) {
  const std::vector<Detection> dets{{1, 1, {0, 0, 10, 10}, 0.5, {}, {}}};
  const auto r = evaluate(dets, {});
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_EQ(r.num_categories_evaluated, 0u);
}

TEST(Evaluate, AreaSplitsIgnoreOutOfRange) {
  // one small object detected, one large object missed
  const std::vector<GroundTruthObject> gts{{1, 1, {0, 0, 10, 10}}, {1, 1, {100, 100, 300, 300}}};
  const std::vector<Detection> dets{{1, 1, {0, 0, 10, 10}, 0.9, {}, {}}};
  const auto r = evaluate(dets, gts);
  EXPECT_DOUBLE_EQ(r.ap_small, 1.0);
  EXPECT_DOUBLE_EQ(r.ap_large, 0.0);
  EXPECT_EQ(r.ap_medium, 0.0);
  EXPECT_NEAR(r.ap, oracle::reference_ap({true}, 2), 1e-12);
}

TEST(Evaluate, ApAtLookup) {
  EvalReport r;
  r.ap_at_threshold[8] = 0.25;
  EXPECT_EQ(r.ap90(), 0.25);
  EXPECT_THROW(r.ap_at(0.42), std::out_of_range);
}

TEST(Evaluate, RandomInstancesMatchOracleAndSerial) {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 300; ++k) {
    const auto inst = oracle::random_instance(rng, 10, 5, 3);
    const auto r = evaluate(inst.dets, inst.gts);
    const auto s = evaluate_serial(inst.dets, inst.gts);
    double mean = 0.0;
    for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
      const double ref = oracle::reference_map(inst.dets, inst.gts, kIouThresholds[t]);
      EXPECT_NEAR(r.ap_at_threshold[t], ref, 1e-9);
      mean += ref;
    }
    EXPECT_NEAR(r.ap, mean / kIouThresholds.size(), 1e-9);
    EXPECT_EQ(r.ap_at_threshold, s.ap_at_threshold);
    EXPECT_EQ(r.ap_small, s.ap_small);
    EXPECT_EQ(r.ap_medium, s.ap_medium);
    EXPECT_EQ(r.ap_large, s.ap_large);
    EXPECT_EQ(r.pr_curves, s.pr_curves);
  }
}

TEST(Evaluate, LargeSceneParallelMatchesSerial) {
  SimConfig cfg;
  cfg.n_images = 60;
  const auto scene = generate(cfg);
  const auto r = evaluate(scene.detections, scene.ground_truths);
  const auto s = evaluate_serial(scene.detections, scene.ground_truths);
  EXPECT_EQ(r.ap, s.ap);
  EXPECT_EQ(r.ap_at_threshold, s.ap_at_threshold);
  EXPECT_EQ(r.ap_small, s.ap_small);
  EXPECT_EQ(r.ap_medium, s.ap_medium);
  EXPECT_EQ(r.ap_large, s.ap_large);
}

TEST(IouTruth, CrossCategoryScene) {
  const auto f = scenario::cross_category_scene();
  EXPECT_EQ(iou_truth(f.c, f.gts), 0.7);
  EXPECT_EQ(iou_eval(f.c, f.gts), 0.3);
}

TEST(IouTruth, TrivialCases) {
  const auto f = scenario::cross_category_scene();
  Detection other_image = f.c;
  other_image.image_id = 99;
  EXPECT_EQ(iou_truth(other_image, f.gts), 0.0);
  EXPECT_EQ(iou_eval(other_image, f.gts), 0.0);
  Detection exact = f.c;
  exact.box = f.gts[1].box;
  EXPECT_EQ(iou_truth(exact, f.gts), 1.0);
  EXPECT_EQ(iou_eval(exact, f.gts), 1.0);
}

TEST(Scatter, WritesHeaderAndRows) {
  const auto f = scenario::cross_category_scene();
  const auto path = std::filesystem::temp_directory_path() / "detkit_scatter_test.csv";
  Detection d = f.c;
  d.confidence = 0.5;
  scatter_export(std::vector{d}, f.gts, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, kScatterHeader);
  EXPECT_EQ(row.substr(0, 4), "0.5,");
  EXPECT_NE(row.find(",2"), std::string::npos);
  std::filesystem::remove(path);
}
