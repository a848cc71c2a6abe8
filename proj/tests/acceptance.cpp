// Acceptance suite: one line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "detkit/confidence.hpp"
#include "detkit/evalmap.hpp"
#include "detkit/gradcheck.hpp"
#include "detkit/losses.hpp"
#include "detkit/nms.hpp"
#include "detkit/simgen.hpp"
#include "detkit/stats.hpp"
#include "detkit/toydet.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace detkit;

namespace {

enum class Verdict { pass, soft_fail, fail };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

const std::vector<double> kAlphas{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3};

int failures = 0;

void run(const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {Verdict::fail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    o.verdict = Verdict::fail;
    o.detail += " (over time budget)";
  }
  const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::soft_fail ? "SOFT-FAIL" : "FAIL";
  failures += o.verdict == Verdict::fail;
  std::printf("%-9s %-22s %s [%.2fs / %.0fs]\n", tag, name, o.detail.c_str(), secs, budget_s);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Outcome target_gradient_gate() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double q = u(rng), t = u(rng);
    const double fd = oracle::central_difference([&](double x) { return bce(q, x); }, t, 1e-6);
    worst = std::max(worst, std::abs(iou_bce_grad_wrt_target(q) - fd));
  }
  const double at_half = iou_bce_grad_wrt_target(0.5);
  const bool ok = worst <= 1e-6 && at_half == 0.0;
  return {ok ? Verdict::pass : Verdict::fail,
          fmt("1000 points, max |analytic - fd| = %.2e (tol 1e-06), value at 0.5 = %g", worst, at_half)};
}

Outcome ap_oracle_gate() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto inst = oracle::random_instance(rng, 10, 5, 3);
    const auto r = evaluate(inst.dets, inst.gts);
    for (std::size_t t = 0; t < kIouThresholds.size(); ++t)
      worst = std::max(worst, std::abs(r.ap_at_threshold[t] -
                                       oracle::reference_map(inst.dets, inst.gts, kIouThresholds[t])));
  }
  return {worst <= 1e-9 ? Verdict::pass : Verdict::fail,
          fmt("1000 instances x 10 thresholds, max |evaluate - oracle| = %.2e (tol 1e-09)", worst)};
}

Outcome nms_gate() {
  std::mt19937_64 rng(3);
  std::size_t violations = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto dets = oracle::random_instance(rng, 40, 5, 3).dets;
    const NmsConfig cfg{0.5};
    const auto out = nms(dets, cfg);
    for (const auto& d : out)
      violations += std::find(dets.begin(), dets.end(), d) == dets.end();
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = i + 1; j < out.size(); ++j)
        violations += out[i].image_id == out[j].image_id && out[i].category_id == out[j].category_id &&
                      iou(out[i].box, out[j].box) > cfg.iou_threshold;
    violations += !(nms(out, cfg) == out);
    std::vector<std::size_t> merged;
    for (CategoryId c = 1; c <= 3; ++c) {
      std::vector<std::size_t> idx;
      std::vector<Detection> only;
      for (std::size_t i = 0; i < dets.size(); ++i)
        if (dets[i].category_id == c) {
          idx.push_back(i);
          only.push_back(dets[i]);
        }
      for (std::size_t k2 : nms_keep_indices(only, cfg)) merged.push_back(idx[k2]);
    }
    const auto whole = nms_keep_indices(dets, cfg);
    violations += std::set<std::size_t>(merged.begin(), merged.end()) !=
                  std::set<std::size_t>(whole.begin(), whole.end());
  }
  return {violations == 0 ? Verdict::pass : Verdict::fail,
          fmt("1000 instances, %zu violations (subset, pairwise iou, idempotence, per-category)", violations)};
}

Outcome toy_gradient_gate() {
  const auto off = toydet_gate(false, 1);
  const auto on = toydet_gate(true, 1);
  const std::size_t anchors = toy::ToyDetector(tiny_gradcheck_config()).anchors().size();
  const bool ok = off.passed && on.passed && anchors <= 8;
  return {ok ? Verdict::pass : Verdict::fail,
          fmt("%zu anchors, %zu params; max rel err flag off %.2e, flag on %.2e (tol 1e-04)", anchors,
              on.checks, off.max_error, on.max_error)};
}

double best_ap(const SimScene& s, FusionMode mode) {
  double best = 0.0;
  for (double a : kAlphas) best = std::max(best, run_pipeline(s, {a, mode}, {}).ap);
  return best;
}

Outcome fusion_ordering_gate() {
  int holds = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SimConfig cfg;
    cfg.seed = seed;
    const auto s = generate(cfg);
    const double base = run_pipeline(s, {1.0, FusionMode::score_only}, {}).ap;
    const double pred = best_ap(s, FusionMode::fused_predicted_iou);
    const double gt = best_ap(s, FusionMode::fused_ground_truth_iou);
    const bool ok = gt > pred && pred > base;
    holds += ok;
    per_seed += fmt(" s%llu:%.3f/%.3f/%.3f", static_cast<unsigned long long>(seed), gt, pred, base);
  }
  return {holds >= 4 ? Verdict::pass : Verdict::fail,
          fmt("gt > pred > score in %d/5 seeds (need 4); AP gt/pred/score%s", holds, per_seed.c_str())};
}

Outcome alpha_trend_gate() {
  SimConfig cfg;
  cfg.seed = 1;
  const auto s = generate(cfg);
  std::vector<double> neg_alpha, ap50, ap90;
  for (double a : kAlphas) {
    const auto r = run_pipeline(s, {a, FusionMode::fused_predicted_iou}, {});
    neg_alpha.push_back(-a);
    ap50.push_back(r.ap50());
    ap90.push_back(r.ap90());
  }
  const double r90 = stats::spearman(neg_alpha, ap90);
  const double r50 = stats::spearman(neg_alpha, ap50);
  const bool ok = r90 > 0.0 && r50 < 0.0;
  return {ok ? Verdict::pass : Verdict::fail,
          fmt("alpha 1.0..0.3, spearman(-alpha, AP90) = %+.3f (need > 0), spearman(-alpha, AP50) = %+.3f "
              "(need < 0); AP50 %.3f->%.3f, AP90 %.3f->%.3f",
              r90, r50, ap50.front(), ap50.back(), ap90.front(), ap90.back())};
}

Outcome ablation_gate() {
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto s = toy::ablation_suite(toy::TrainConfig{}, seeds, kAlphas);
  const auto n = seeds.size();
  const std::string detail = fmt(
      "%zu seeds, mean AP on/off/base = %.4f/%.4f/%.4f; on>off %zu/%zu (p=%.3f), off>base %zu/%zu (p=%.3f), "
      "base beats both %zu/%zu",
      n, s.mean_ap_propagated, s.mean_ap_detached, s.mean_ap_baseline, s.propagated_beats_detached, n,
      s.p_propagated_vs_detached, s.detached_beats_baseline, n, s.p_detached_vs_baseline,
      s.baseline_beats_both, n);
  if (s.hard_fail) return {Verdict::fail, detail};
  return {s.ordering_holds ? Verdict::pass : Verdict::soft_fail,
          detail + (s.ordering_holds ? "" : "; mean ordering on >= off >= base violated")};
}

Outcome truth_vs_eval_gate() {
  const auto f = scenario::cross_category_scene();
  const double t = iou_truth(f.c, f.gts), e = iou_eval(f.c, f.gts);
  return {t == 0.7 && e == 0.3 ? Verdict::pass : Verdict::fail,
          fmt("iou_truth = %g (want 0.7), iou_eval = %g (want 0.3), exact comparison", t, e)};
}

}  // namespace

int main() {
  run("target-iou-gradient", 1, target_gradient_gate);
  run("ap-oracle", 30, ap_oracle_gate);
  run("nms-invariants", 10, nms_gate);
  run("toy-gradient", 60, toy_gradient_gate);
  run("fusion-ordering", 120, fusion_ordering_gate);
  run("alpha-trend", 120, alpha_trend_gate);
  run("ablation-direction", 1800, ablation_gate);
  run("iou-truth-vs-eval", 1, truth_vs_eval_gate);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
