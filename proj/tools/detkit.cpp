// detkit command-line front end.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "detkit/confidence.hpp"
#include "detkit/evalmap.hpp"
#include "detkit/gradcheck.hpp"
#include "detkit/io.hpp"
#include "detkit/nms.hpp"
#include "detkit/simgen.hpp"
#include "detkit/toydet.hpp"

namespace fs = std::filesystem;
using namespace detkit;

namespace {

constexpr const char* kSweepCsvHeader = "alpha,AP,AP50,AP60,AP70,AP75,AP80,AP90";
constexpr const char* kEpochCsvHeader =
    "seed,variant,epoch,loss,cls,loc,iou,skipped,AP,AP50,AP75,AP90,iou_mae,iou_pearson";

std::uint64_t default_seed() {
  if (const char* env = std::getenv("DETKIT_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) {
        return v;
      }
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(std::string("DETKIT_SEED must be a non-negative integer, got '") + env + "'");
  }
  return 1;
}

void print_report(const EvalReport& r, std::ostream& out) {
  char line[128];
  out << "metric        value\n";
  auto row = [&](const char* name, double v) {
    std::snprintf(line, sizeof(line), "%-12s %7.4f\n", name, v);
    out << line;
  };
  row("AP", r.ap);
  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
    std::snprintf(line, sizeof(line), "AP@%.2f      %7.4f\n", kIouThresholds[t], r.ap_at_threshold[t]);
    out << line;
  }
  row("AP_small", r.ap_small);
  row("AP_medium", r.ap_medium);
  row("AP_large", r.ap_large);
  out << "categories   " << r.num_categories_evaluated << '\n';
}

std::string sweep_row(double alpha, const EvalReport& r) {
  char line[256];
  std::snprintf(line, sizeof(line), "%.2f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", alpha, r.ap, r.ap50(),
                r.ap60(), r.ap70(), r.ap75(), r.ap80(), r.ap90());
  return line;
}

void emit(const std::optional<std::string>& path, const std::string& text) {
  if (path) {
    write_file_atomic(*path, text);
  } else {
    std::cout << text;
  }
}

GroundTruthIouLookup lookup_for(const FusionConfig& fusion, const std::vector<GroundTruthObject>& gts) {
  return fusion.mode == FusionMode::fused_ground_truth_iou ? make_iou_truth_lookup(gts)
                                                           : GroundTruthIouLookup{};
}

SimConfig sim_config(const std::optional<std::string>& path, std::optional<std::uint64_t> seed) {
  SimConfig cfg = path ? sim_config_from_json(load_json(*path)) : SimConfig{};
  if (seed) {
    cfg.seed = *seed;
  } else if (!path || !load_json(*path).contains("seed")) {
    cfg.seed = default_seed();
  }
  return cfg;
}

// ---- subcommands ------------------------------------------------------------

struct EvalArgs {
  std::string annotations;
  std::string detections;
  double alpha = 0.5;
  std::string mode = "fused_predicted_iou";
  double nms_iou = 0.5;
  std::optional<std::string> scatter;
  std::optional<std::string> json_out;
};

int run_eval(const EvalArgs& a) {
  const auto ann = load_annotations(a.annotations);
  const auto gts = ann.ground_truths();
  const FusionConfig fusion{a.alpha, parse_fusion_mode(a.mode)};
  const auto fused = fuse_batch(load_detections(a.detections), fusion, lookup_for(fusion, gts));
  const auto kept = nms(fused, NmsConfig{a.nms_iou, std::nullopt});
  const auto report = evaluate(kept, gts);
  std::cout << "mode " << to_string(fusion.mode) << ", alpha " << fusion.alpha << ", nms-iou " << a.nms_iou
            << ", " << kept.size() << " of " << fused.size() << " detections kept\n";
  print_report(report, std::cout);
  if (a.scatter) {
    scatter_export(kept, gts, *a.scatter);
  }
  if (a.json_out) {
    write_file_atomic(*a.json_out, report_to_json(report).dump(2) + "\n");
  }
  return 0;
}

struct SimulateArgs {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out;
  double alpha = 0.5;
  std::string mode = "fused_predicted_iou";
  double nms_iou = 0.5;
  std::optional<std::string> annotations_out;
  std::optional<std::string> detections_out;
};

int run_simulate(const SimulateArgs& a) {
  const SimConfig cfg = sim_config(a.config, a.seed);
  const FusionConfig fusion{a.alpha, parse_fusion_mode(a.mode)};
  const NmsConfig nms_cfg{a.nms_iou, std::nullopt};
  const SimScene scene = generate(cfg);
  const EvalReport report = run_pipeline(scene, fusion, nms_cfg);

  nlohmann::json out;
  out["config"] = sim_config_to_json(cfg);
  out["fusion"] = {{"mode", std::string(to_string(fusion.mode))}, {"alpha", fusion.alpha}};
  out["nms_iou"] = a.nms_iou;
  out["num_images"] = scene.images.size();
  out["num_ground_truths"] = scene.ground_truths.size();
  out["num_detections"] = scene.detections.size();
  out["report"] = report_to_json(report);
  if (fusion.mode != FusionMode::score_only) {
    const auto mm = mismatch_demo(scene, fusion, nms_cfg);
    out["mismatch"] = {{"flips", mm.flips}, {"reverse_flips", mm.reverse_flips}};
  }
  write_file_atomic(a.out, out.dump(2) + "\n");
  if (a.annotations_out) {
    save_annotations(*a.annotations_out, annotation_file_from_scene(scene));
  }
  if (a.detections_out) {
    save_detections(*a.detections_out, scene.detections);
  }
  std::cout << "seed " << cfg.seed << ": " << scene.detections.size() << " detections, "
            << scene.ground_truths.size() << " ground truths\n";
  print_report(report, std::cout);
  return 0;
}

struct SweepArgs {
  std::vector<double> alphas{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3};
  std::string mode = "fused_predicted_iou";
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> annotations;
  std::optional<std::string> detections;
  double nms_iou = 0.5;
  std::optional<std::string> out;
};

int run_sweep(const SweepArgs& a) {
  const FusionMode mode = parse_fusion_mode(a.mode);
  std::vector<Detection> dets;
  std::vector<GroundTruthObject> gts;
  if (a.annotations || a.detections) {
    if (!a.annotations || !a.detections) {
      throw CLI::ValidationError("--annotations and --detections go together");
    }
    gts = load_annotations(*a.annotations).ground_truths();
    dets = load_detections(*a.detections);
  } else {
    SimScene scene = generate(sim_config(a.config, a.seed));
    dets = std::move(scene.detections);
    gts = std::move(scene.ground_truths);
  }
  std::ostringstream csv;
  csv << kSweepCsvHeader << '\n';
  const NmsConfig nms_cfg{a.nms_iou, std::nullopt};
  for (double alpha : a.alphas) {
    const FusionConfig fusion{alpha, mode};
    const auto report = evaluate(nms(fuse_batch(dets, fusion, lookup_for(fusion, gts)), nms_cfg), gts);
    csv << sweep_row(alpha, report) << '\n';
  }
  emit(a.out, csv.str());
  return 0;
}

struct GradCheckArgs {
  std::string module = "all";
  std::optional<std::uint64_t> seed;
};

int run_grad_check(const GradCheckArgs& a) {
  const std::uint64_t seed = a.seed.value_or(default_seed());
  std::vector<GateResult> results;
  auto add = [&](std::vector<GateResult> r) { results.insert(results.end(), r.begin(), r.end()); };
  if (a.module == "all" || a.module == "losses") add(loss_gates(seed));
  if (a.module == "all" || a.module == "geometry") add(geometry_gates(seed));
  if (a.module == "all" || a.module == "toydet") add(toydet_gates(seed));
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%s %-44s max_err=%.3e tol=%.0e checks=%zu %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.max_error, r.tolerance, r.checks, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

struct TrainToyArgs {
  std::optional<std::string> config;
  std::vector<std::uint64_t> seeds;
  std::vector<double> alphas{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3};
  std::optional<int> epochs;
  std::optional<std::string> out;
  std::optional<std::string> epoch_metrics;
  std::optional<std::string> checkpoint_dir;
};

int run_train_toy(const TrainToyArgs& a) {
  toy::TrainConfig cfg = a.config ? train_config_from_json(load_json(*a.config)) : toy::TrainConfig{};
  if (a.epochs) {
    cfg.epochs = *a.epochs;
    cfg.validate();
  }
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty()) {
    const std::uint64_t base = default_seed();
    for (std::uint64_t k = 0; k < 5; ++k) {
      seeds.push_back(base + k);
    }
  }
  const auto summary = toy::ablation_suite(cfg, seeds, a.alphas);
  emit(a.out, toy::ablation_csv(summary.rows));

  if (a.epoch_metrics) {
    std::ostringstream csv;
    csv << kEpochCsvHeader << '\n';
    char line[512];
    for (std::size_t i = 0; i < summary.rows.size(); ++i) {
      for (const auto& m : summary.histories[i]) {
        std::snprintf(line, sizeof(line), "%llu,%s,%d,%.6f,%.6f,%.6f,%.6f,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      static_cast<unsigned long long>(summary.rows[i].seed),
                      std::string(toy::to_string(summary.rows[i].variant)).c_str(), m.epoch, m.mean_loss,
                      m.mean_cls, m.mean_loc, m.mean_iou, m.skipped_scenes, m.eval.ap, m.eval.ap50(),
                      m.eval.ap75(), m.eval.ap90(), m.iou_mae, m.iou_pearson);
        csv << line;
      }
    }
    write_file_atomic(*a.epoch_metrics, csv.str());
  }
  if (a.checkpoint_dir) {
    fs::create_directories(*a.checkpoint_dir);
    for (std::size_t i = 0; i < summary.rows.size(); ++i) {
      toy::TrainConfig run_cfg = cfg;
      run_cfg.seed = summary.rows[i].seed;
      run_cfg.iou_loss = summary.rows[i].variant == toy::Variant::baseline ? IouLossKind::none : cfg.iou_loss;
      run_cfg.propagate_target_iou_gradient = summary.rows[i].variant == toy::Variant::iou_propagated;
      const auto name = "seed" + std::to_string(summary.rows[i].seed) + "_" +
                        std::string(toy::to_string(summary.rows[i].variant)) + ".ckpt";
      save_checkpoint(fs::path(*a.checkpoint_dir) / name, summary.params[i], run_cfg);
    }
  }

  std::fprintf(stderr, "mean AP: baseline %.4f, iou_detached %.4f, iou_propagated %.4f\n",
               summary.mean_ap_baseline, summary.mean_ap_detached, summary.mean_ap_propagated);
  std::fprintf(stderr, "propagated > detached in %zu/%zu seeds (sign test p=%.4f)\n",
               summary.propagated_beats_detached, seeds.size(), summary.p_propagated_vs_detached);
  std::fprintf(stderr, "detached > baseline in %zu/%zu seeds (sign test p=%.4f)\n",
               summary.detached_beats_baseline, seeds.size(), summary.p_detached_vs_baseline);
  std::fprintf(stderr, "ordering propagated >= detached >= baseline: %s\n",
               summary.ordering_holds ? "holds" : "does not hold");
  if (summary.hard_fail) {
    std::fprintf(stderr, "FAIL: baseline beats both IoU variants in %zu/%zu seeds\n", summary.baseline_beats_both,
                 seeds.size());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"detkit: IoU-aware detection confidence toolkit"};
  app.require_subcommand(1);
  app.footer("Environment: DETKIT_SEED sets the default seed when --seed is not given.");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Fuse, suppress and evaluate a detection file against annotations");
  eval->add_option("--annotations", ev.annotations, "COCO-like annotation JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--detections", ev.detections, "Detection JSON array")->required()->check(CLI::ExistingFile);
  eval->add_option("--alpha", ev.alpha, "Fusion exponent in [0, 1]")->capture_default_str();
  eval->add_option("--mode", ev.mode, "score_only | fused_predicted_iou | fused_ground_truth_iou")
      ->capture_default_str();
  eval->add_option("--nms-iou", ev.nms_iou, "NMS IoU threshold")->capture_default_str();
  eval->add_option("--scatter", ev.scatter, "Write per-detection scatter CSV");
  eval->add_option("--json", ev.json_out, "Write the report as JSON");
  eval->footer(std::string("Scatter CSV header: ") + kScatterHeader);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic benchmark and run the pipeline");
  simulate->add_option("--config", sim.config, "Simulator config JSON")->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "Overrides the config seed");
  simulate->add_option("--out", sim.out, "Report JSON")->required();
  simulate->add_option("--alpha", sim.alpha, "Fusion exponent in [0, 1]")->capture_default_str();
  simulate->add_option("--mode", sim.mode, "score_only | fused_predicted_iou | fused_ground_truth_iou")
      ->capture_default_str();
  simulate->add_option("--nms-iou", sim.nms_iou, "NMS IoU threshold")->capture_default_str();
  simulate->add_option("--annotations-out", sim.annotations_out, "Also write the scene's annotation JSON");
  simulate->add_option("--detections-out", sim.detections_out, "Also write the scene's detection JSON");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "AP table over a list of fusion exponents");
  sweep->add_option("--alphas", sw.alphas, "Comma-separated alphas")->delimiter(',')->capture_default_str();
  sweep->add_option("--mode", sw.mode, "fused_predicted_iou | fused_ground_truth_iou")->capture_default_str();
  sweep->add_option("--config", sw.config, "Simulator config JSON")->check(CLI::ExistingFile);
  sweep->add_option("--seed", sw.seed, "Simulator seed");
  sweep->add_option("--annotations", sw.annotations, "Evaluate files instead of a simulation")
      ->check(CLI::ExistingFile);
  sweep->add_option("--detections", sw.detections, "Detection JSON (with --annotations)")
      ->check(CLI::ExistingFile);
  sweep->add_option("--nms-iou", sw.nms_iou, "NMS IoU threshold")->capture_default_str();
  sweep->add_option("--out", sw.out, "CSV path (default stdout)");
  sweep->footer(std::string("CSV header: ") + kSweepCsvHeader);

  GradCheckArgs gc;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient gates; exit 1 on any failure");
  grad->add_option("--module", gc.module, "losses | geometry | toydet | all")
      ->check(CLI::IsMember({"losses", "geometry", "toydet", "all"}))
      ->capture_default_str();
  grad->add_option("--seed", gc.seed, "Random seed for the sampled points");

  TrainToyArgs tt;
  auto* train = app.add_subcommand("train-toy", "Train the toy detector ablation (baseline, detached, propagated)");
  train->add_option("--config", tt.config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--seeds", tt.seeds, "Comma-separated seeds (default: 5 seeds from DETKIT_SEED or 1)")
      ->delimiter(',');
  train->add_option("--alphas", tt.alphas, "Alphas searched per IoU variant")->delimiter(',')->capture_default_str();
  train->add_option("--epochs", tt.epochs, "Overrides the config epoch count");
  train->add_option("--out", tt.out, "Ablation CSV path (default stdout)");
  train->add_option("--epoch-metrics", tt.epoch_metrics, "Per-epoch metrics CSV");
  train->add_option("--checkpoint-dir", tt.checkpoint_dir, "Write one checkpoint per trained model");
  train->footer(std::string("Ablation CSV header: ") + toy::kAblationCsvHeader + "\nEpoch CSV header: " +
                kEpochCsvHeader);

  CLI11_PARSE(app, argc, argv);

  try {
    if (eval->parsed()) return run_eval(ev);
    if (simulate->parsed()) return run_simulate(sim);
    if (sweep->parsed()) return run_sweep(sw);
    if (grad->parsed()) return run_grad_check(gc);
    if (train->parsed()) return run_train_toy(tt);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
