#include "detkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace detkit {

namespace {

class Tracker {
 public:
  Tracker(std::string name, double tolerance) {
    result_.name = std::move(name);
    result_.tolerance = tolerance;
    result_.passed = true;
  }

  void check(double error, const std::string& where) {
    ++result_.checks;
    if (std::isnan(error) || error > result_.max_error) {
      result_.max_error = std::isnan(error) ? INFINITY : error;
      worst_ = where;
    }
    if (!(error <= result_.tolerance)) {
      result_.passed = false;
    }
  }

  GateResult finish() {
    if (!worst_.empty()) {
      result_.detail = "worst at " + worst_;
    }
    return result_;
  }

 private:
  GateResult result_;
  std::string worst_;
};

template <class F>
double central_difference(F&& f, double x, double h = kFdStep) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

Box random_box(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> pos(lo, hi);
  std::uniform_real_distribution<double> size(2.0, 0.5 * (hi - lo));
  const double x = pos(rng);
  const double y = pos(rng);
  return Box::from_xywh(x, y, size(rng), size(rng));
}

// Minimum distance between any pair of parallel edges, for skipping FD
// points that straddle a kink.
double edge_gap(const Box& a, const Box& b) {
  const double xs[] = {a.x1, a.x2, b.x1, b.x2};
  const double ys[] = {a.y1, a.y2, b.y1, b.y2};
  double gap = INFINITY;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      gap = std::min({gap, std::abs(xs[i] - xs[j]), std::abs(ys[i] - ys[j])});
    }
  }
  return gap;
}

LossBatch random_batch(std::mt19937_64& rng, std::size_t n, int num_classes) {
  std::uniform_real_distribution<double> prob(0.02, 0.98);
  std::uniform_real_distribution<double> off(-0.8, 0.8);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  LossBatch batch;
  for (std::size_t i = 0; i < n; ++i) {
    AnchorRecord r;
    const int kind = static_cast<int>(i % 3);
    r.label = kind == 0 ? AnchorLabel::positive : kind == 1 ? AnchorLabel::negative : AnchorLabel::ignore;
    r.target_class = static_cast<int>(rng() % static_cast<std::uint64_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
      r.class_probs.push_back(prob(rng));
    }
    r.pred_offsets = {off(rng), off(rng), off(rng), off(rng)};
    r.target_offsets = {off(rng), off(rng), off(rng), off(rng)};
    r.pred_iou = unit(rng);
    r.target_iou = unit(rng);
    batch.records.push_back(std::move(r));
  }
  return batch;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

std::vector<GateResult> loss_gates(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> inner(0.01, 0.99);
  std::vector<GateResult> out;

  {
    Tracker t("losses.iou_bce_target_gradient", 1e-6);
    for (int i = 0; i < 1000; ++i) {
      const double q = inner(rng);
      const double target = inner(rng);
      const double numeric = central_difference([&](double x) { return bce(q, x); }, target);
      std::ostringstream where;
      where << "pred_iou=" << q;
      t.check(std::abs(iou_bce_grad_wrt_target(q) - numeric), where.str());
    }
    t.check(std::abs(iou_bce_grad_wrt_target(0.5)), "pred_iou=0.5 (must be exactly 0)");
    out.push_back(t.finish());
  }

  {
    Tracker t("losses.scalar_terms", 1e-6);
    const FocalParams focal;
    for (int i = 0; i < 500; ++i) {
      const double p = inner(rng);
      for (bool pos : {true, false}) {
        const double numeric = central_difference([&](double x) { return focal_term(x, pos, focal); }, p);
        t.check(relative_error(focal_term_grad(p, pos, focal), numeric), "focal p=" + std::to_string(p));
      }
      const double target = inner(rng);
      const double numeric = central_difference([&](double x) { return bce(x, target); }, p);
      t.check(relative_error(bce_grad_wrt_pred(p, target), numeric), "bce q=" + std::to_string(p));
      double x = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
      for (double beta : {1.0, 1.0 / 9.0}) {
        if (std::abs(std::abs(x) - beta) < 1e-3) {
          continue;
        }
        const double n = central_difference([&](double v) { return smooth_l1(v, beta); }, x);
        t.check(relative_error(smooth_l1_grad(x, beta), n), "smooth_l1 x=" + std::to_string(x));
      }
    }
    out.push_back(t.finish());
  }

  for (IouLossKind kind : {IouLossKind::bce, IouLossKind::l2}) {
    Tracker t("losses.total_loss_gradients." + std::string(to_string(kind)), 1e-6);
    const FocalParams focal;
    const double beta = 1.0 / 9.0;
    for (int trial = 0; trial < 20; ++trial) {
      LossBatch batch = random_batch(rng, 9, 3);
      const auto g = total_loss_gradients(batch, focal, beta, kind);
      auto perturb = [&](double& slot, double analytic, const std::string& where) {
        const double saved = slot;
        const double numeric = central_difference(
            [&](double v) {
              slot = v;
              return total_loss(batch, focal, beta, kind);
            },
            saved);
        slot = saved;
        t.check(relative_error(analytic, numeric), where);
      };
      for (std::size_t i = 0; i < batch.records.size(); ++i) {
        auto& r = batch.records[i];
        for (std::size_t c = 0; c < r.class_probs.size(); ++c) {
          perturb(r.class_probs[c], g.d_class_probs[i][c], "record " + std::to_string(i) + " prob");
        }
        auto offs = r.pred_offsets.as_array();
        for (int m = 0; m < 4; ++m) {
          if (std::abs(std::abs(offs[m] - r.target_offsets.as_array()[m]) - beta) < 1e-3) {
            continue;
          }
          const double numeric = central_difference(
              [&](double v) {
                auto tmp = offs;
                tmp[m] = v;
                r.pred_offsets = RegressionOffsets::from_array(tmp);
                return total_loss(batch, focal, beta, kind);
              },
              offs[m]);
          r.pred_offsets = RegressionOffsets::from_array(offs);
          t.check(relative_error(g.d_pred_offsets[i][m], numeric), "record " + std::to_string(i) + " offset");
        }
        perturb(r.pred_iou, g.d_pred_iou[i], "record " + std::to_string(i) + " pred_iou");
        perturb(r.target_iou, g.d_target_iou[i], "record " + std::to_string(i) + " target_iou");
      }
    }
    out.push_back(t.finish());
  }
  return out;
}

std::vector<GateResult> geometry_gates(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GateResult> out;

  {
    Tracker t("geometry.iou_gradient", 1e-6);
    int done = 0;
    while (done < 1000) {
      const Box gt = random_box(rng, 0.0, 50.0);
      const Box pred = random_box(rng, 0.0, 50.0);
      if (edge_gap(pred, gt) < 1e-3) {
        continue;
      }
      ++done;
      const auto g = iou_gradient(pred, gt);
      double coords[4] = {pred.x1, pred.y1, pred.x2, pred.y2};
      for (int k = 0; k < 4; ++k) {
        const double numeric = central_difference(
            [&](double v) {
              double c[4] = {coords[0], coords[1], coords[2], coords[3]};
              c[k] = v;
              return iou(Box{c[0], c[1], c[2], c[3]}, gt);
            },
            coords[k]);
        t.check(std::abs(g[k] - numeric), "coordinate " + std::to_string(k));
      }
    }
    out.push_back(t.finish());
  }

  {
    Tracker t("geometry.decode_backward", 1e-6);
    std::uniform_real_distribution<double> off(-0.5, 0.5);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const Box anchor = random_box(rng, 0.0, 50.0);
      const std::array<double, 4> o{off(rng), off(rng), off(rng), off(rng)};
      const BoxGradient gb{unit(rng), unit(rng), unit(rng), unit(rng)};
      auto objective = [&](const std::array<double, 4>& v) {
        const Box b = decode(anchor, RegressionOffsets::from_array(v));
        return gb[0] * b.x1 + gb[1] * b.y1 + gb[2] * b.x2 + gb[3] * b.y2;
      };
      const auto analytic = decode_backward(anchor, RegressionOffsets::from_array(o), gb).as_array();
      for (int k = 0; k < 4; ++k) {
        const double numeric = central_difference(
            [&](double v) {
              auto tmp = o;
              tmp[k] = v;
              return objective(tmp);
            },
            o[k]);
        t.check(relative_error(analytic[k], numeric), "offset " + std::to_string(k));
      }
    }
    out.push_back(t.finish());
  }
  return out;
}

toy::TrainConfig tiny_gradcheck_config() {
  toy::TrainConfig cfg;
  cfg.scene.grid_width = 2;
  cfg.scene.grid_height = 2;
  cfg.scene.cell_size = 12.0;
  cfg.scene.objects_per_scene = {1, 2};
  cfg.scene.min_object_size = 8.0;
  cfg.scene.max_object_size = 20.0;
  cfg.anchors.sizes = {12.0, 20.0};
  cfg.anchors.aspect_ratios = {1.0};
  cfg.neighborhood_radius = 1;
  cfg.hidden_units = 4;
  cfg.init_scale = 0.3;
  cfg.train_scenes = 1;
  cfg.eval_scenes = 1;
  return cfg;
}

GateResult toydet_gate(bool propagate, std::uint64_t seed, IouLossKind kind) {
  const toy::TrainConfig cfg = tiny_gradcheck_config();
  const toy::ToyDetector det(cfg);
  toy::ToyModelParams params = toy::init_params(det, seed);
  // Offsets away from zero.
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (double& v : params.values) {
    v += normal(rng) * 0.5;
  }

  toy::ToyScene scene;
  std::vector<double> frozen;
  for (std::uint64_t attempt = 0;; ++attempt) {
    scene = toy::render_scene(cfg.scene, seed * 7919 + attempt, 0);
    if (toy::assign(det.anchors(), scene.objects, cfg.positive_threshold, cfg.negative_threshold)
            .num_positive() > 0) {
      break;
    }
  }
  frozen = det.target_ious(params, scene);

  const toy::BackwardOptions opts{propagate, kind};
  det.backward(params, scene, opts);
  const std::vector<double> analytic = params.gradient;
  const std::span<const double> fixed =
      propagate ? std::span<const double>{} : std::span<const double>(frozen);

  Tracker t(std::string("toydet.backward.") + (propagate ? "propagated" : "detached") + "." +
                std::string(to_string(kind)),
            1e-4);
  for (std::size_t k = 0; k < params.values.size(); ++k) {
    const double saved = params.values[k];
    params.values[k] = saved + kFdStep;
    const double up = det.loss(params, scene, opts, fixed).value().total;
    params.values[k] = saved - kFdStep;
    const double down = det.loss(params, scene, opts, fixed).value().total;
    params.values[k] = saved;
    const double numeric = (up - down) / (2.0 * kFdStep);
    t.check(relative_error(analytic[k], numeric), "parameter " + std::to_string(k));
  }
  auto result = t.finish();
  result.detail += (result.detail.empty() ? "" : "; ") + std::to_string(det.anchors().size()) +
                   " anchors, " + std::to_string(params.values.size()) + " parameters";
  return result;
}

std::vector<GateResult> toydet_gates(std::uint64_t seed) {
  return {toydet_gate(false, seed), toydet_gate(true, seed), toydet_gate(false, seed, IouLossKind::l2),
          toydet_gate(true, seed, IouLossKind::l2)};
}

}  // namespace detkit
