#include "detkit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace detkit {

namespace {

// Derivative of the overlap length [max(a_lo, b_lo), min(a_hi, b_hi)] with
// respect to a_lo and a_hi. Ties split the derivative evenly.
struct OverlapSlope {
  double lo;
  double hi;
};

OverlapSlope overlap_slope(double a_lo, double a_hi, double b_lo, double b_hi) {
  OverlapSlope s{0.0, 0.0};
  if (a_lo > b_lo) {
    s.lo = -1.0;
  } else if (a_lo == b_lo) {
    s.lo = -0.5;
  }
  if (a_hi < b_hi) {
    s.hi = 1.0;
  } else if (a_hi == b_hi) {
    s.hi = 0.5;
  }
  return s;
}

void require_non_degenerate(const Box& b, const char* what) {
  if (!b.non_degenerate()) {
    throw std::invalid_argument(std::string(what) + " box must have positive width and height");
  }
}

}  // namespace

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 <= x2 && y1 <= y2;
}

bool Box::non_degenerate() const { return valid() && x1 < x2 && y1 < y2; }

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) {
    return 0.0;
  }
  return iw * ih;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) {
    return 0.0;
  }
  return inter / uni;
}

BoxGradient iou_gradient(const Box& pred, const Box& gt) {
  const double iw = std::min(pred.x2, gt.x2) - std::max(pred.x1, gt.x1);
  const double ih = std::min(pred.y2, gt.y2) - std::max(pred.y1, gt.y1);
  if (iw <= 0.0 || ih <= 0.0) {
    return {0.0, 0.0, 0.0, 0.0};
  }
  const double inter = iw * ih;
  const double pw = pred.width();
  const double ph = pred.height();
  const double uni = pw * ph + gt.area() - inter;
  if (uni <= 0.0) {
    return {0.0, 0.0, 0.0, 0.0};
  }

  const OverlapSlope sx = overlap_slope(pred.x1, pred.x2, gt.x1, gt.x2);
  const OverlapSlope sy = overlap_slope(pred.y1, pred.y2, gt.y1, gt.y2);

  // d inter / d coord and d area(pred) / d coord for (x1, y1, x2, y2).
  const std::array<double, 4> d_inter{sx.lo * ih, sy.lo * iw, sx.hi * ih, sy.hi * iw};
  const std::array<double, 4> d_area{-ph, -pw, ph, pw};

  // IoU = I / U, U = A_pred + A_gt - I
  //   dIoU = (dI * U - I * (dA - dI)) / U^2 = (dI * (U + I) - I * dA) / U^2
  const double inv_u2 = 1.0 / (uni * uni);
  BoxGradient g{};
  for (int k = 0; k < 4; ++k) {
    g[k] = (d_inter[k] * (uni + inter) - inter * d_area[k]) * inv_u2;
  }
  return g;
}

RegressionOffsets encode(const Box& anchor, const Box& target) {
  require_non_degenerate(anchor, "anchor");
  require_non_degenerate(target, "target");
  const double aw = anchor.width();
  const double ah = anchor.height();
  return RegressionOffsets{
      (target.center_x() - anchor.center_x()) / aw,
      (target.center_y() - anchor.center_y()) / ah,
      std::log(target.width() / aw),
      std::log(target.height() / ah),
  };
}

Box decode(const Box& anchor, const RegressionOffsets& offsets) {
  require_non_degenerate(anchor, "anchor");
  const double aw = anchor.width();
  const double ah = anchor.height();
  const double cx = anchor.center_x() + offsets.dcx * aw;
  const double cy = anchor.center_y() + offsets.dcy * ah;
  const double half_w = 0.5 * aw * std::exp(offsets.dw);
  const double half_h = 0.5 * ah * std::exp(offsets.dh);
  return Box{cx - half_w, cy - half_h, cx + half_w, cy + half_h};
}

RegressionOffsets decode_backward(const Box& anchor, const RegressionOffsets& offsets,
                                  const BoxGradient& grad_box) {
  const double aw = anchor.width();
  const double ah = anchor.height();
  const double half_w = 0.5 * aw * std::exp(offsets.dw);
  const double half_h = 0.5 * ah * std::exp(offsets.dh);
  const auto& [gx1, gy1, gx2, gy2] = grad_box;
  return RegressionOffsets{
      aw * (gx1 + gx2),
      ah * (gy1 + gy2),
      half_w * (gx2 - gx1),
      half_h * (gy2 - gy1),
  };
}

Box clip(const Box& box, double width, double height) {
  auto clamp = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
  return Box{clamp(box.x1, width), clamp(box.y1, height), clamp(box.x2, width),
             clamp(box.y2, height)};
}

}  // namespace detkit
