#pragma once

#include <array>

namespace detkit {

// Axis-aligned rectangle in continuous image coordinates, corner form.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  // x1 <= x2 and y1 <= y2, all coordinates finite.
  bool valid() const;
  // Valid with strictly positive width and height.
  bool non_degenerate() const;

  static Box from_xywh(double x, double y, double w, double h) {
    return Box{x, y, x + w, y + h};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

// Encoded regression target relative to an anchor: center deltas normalized
// by anchor size, log width/height ratios. No variance scaling.
struct RegressionOffsets {
  double dcx = 0.0;
  double dcy = 0.0;
  double dw = 0.0;
  double dh = 0.0;

  std::array<double, 4> as_array() const { return {dcx, dcy, dw, dh}; }
  static RegressionOffsets from_array(const std::array<double, 4>& v) {
    return {v[0], v[1], v[2], v[3]};
  }

  friend bool operator==(const RegressionOffsets&, const RegressionOffsets&) = default;
};

// Gradient with respect to (x1, y1, x2, y2).
using BoxGradient = std::array<double, 4>;

double intersection_area(const Box& a, const Box& b);

// Intersection over union. Zero when the union has zero area.
double iou(const Box& a, const Box& b);

// d iou(pred, gt) / d pred. Piecewise analytic; zero where the intersection
// is empty. Where a predicted edge coincides with a ground-truth edge the
// one-sided derivatives are averaged, which is the limit of a central
// difference.
BoxGradient iou_gradient(const Box& pred, const Box& gt);

// Throws std::invalid_argument on a degenerate anchor or target.
RegressionOffsets encode(const Box& anchor, const Box& target);
// Throws std::invalid_argument on a degenerate anchor.
Box decode(const Box& anchor, const RegressionOffsets& offsets);

// Pulls a box-space gradient back through decode to offset space.
RegressionOffsets decode_backward(const Box& anchor, const RegressionOffsets& offsets,
                                  const BoxGradient& grad_box);

// Clips to [0, width] x [0, height].
Box clip(const Box& box, double width, double height);

}  // namespace detkit
