#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "detkit/toydet.hpp"

namespace detkit {

struct GateResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t checks = 0;
  std::string detail;
};

// Central-difference step used by every gate.
inline constexpr double kFdStep = 1e-5;
// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kRelativeErrorFloor = 1e-5;

double relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor);

std::vector<GateResult> loss_gates(std::uint64_t seed);
std::vector<GateResult> geometry_gates(std::uint64_t seed);

// Tiny 2x2-cell, two-anchor-type scene (8 anchors) used by the toy gate.
toy::TrainConfig tiny_gradcheck_config();

// Full-parameter finite-difference check of ToyDetector::backward. With
// propagation off the numeric side holds the target IoUs fixed at their
// base values.
GateResult toydet_gate(bool propagate_target_iou_gradient, std::uint64_t seed,
                       IouLossKind kind = IouLossKind::bce);
std::vector<GateResult> toydet_gates(std::uint64_t seed);

}  // namespace detkit
