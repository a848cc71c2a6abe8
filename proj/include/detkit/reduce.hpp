#pragma once

#include <span>

namespace detkit {

// Fixed-order pairwise summation. The result depends only on the input
// sequence, not on the thread count.
double pairwise_sum(std::span<const double> values);

}  // namespace detkit
