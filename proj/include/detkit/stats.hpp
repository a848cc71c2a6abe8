#pragma once

#include <cstddef>
#include <span>

namespace detkit::stats {

double mean(std::span<const double> x);

// Pearson correlation; 0 when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

// One-sided exact sign test: P(X >= wins) for X ~ Binomial(trials, 1/2).
double sign_test_p_value(std::size_t wins, std::size_t trials);

}  // namespace detkit::stats
