#include <gtest/gtest.h>

#include "detkit/gradcheck.hpp"

using namespace detkit;

TEST(RelativeError, Floor) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_NEAR(relative_error(2.0, 1.0), 0.5, 1e-15);
  EXPECT_NEAR(relative_error(1e-9, 0.0), 1e-4, 1e-15);
}

TEST(Gates, LossesPass) {
  for (const auto& g : loss_gates(1)) {
    EXPECT_TRUE(g.passed) << g.name << " " << g.max_error << " " << g.detail;
    EXPECT_GT(g.checks, 0u) << g.name;
  }
}

TEST(Gates, GeometryPass) {
  for (const auto& g : geometry_gates(1)) {
    EXPECT_TRUE(g.passed) << g.name << " " << g.max_error << " " << g.detail;
    EXPECT_GT(g.checks, 0u) << g.name;
  }
}

TEST(Gates, ToyDetectorPass) {
  const auto gates = toydet_gates(2);
  EXPECT_EQ(gates.size(), 4u);
  for (const auto& g : gates) EXPECT_TRUE(g.passed) << g.name << " " << g.max_error << " " << g.detail;
}
