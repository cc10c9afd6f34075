#include "raresum/grid_density.hpp"

#include <gtest/gtest.h>

using namespace raresum;

TEST(GridDensity, SimpsonNormalizesGaussian) {
  std::function<double(double)> lf = [](double x) { return -0.5 * (x - 1.0) * (x - 1.0) / 4.0; };
  const double log_z = log_integral_simpson(lf, -30.0, 30.0, 0.0);
  EXPECT_NEAR(log_z, 0.5 * std::log(2 * std::numbers::pi * 4.0), 1e-9);
}

TEST(GridDensity, BracketFindsNarrowPeakFarFromHint) {
  std::function<double(double)> lf = [](double x) { return -0.5 * (x - 50.0) * (x - 50.0) / 1e-4; };
  const auto [lo, hi] = bracket_support(lf, 0.0, 1.0, kNegInf, kInf);
  EXPECT_LT(lo, 50.0 - 0.05);
  EXPECT_GT(hi, 50.0 + 0.05);
  EXPECT_LT(hi - lo, 1.0);
}

TEST(GridDensity, RespectsSupport) {
  std::function<double(double)> lf = [](double x) { return x < 0 ? kNegInf : -2.0 * x; };
  const auto g = make_grid_density(lf, 0.5, 0.5, 0.0, kInf);
  EXPECT_GE(g.lower(), 0.0);
  EXPECT_NEAR(g.log_normalizer(), std::log(0.5), 1e-8);
  EXPECT_NEAR(g.log_normalizer_grid(), std::log(0.5), 1e-4);
  Rng rng(31);
  double sum = 0.0;
  const int N = 100000;
  for (int i = 0; i < N; ++i) {
    const double x = g.sample(rng);
    ASSERT_GE(x, 0.0);
    sum += x;
  }
  EXPECT_NEAR(sum / N, 0.5, 4 * 0.5 / std::sqrt(N));
}

TEST(GridDensity, SampleMomentsOfSkewedDensity) {
  // Gamma(3, 1): mean 3, variance 3
  std::function<double(double)> lf = [](double x) { return x <= 0 ? kNegInf : 2.0 * std::log(x) - x; };
  const auto g = make_grid_density(lf, 3.0, 1.7, 0.0, kInf);
  EXPECT_NEAR(g.log_normalizer(), std::log(2.0), 1e-8);
  Rng rng(32);
  double s1 = 0.0, s2 = 0.0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double x = g.sample(rng);
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / N;
  EXPECT_NEAR(mean, 3.0, 4 * std::sqrt(3.0 / N));
  EXPECT_NEAR(s2 / N - mean * mean, 3.0, 0.05);
  EXPECT_NEAR(g.log_density(2.0), 2.0 * std::log(2.0) - 2.0 - std::log(2.0), 1e-8);
}
