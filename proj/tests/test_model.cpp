#include "raresum/grid_density.hpp"
#include "raresum/model.hpp"

#include <gtest/gtest.h>

using namespace raresum;

namespace {

ModelSpec gauss(double mu, double sigma, int d) {
  FamilyParams p;
  p.mu = mu;
  p.sigma = sigma;
  p.d = d;
  return builtin_model(Family::gaussian_mean, p);
}

ModelSpec expo(double rate) {
  FamilyParams p;
  p.rate = rate;
  return builtin_model(Family::exponential_mean, p);
}

ModelSpec gsq(double mu, double sigma) {
  FamilyParams p;
  p.mu = mu;
  p.sigma = sigma;
  return builtin_model(Family::gaussian_mean_and_square, p);
}

// Copy of a model with the analytic derivatives removed, forcing finite differences.
ModelSpec without_derivatives(ModelSpec m) {
  m.cumulant_gradient = nullptr;
  m.cumulant_hessian = nullptr;
  m.cumulant_third_contracted = nullptr;
  return m;
}

// Random interior tilt, kept well away from finite domain bounds.
Vec random_tilt(const ModelSpec& m, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  Vec t(m.s);
  for (int j = 0; j < m.s; ++j) {
    double x = u(rng);
    if (std::isfinite(m.cumulant_domain.upper[j])) x = std::min(x, 0.8 * m.cumulant_domain.upper[j]);
    t[j] = x;
  }
  return t;
}

std::vector<ModelSpec> all_families() { return {gauss(0.05, 1.0, 1), gauss(-0.3, 1.7, 3), expo(1.0), expo(2.5), gsq(0.0, 1.0), gsq(0.4, 0.8)}; }

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Model, MeanMapExamples) {
  EXPECT_NEAR(mean_map(gauss(0.05, 1, 1), Vec::Zero(1))[0], 0.05, 1e-15);
  EXPECT_NEAR(mean_map(gauss(0.05, 1, 1), Vec::Constant(1, 0.23))[0], 0.28, 1e-14);
  EXPECT_NEAR(mean_map(without_derivatives(gauss(0.05, 1, 1)), Vec::Constant(1, 0.23))[0], 0.28, 1e-8);
  EXPECT_NEAR(mean_map(expo(1.0), Vec::Constant(1, 0.5))[0], 2.0, 1e-14);
}

TEST(Model, ExponentialTiltedMeanMatchesMonteCarlo) {
  const ModelSpec m = expo(1.0);
  Rng rng(4);
  const Vec t = Vec::Constant(1, 0.5);
  double sum = 0.0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) sum += m.sample_tilted(t, rng)[0];
  // sd of the tilted law is 2
  EXPECT_NEAR(sum / N, 2.0, 4.0 * 2.0 / std::sqrt(N));
}

TEST(Model, LocalCumulantExamples) {
  const auto g = local_cumulants(gauss(0.0, 1.0, 1), Vec::Constant(1, 0.7));
  EXPECT_DOUBLE_EQ(g.covariance(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.third[0], 0.0);

  const auto e = local_cumulants(expo(1.0), Vec::Zero(1));
  EXPECT_NEAR(e.covariance(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(e.third[0], 2.0, 1e-14);
  const auto e_fd = local_cumulants(without_derivatives(expo(1.0)), Vec::Zero(1));
  EXPECT_NEAR(e_fd.third[0], 2.0, 1e-3);

  const auto s = local_cumulants(gsq(0.0, 1.0), Vec::Zero(2));
  EXPECT_NEAR(s.covariance(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(s.covariance(0, 1), 0.0, 1e-14);
  EXPECT_NEAR(s.covariance(1, 1), 2.0, 1e-14);
}

TEST(Model, SquareCovarianceMatchesMonteCarlo) {
  Rng rng(9);
  std::normal_distribution<double> normal;
  const int N = 400000;
  double s1 = 0, s2 = 0, s11 = 0, s12 = 0, s22 = 0;
  for (int i = 0; i < N; ++i) {
    const double x = normal(rng), y = x * x;
    s1 += x;
    s2 += y;
    s11 += x * x;
    s12 += x * y;
    s22 += y * y;
  }
  const double m1 = s1 / N, m2 = s2 / N;
  EXPECT_NEAR(s11 / N - m1 * m1, 1.0, 0.01);
  EXPECT_NEAR(s12 / N - m1 * m2, 0.0, 0.02);
  EXPECT_NEAR(s22 / N - m2 * m2, 2.0, 0.04);
}

TEST(Model, AnalyticDerivativesAgreeWithFiniteDifferences) {
  Rng rng(1);
  for (const auto& m : all_families()) {
    const ModelSpec fd = without_derivatives(m);
    for (int r = 0; r < 10; ++r) {
      const Vec t = random_tilt(m, rng);
      const Vec ga = mean_map(m, t), gf = mean_map(fd, t);
      const Mat ha = cumulant_hessian(m, t), hf = cumulant_hessian(fd, t);
      for (int j = 0; j < m.s; ++j) {
        EXPECT_LT(rel_diff(gf[j], ga[j]), 1e-5) << m.name;
        for (int l = 0; l < m.s; ++l) EXPECT_LT(rel_diff(hf(j, l), ha(j, l)), 1e-5) << m.name;
      }
      // Third derivatives come from differences of Hessians and are less accurate.
      const Vec ca = contracted_third(m, t), cf = contracted_third(fd, t);
      for (int j = 0; j < m.s; ++j) EXPECT_LT(rel_diff(cf[j], ca[j]), 1e-3) << m.name;
    }
  }
}

TEST(Model, CumulantVanishesAtZero) {
  for (const auto& m : all_families()) EXPECT_NEAR(cumulant(m, Vec::Zero(m.s)), 0.0, 1e-14) << m.name;
}

TEST(Model, MeanAtZeroMatchesMonteCarlo) {
  Rng rng(2);
  for (const auto& m : all_families()) {
    const Vec m0 = mean_map(m, Vec::Zero(m.s));
    const Mat k0 = cumulant_hessian(m, Vec::Zero(m.s));
    const int N = 100000;
    Vec sum = Vec::Zero(m.s);
    for (int i = 0; i < N; ++i) sum += m.statistic(m.sample_tilted(Vec::Zero(m.s), rng));
    for (int j = 0; j < m.s; ++j) EXPECT_NEAR(sum[j] / N, m0[j], 4.0 * std::sqrt(k0(j, j) / N)) << m.name;
  }
}

TEST(Model, ConvexityProbe) {
  Rng rng(3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& m : all_families()) {
    for (int r = 0; r < 100; ++r) {
      const Vec a = random_tilt(m, rng), b = random_tilt(m, rng);
      const double lam = unif(rng);
      const double lhs = cumulant(m, lam * a + (1 - lam) * b);
      const double rhs = lam * cumulant(m, a) + (1 - lam) * cumulant(m, b);
      EXPECT_LE(lhs, rhs + 1e-12) << m.name;
    }
  }
}

TEST(Model, HessianSymmetricPositiveDefinite) {
  Rng rng(5);
  for (const auto& m : all_families()) {
    for (int r = 0; r < 10; ++r) {
      const Mat h = cumulant_hessian(m, random_tilt(m, rng));
      EXPECT_LT((h - h.transpose()).norm(), 1e-12);
      EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat>(h).eigenvalues().minCoeff(), 0.0);
    }
  }
}

TEST(Model, TiltedDensityIntegratesToOne) {
  Rng rng(6);
  for (const auto& m : {gauss(0.05, 1, 1), expo(1.0), gsq(0.0, 1.0), gsq(0.4, 0.8)}) {
    for (int r = 0; r < 5; ++r) {
      const Vec t = random_tilt(m, rng);
      const double kt = cumulant(m, t);
      const auto [c, sc] = m.tilted_location(t);
      std::function<double(double)> lf = [&](double x) { return m.log_tilted_density(t, kt, Vec::Constant(1, x)); };
      const double lo = std::max(m.support_lower, c - 40 * sc), hi = c + 40 * sc;
      const double log_z = log_integral_simpson(lf, lo, hi, 0.0, 1e-10, 64);
      EXPECT_NEAR(std::exp(log_z), 1.0, 1e-6) << m.name;
    }
  }
}

TEST(Model, SquareFamilyDomain) {
  const ModelSpec m = gsq(0.0, 1.0);
  EXPECT_TRUE(m.cumulant_domain.contains((Vec(2) << 0.0, 0.49).finished()));
  EXPECT_FALSE(m.cumulant_domain.contains((Vec(2) << 0.0, 0.5).finished()));
  EXPECT_THROW(mean_map(m, (Vec(2) << 0.0, 0.6).finished()), DomainError);
  try {
    mean_map(m, (Vec(2) << 0.0, 0.6).finished());
  } catch (const DomainError& e) {
    EXPECT_EQ(e.coordinate(), 1u);
  }
}

TEST(Model, BuiltinValidation) {
  FamilyParams p;
  p.sigma = 0.0;
  EXPECT_THROW(builtin_model(Family::gaussian_mean, p), ConfigError);
  p = {};
  p.rate = -1.0;
  EXPECT_THROW(builtin_model(Family::exponential_mean, p), ConfigError);
  p = {};
  p.d = 2;
  EXPECT_THROW(builtin_model(Family::gaussian_mean_and_square, p), ConfigError);
  p = {};
  p.d = 0;
  EXPECT_THROW(builtin_model(Family::gaussian_mean, p), ConfigError);
  EXPECT_FALSE(parse_family("cauchy-mean"));
  EXPECT_EQ(*parse_family("gaussian-mean-and-square"), Family::gaussian_mean_and_square);
}

TEST(Model, GaussianCumulantClosedForm) {
  const ModelSpec m = gauss(0.0, 1.0, 3);
  const Vec t = (Vec(3) << 0.1, -0.4, 0.7).finished();
  EXPECT_NEAR(cumulant(m, t), 0.5 * t.squaredNorm(), 1e-15);
  EXPECT_NEAR(cumulant(gauss(0.05, 1.0, 1), Vec::Constant(1, 0.3)), 0.05 * 0.3 + 0.045, 1e-15);
}
