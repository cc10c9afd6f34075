#include "raresum/grid_density.hpp"
#include "raresum/pathgen.hpp"

#include <gtest/gtest.h>

using namespace raresum;

namespace {

ModelSpec gauss(double mu, int d = 1) {
  FamilyParams p;
  p.mu = mu;
  p.d = d;
  return builtin_model(Family::gaussian_mean, p);
}

ModelSpec expo() { return builtin_model(Family::exponential_mean, {}); }
ModelSpec gsq() { return builtin_model(Family::gaussian_mean_and_square, {}); }

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * (x - mean) * (x - mean) / var;
}

// log density of N(mean, cov) at x, independent of the library's linear algebra helpers.
double mvn_logpdf(const Vec& x, const Vec& mean, const Mat& cov) {
  const Eigen::LLT<Mat> llt(cov);
  const Vec z = llt.matrixL().solve(x - mean);
  const double log_det = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (x.size() * kLog2Pi + log_det + z.squaredNorm());
}

}  // namespace

TEST(PathGen, SelectK) {
  EXPECT_EQ(select_k(100, KMode::default_rule), 90);
  EXPECT_EQ(select_k(100, KMode::gaussian_exact), 99);
  EXPECT_EQ(select_k(100, KMode::manual, 1), 1);
  EXPECT_EQ(select_k(10, KMode::default_rule), 6);
  EXPECT_THROW(select_k(100, KMode::manual, 100), ConfigError);
  EXPECT_THROW(select_k(100, KMode::manual, 0), ConfigError);
  EXPECT_THROW(select_k(2, KMode::default_rule), ConfigError);
}

TEST(PathGen, StepParamsExamples) {
  const ModelSpec m = gauss(0.05);
  const Vec v = Vec::Constant(1, 0.28);
  const auto p0 = step_params(m, v, 0, Vec::Zero(1), 100);
  EXPECT_NEAR(p0.m_target[0], 0.28, 1e-14);
  EXPECT_NEAR(p0.t_i[0], 0.23, 1e-12);
  EXPECT_NEAR(p0.alpha[0], p0.t_i[0], 1e-15);  // no skewness
  EXPECT_NEAR(p0.beta(0, 0), 99.0, 1e-12);

  const auto p50 = step_params(m, v, 50, Vec::Constant(1, -4.5), 100);
  EXPECT_NEAR(p50.m_target[0], 0.65, 1e-14);
  EXPECT_NEAR(p50.t_i[0], 0.60, 1e-12);
  EXPECT_NEAR(p50.beta(0, 0), 49.0, 1e-12);

  const auto lit = step_params(m, v, 0, Vec::Zero(1), 100, Variant::paper_literal);
  EXPECT_EQ(lit.kind, StepKind::tilted);
  EXPECT_THROW(step_params(m, v, 99, Vec::Zero(1), 100), ConfigError);
}

TEST(PathGen, SkewCorrectionForExponential) {
  const ModelSpec m = expo();
  const auto p = step_params(m, Vec::Constant(1, 2.0), 0, Vec::Zero(1), 11);
  // t = 0.5, kappa = 4, gamma = 16: alpha = t + gamma / (2 kappa^2 (n - 1))
  EXPECT_NEAR(p.t_i[0], 0.5, 1e-10);
  EXPECT_NEAR(p.alpha[0], 0.5 + 16.0 / (2.0 * 16.0 * 10.0), 1e-8);
  EXPECT_NEAR(p.beta(0, 0), 40.0, 1e-8);
}

TEST(PathGen, FirstStepIsGaussianConditional) {
  // n = 3, v = 0.5: X_1 given mean 0.5 is N(0.5, 2/3)
  const ModelSpec m = gauss(0.0);
  auto params = step_params(m, Vec::Constant(1, 0.5), 0, Vec::Zero(1), 3);
  const StepKernel kernel(m, params);
  for (double x : {-1.0, 0.0, 0.5, 1.7}) {
    EXPECT_NEAR(kernel.log_density(Vec::Constant(1, x)), normal_logpdf(x, 0.5, 2.0 / 3.0), 1e-12);
  }
  Rng rng(41);
  const int N = 100000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < N; ++i) {
    const double x = kernel.sample(rng)[0];
    s1 += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s1 / N, 0.5, 4.0 * std::sqrt(2.0 / 3.0 / N));
  EXPECT_NEAR(s2 / N - (s1 / N) * (s1 / N), 2.0 / 3.0, 0.02);
}

TEST(PathGen, TwoPointPath) {
  // n = 2, k = 1: y_1 ~ N(v, 1/2), y_2 ~ N(2v - y_1, 1)
  const ModelSpec m = gauss(0.3);
  const Vec v = Vec::Constant(1, 0.4);
  Rng rng(42);
  const auto path = sample_path(m, v, 2, 1, Variant::uniform_step, rng);
  ASSERT_EQ(path.points.size(), 2u);
  const double y1 = path.points[0][0], y2 = path.points[1][0];
  EXPECT_NEAR(path.log_g_head, normal_logpdf(y1, 0.4, 0.5), 1e-12);
  EXPECT_NEAR(path.log_g, normal_logpdf(y1, 0.4, 0.5) + normal_logpdf(y2, 0.8 - y1, 1.0), 1e-12);
  EXPECT_NEAR(path.log_p, normal_logpdf(y1, 0.3, 1.0) + normal_logpdf(y2, 0.3, 1.0), 1e-12);
}

TEST(PathGen, LargeRemainderApproachesTiltedLaw) {
  // With many points left the Gaussian factor flattens and the step tends to pi^{m}.
  const ModelSpec m = expo();
  auto params = step_params(m, Vec::Constant(1, 2.0), 0, Vec::Zero(1), 100000001);
  const StepKernel kernel(m, params);
  const StepKernel tilted(m, params.t_i);
  for (double x : {0.1, 1.0, 3.0, 8.0}) {
    EXPECT_NEAR(kernel.log_density(Vec::Constant(1, x)), tilted.log_density(Vec::Constant(1, x)), 1e-6);
  }
}

TEST(PathGen, GenericStepsNormalize) {
  for (const ModelSpec& m : {expo(), gsq()}) {
    const Vec v = m.s == 1 ? Vec::Constant(1, 1.6) : (Vec(2) << 0.4, 1.3).finished();
    Rng rng(43);
    const auto path = sample_path(m, v, 20, 10, Variant::uniform_step, rng);
    Vec u = Vec::Zero(m.s);
    for (int i = 0; i < 10; ++i) {
      auto params = step_params(m, v, i, u, 20);
      const StepKernel kernel(m, params, false);
      std::function<double(double)> lf = [&](double x) { return kernel.log_density(Vec::Constant(1, x)); };
      const double lo = std::isfinite(m.support_lower) ? m.support_lower : -30.0;
      const double log_z = log_integral_simpson(lf, lo, 60.0, 0.0, 1e-11, 256);
      EXPECT_NEAR(std::exp(log_z), 1.0, 1e-6) << m.name << " step " << i;
      u += m.statistic(path.points[static_cast<std::size_t>(i)]);
    }
  }
}

TEST(PathGen, GaussianHeadIsExactConditional) {
  // X_1..X_{n-1} given mean v: mean v, covariance I - 11'/n.
  for (int n : {3, 10}) {
    const ModelSpec m = gauss(0.05);
    Rng rng(44);
    for (int r = 0; r < 20; ++r) {
      const Vec v = Vec::Constant(1, 0.1 * r - 0.7);
      const auto path = sample_path(m, v, n, n - 1, Variant::uniform_step, rng);
      Vec head(n - 1);
      for (int i = 0; i < n - 1; ++i) head[i] = path.points[static_cast<std::size_t>(i)][0];
      const Mat cov = Mat::Identity(n - 1, n - 1) - Mat::Constant(n - 1, n - 1, 1.0 / n);
      EXPECT_NEAR(path.log_g_head, mvn_logpdf(head, Vec::Constant(n - 1, v[0]), cov), 1e-8) << "n = " << n;
    }
  }
}

TEST(PathGen, GaussianPathMeanTracksTarget) {
  const ModelSpec m = gauss(0.05);
  const Vec v = Vec::Constant(1, 0.28);
  Rng rng(45);
  const int N = 10000, n = 100;
  double s1 = 0.0, s2 = 0.0;
  for (int r = 0; r < N; ++r) {
    const double mean = sample_path(m, v, n, 90, Variant::uniform_step, rng).sample_mean()[0];
    s1 += mean;
    s2 += mean * mean;
  }
  const double avg = s1 / N, sd = std::sqrt(s2 / N - avg * avg);
  EXPECT_NEAR(avg, 0.28, 4.0 * sd / std::sqrt(N));
  // Tail of n - k points drawn around the corrected target: sd of the mean is sqrt(n - k) / n.
  EXPECT_NEAR(sd, std::sqrt(10.0) / n, 0.1 * std::sqrt(10.0) / n);
}

TEST(PathGen, ExponentialPathMeanTracksTarget) {
  const ModelSpec m = expo();
  const Vec v = Vec::Constant(1, 1.5);
  Rng rng(46);
  const int N = 1000, n = 30;
  double s1 = 0.0, s2 = 0.0;
  for (int r = 0; r < N; ++r) {
    const double mean = sample_path(m, v, n, select_k(n, KMode::default_rule), Variant::uniform_step, rng).sample_mean()[0];
    s1 += mean;
    s2 += mean * mean;
  }
  const double avg = s1 / N, sd = std::sqrt(s2 / N - avg * avg);
  EXPECT_NEAR(avg, 1.5, 4.0 * sd / std::sqrt(N));
}

TEST(PathGen, VariantsDifferOnlyThroughFirstStepAndCentring) {
  // Both variants target the same m_{i,n}; their Gaussian factor means differ by
  // m_{i,n} - v, which vanishes when the partial sum sits on its expected value.
  const ModelSpec m = gauss(0.05);
  const Vec v = Vec::Constant(1, 0.28);
  for (int i = 1; i < 50; i += 7) {
    const Vec on_track = Vec::Constant(1, 0.28 * i);
    const auto a = step_params(m, v, i, on_track, 100, Variant::uniform_step);
    const auto b = step_params(m, v, i, on_track, 100, Variant::paper_literal);
    EXPECT_NEAR(a.gauss_mean[0], b.gauss_mean[0], 1e-12);
    const Vec off = on_track + Vec::Constant(1, 1.0);
    const auto c = step_params(m, v, i, off, 100, Variant::uniform_step);
    const auto e = step_params(m, v, i, off, 100, Variant::paper_literal);
    EXPECT_NEAR(c.gauss_mean[0] - e.gauss_mean[0], -1.0 / (100 - i), 1e-12);
  }
}

TEST(PathGen, TiltedSampler) {
  // The sampler keeps a reference to its model.
  const ModelSpec gm = gauss(0.05), em = expo();
  const TiltedSampler g(gm, Vec::Constant(1, 0.28));
  EXPECT_NEAR(g.t()[0], 0.23, 1e-12);
  EXPECT_NEAR(g.log_density(Vec::Constant(1, 0.28)), normal_logpdf(0.28, 0.28, 1.0), 1e-12);

  const TiltedSampler e(em, Vec::Constant(1, 2.0));
  EXPECT_NEAR(e.log_density(Vec::Constant(1, 1.0)), std::log(0.5) - 0.5, 1e-10);
  Rng rng(47);
  const int N = 100000;
  double s = 0.0;
  for (int i = 0; i < N; ++i) s += e.sample(rng)[0];
  EXPECT_NEAR(s / N, 2.0, 4.0 * 2.0 / std::sqrt(N));
}

TEST(PathGen, GaussianFormMatchesRecursiveEvaluation) {
  for (Variant variant : {Variant::uniform_step, Variant::paper_literal}) {
    const ModelSpec m = gauss(0.05, 2);
    Rng rng(48);
    const int n = 12, k = 8;
    const auto path = sample_path(m, Vec::Constant(2, 0.3), n, k, variant, rng);
    const GaussianPathForm form(m, n, k, variant, path.points);
    for (double a : {-0.4, 0.0, 0.3, 0.9}) {
      const Vec v = (Vec(2) << a, 0.5 - a).finished();
      EXPECT_NEAR(form.log_density(v), path_log_density(m, v, n, k, variant, path.points).total(), 1e-8)
          << to_string(variant);
    }
  }
}

TEST(PathGen, SampledDensityMatchesEvaluation) {
  for (const ModelSpec& m : {gauss(0.05), expo(), gsq()}) {
    const Vec v = m.s == 1 ? Vec::Constant(1, m.name == "exponential-mean" ? 1.8 : 0.3) : (Vec(2) << 0.3, 1.2).finished();
    Rng rng(49);
    for (Variant variant : {Variant::uniform_step, Variant::paper_literal}) {
      // Paths whose late targets leave the attainable range abort; draw until one completes.
      std::optional<PathSample> drawn;
      for (int attempt = 0; attempt < 50 && !drawn; ++attempt) {
        try {
          drawn = sample_path(m, v, 25, 20, variant, rng);
        } catch (const PathAbort&) {
        }
      }
      ASSERT_TRUE(drawn) << m.name;
      const PathSample& path = *drawn;
      const auto dens = path_log_density(m, v, 25, 20, variant, path.points);
      EXPECT_NEAR(dens.head, path.log_g_head, 1e-9 * std::max(1.0, std::abs(path.log_g_head))) << m.name;
      EXPECT_NEAR(dens.total(), path.log_g, 1e-9 * std::max(1.0, std::abs(path.log_g))) << m.name;
    }
  }
}
