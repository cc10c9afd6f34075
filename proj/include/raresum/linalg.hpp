#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace raresum {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline double log_sum_exp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

/// Multivariate normal log-density via a precomputed Cholesky factor of the covariance.
class GaussianLogDensity {
 public:
  GaussianLogDensity() = default;
  GaussianLogDensity(Vec mean, const Mat& cov) : mean_(std::move(mean)), chol_(cov) {
    ok_ = chol_.info() == Eigen::Success;
    if (ok_) {
      const Mat l = chol_.matrixL();
      log_det_ = 2.0 * l.diagonal().array().log().sum();
    }
  }

  bool ok() const noexcept { return ok_; }
  const Vec& mean() const noexcept { return mean_; }
  double log_det() const noexcept { return log_det_; }
  Mat lower() const { return chol_.matrixL(); }

  double operator()(const Vec& x) const {
    const Vec z = chol_.matrixL().solve(x - mean_);
    return -0.5 * (z.squaredNorm() + log_det_ + static_cast<double>(x.size()) * kLog2Pi);
  }

  Vec sample(Rng& rng) const {
    std::normal_distribution<double> normal;
    Vec z(mean_.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = normal(rng);
    return mean_ + chol_.matrixL() * z;
  }

 private:
  Vec mean_;
  Eigen::LLT<Mat> chol_;
  double log_det_ = 0.0;
  bool ok_ = false;
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

}  // namespace raresum
