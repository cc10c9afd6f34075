#pragma once

// Statistical model (p_X, u) and its cumulant generating function K(t) = log E exp<t, u(X)>.
//
// The tilt, path-generation and chain layers only ever talk to a model through this
// header: K and its first three derivatives, the log-density of X, the statistic u,
// and (optionally) closed-form samplers for the exponentially tilted law
//   pi_t(x) = exp(<t, u(x)> - K(t)) p_X(x).
// Analytic derivatives are used when a family supplies them; otherwise central
// differences of K with step h = max(1e-4, 1e-4 |t_j|) per coordinate.

#include "raresum/errors.hpp"
#include "raresum/linalg.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>

namespace raresum {

enum class Conjugacy {
  gaussian_identity,  ///< X Gaussian, u = identity: closed-form step sampling.
  generic_1d,         ///< d = 1, any s: grid-based step sampling.
  generic,            ///< d > 1, non-conjugate: only the baselines with a tilted sampler work.
};

/// Per-coordinate open intervals for t, plus an optional joint membership predicate.
struct CumulantDomain {
  Vec lower;
  Vec upper;
  std::function<bool(const Vec&)> predicate;

  static CumulantDomain unbounded(int s) {
    return {Vec::Constant(s, kNegInf), Vec::Constant(s, kInf), {}};
  }

  /// Strict interior test, keeping a margin of 1e-8 of the interval width from finite ends.
  bool contains(const Vec& t) const { return first_violation(t) < 0; }

  /// Index of the first violating coordinate, s if only the joint predicate fails, -1 if inside.
  int first_violation(const Vec& t) const {
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      if (!std::isfinite(t[j])) return static_cast<int>(j);
      const double width = upper[j] - lower[j];
      const double margin = std::isfinite(width) ? 1e-8 * width
                                                 : 1e-8 * std::max(1.0, std::isfinite(lower[j]) ? std::abs(lower[j])
                                                                                                 : std::abs(upper[j]));
      if (std::isfinite(lower[j]) && !(t[j] > lower[j] + margin)) return static_cast<int>(j);
      if (std::isfinite(upper[j]) && !(t[j] < upper[j] - margin)) return static_cast<int>(j);
    }
    if (predicate && !predicate(t)) return static_cast<int>(t.size());
    return -1;
  }
};

/// Gaussian parameters backing the gaussian-identity conjugacy.
struct GaussianParams {
  Vec mean;
  Mat cov;
};

struct ModelSpec {
  std::string name;
  int d = 1;
  int s = 1;

  std::function<double(const Vec&)> log_density_x;
  std::function<Vec(const Vec&)> statistic;
  std::function<double(const Vec&)> cumulant;
  CumulantDomain cumulant_domain;
  Conjugacy conjugacy = Conjugacy::generic;

  // Optional analytic derivatives of K.
  std::function<Vec(const Vec&)> cumulant_gradient;
  std::function<Mat(const Vec&)> cumulant_hessian;
  /// gamma_p = sum_j d^3 K / dt_j dt_j dt_p
  std::function<Vec(const Vec&)> cumulant_third_contracted;

  /// Closed-form sampler for pi_t; t = 0 samples p_X itself.
  std::function<Vec(const Vec&, Rng&)> sample_tilted;

  /// d = 1 only: support of p_X and a (center, scale) hint for X under pi_t.
  double support_lower = kNegInf;
  double support_upper = kInf;
  std::function<std::pair<double, double>(const Vec&)> tilted_location;
  /// d = 1 only, optional allocation-free versions of log p_X and u used by grid kernels.
  std::function<double(double)> log_density_1d;
  std::function<void(double, double*)> statistic_1d;

  std::optional<GaussianParams> gaussian;

  double log_tilted_density(const Vec& t, double k_t, const Vec& x) const {
    const double lp = log_density_x(x);
    if (!std::isfinite(lp)) return kNegInf;
    return t.dot(statistic(x)) - k_t + lp;
  }
};

/// m(t), kappa(t) and the contracted third cumulant gamma at one tilt.
struct LocalCumulants {
  Vec t;
  Vec mean;
  Mat covariance;
  Vec third;
};

namespace detail {

inline Vec fd_steps(const Vec& t) {
  Vec h(t.size());
  for (Eigen::Index j = 0; j < t.size(); ++j) h[j] = std::max(1e-4, 1e-4 * std::abs(t[j]));
  return h;
}

inline void require_domain(const ModelSpec& model, const Vec& t) {
  if (t.size() != model.s) throw ConfigError("tilt dimension does not match the number of constraints");
  const int bad = model.cumulant_domain.first_violation(t);
  if (bad >= 0) {
    throw DomainError("tilt outside the cumulant domain at coordinate " + std::to_string(bad),
                      static_cast<std::size_t>(bad));
  }
}

inline Vec fd_gradient(const ModelSpec& model, const Vec& t) {
  const Vec h = fd_steps(t);
  Vec g(t.size());
  for (Eigen::Index j = 0; j < t.size(); ++j) {
    Vec tp = t, tm = t;
    tp[j] += h[j];
    tm[j] -= h[j];
    require_domain(model, tp);
    require_domain(model, tm);
    g[j] = (model.cumulant(tp) - model.cumulant(tm)) / (2.0 * h[j]);
  }
  return g;
}

inline Mat fd_hessian(const ModelSpec& model, const Vec& t) {
  const Vec h = fd_steps(t);
  const auto s = t.size();
  Mat hess(s, s);
  auto k_at = [&](const Vec& x) {
    require_domain(model, x);
    return model.cumulant(x);
  };
  for (Eigen::Index j = 0; j < s; ++j) {
    for (Eigen::Index l = j; l < s; ++l) {
      Vec pp = t, pm = t, mp = t, mm = t;
      pp[j] += h[j]; pp[l] += h[l];
      pm[j] += h[j]; pm[l] -= h[l];
      mp[j] -= h[j]; mp[l] += h[l];
      mm[j] -= h[j]; mm[l] -= h[l];
      hess(j, l) = (k_at(pp) - k_at(pm) - k_at(mp) + k_at(mm)) / (4.0 * h[j] * h[l]);
      hess(l, j) = hess(j, l);
    }
  }
  return hess;
}

}  // namespace detail

inline double cumulant(const ModelSpec& model, const Vec& t) {
  detail::require_domain(model, t);
  return model.cumulant(t);
}

/// m(t) = grad K(t).
inline Vec mean_map(const ModelSpec& model, const Vec& t) {
  detail::require_domain(model, t);
  if (model.cumulant_gradient) return model.cumulant_gradient(t);
  return detail::fd_gradient(model, t);
}

/// kappa(t) = Hessian of K at t.
inline Mat cumulant_hessian(const ModelSpec& model, const Vec& t) {
  detail::require_domain(model, t);
  if (model.cumulant_hessian) return model.cumulant_hessian(t);
  return detail::fd_hessian(model, t);
}

inline Vec contracted_third(const ModelSpec& model, const Vec& t) {
  detail::require_domain(model, t);
  if (model.cumulant_third_contracted) return model.cumulant_third_contracted(t);
  // Differences of Hessians along each coordinate.
  const Vec h = detail::fd_steps(t);
  Vec gamma(t.size());
  for (Eigen::Index p = 0; p < t.size(); ++p) {
    Vec tp = t, tm = t;
    tp[p] += h[p];
    tm[p] -= h[p];
    const Mat dh = (cumulant_hessian(model, tp) - cumulant_hessian(model, tm)) / (2.0 * h[p]);
    gamma[p] = dh.trace();
  }
  return gamma;
}

inline LocalCumulants local_cumulants(const ModelSpec& model, const Vec& t) {
  LocalCumulants out;
  out.t = t;
  out.mean = mean_map(model, t);
  const Mat hess = cumulant_hessian(model, t);
  out.covariance = 0.5 * (hess + hess.transpose());
  Eigen::LLT<Mat> llt(out.covariance);
  if (llt.info() != Eigen::Success || !out.covariance.allFinite()) {
    throw NumericError("cumulant Hessian is not positive definite; tilt is too close to the domain boundary");
  }
  out.third = contracted_third(model, t);
  return out;
}

// ---------------------------------------------------------------------------
// Built-in families
// ---------------------------------------------------------------------------

enum class Family { gaussian_mean, exponential_mean, gaussian_mean_and_square };

struct FamilyParams {
  double mu = 0.0;
  double sigma = 1.0;
  double rate = 1.0;
  int d = 1;
};

inline std::string family_name(Family f) {
  switch (f) {
    case Family::gaussian_mean: return "gaussian-mean";
    case Family::exponential_mean: return "exponential-mean";
    case Family::gaussian_mean_and_square: return "gaussian-mean-and-square";
  }
  return "unknown";
}

inline std::optional<Family> parse_family(const std::string& name) {
  if (name == "gaussian-mean") return Family::gaussian_mean;
  if (name == "exponential-mean") return Family::exponential_mean;
  if (name == "gaussian-mean-and-square") return Family::gaussian_mean_and_square;
  return std::nullopt;
}

/// Number of constraints s implied by a family at dimension d.
inline int family_constraints(Family f, int d) {
  switch (f) {
    case Family::gaussian_mean: return d;
    case Family::exponential_mean: return 1;
    case Family::gaussian_mean_and_square: return 2;
  }
  return 1;
}

namespace detail {

inline ModelSpec gaussian_mean_model(const FamilyParams& p) {
  const int d = p.d;
  const double mu = p.mu;
  const double var = p.sigma * p.sigma;
  ModelSpec m;
  m.name = "gaussian-mean";
  m.d = d;
  m.s = d;
  m.conjugacy = Conjugacy::gaussian_identity;
  m.gaussian = GaussianParams{Vec::Constant(d, mu), var * Mat::Identity(d, d)};
  m.cumulant_domain = CumulantDomain::unbounded(d);
  const double log_norm = -0.5 * d * (kLog2Pi + std::log(var));
  m.log_density_x = [=](const Vec& x) { return log_norm - 0.5 * (x.array() - mu).square().sum() / var; };
  m.statistic = [](const Vec& x) { return x; };
  m.cumulant = [=](const Vec& t) { return mu * t.sum() + 0.5 * var * t.squaredNorm(); };
  m.cumulant_gradient = [=](const Vec& t) -> Vec { return (mu + var * t.array()).matrix(); };
  m.cumulant_hessian = [=](const Vec& t) -> Mat { return var * Mat::Identity(t.size(), t.size()); };
  m.cumulant_third_contracted = [](const Vec& t) -> Vec { return Vec::Zero(t.size()); };
  m.sample_tilted = [=](const Vec& t, Rng& rng) {
    std::normal_distribution<double> normal;
    Vec x(d);
    for (int j = 0; j < d; ++j) x[j] = mu + var * t[j] + p.sigma * normal(rng);
    return x;
  };
  if (d == 1) {
    m.tilted_location = [=](const Vec& t) { return std::pair{mu + var * t[0], p.sigma}; };
    m.log_density_1d = [=](double x) { return log_norm - 0.5 * (x - mu) * (x - mu) / var; };
    m.statistic_1d = [](double x, double* u) { u[0] = x; };
  }
  return m;
}

inline ModelSpec exponential_mean_model(const FamilyParams& p) {
  const double rate = p.rate;
  ModelSpec m;
  m.name = "exponential-mean";
  m.d = 1;
  m.s = 1;
  m.conjugacy = Conjugacy::generic_1d;
  m.cumulant_domain = {Vec::Constant(1, kNegInf), Vec::Constant(1, rate), {}};
  m.support_lower = 0.0;
  const double log_rate = std::log(rate);
  m.log_density_1d = [=](double x) { return x < 0.0 ? kNegInf : log_rate - rate * x; };
  m.statistic_1d = [](double x, double* u) { u[0] = x; };
  m.log_density_x = [=](const Vec& x) { return x[0] < 0.0 ? kNegInf : log_rate - rate * x[0]; };
  m.statistic = [](const Vec& x) { return x; };
  m.cumulant = [=](const Vec& t) { return -std::log1p(-t[0] / rate); };
  m.cumulant_gradient = [=](const Vec& t) { return Vec::Constant(1, 1.0 / (rate - t[0])); };
  m.cumulant_hessian = [=](const Vec& t) { return Mat::Constant(1, 1, 1.0 / std::pow(rate - t[0], 2)); };
  m.cumulant_third_contracted = [=](const Vec& t) { return Vec::Constant(1, 2.0 / std::pow(rate - t[0], 3)); };
  m.sample_tilted = [=](const Vec& t, Rng& rng) {
    std::exponential_distribution<double> e(rate - t[0]);
    return Vec::Constant(1, e(rng));
  };
  m.tilted_location = [=](const Vec& t) {
    const double scale = 1.0 / (rate - t[0]);
    return std::pair{scale, scale};
  };
  return m;
}

// X ~ N(mu, sigma^2), u(x) = (x, x^2). Under the tilt t, X ~ N(c, w) with
// w = 1 / (1/sigma^2 - 2 t2) and c = w (mu / sigma^2 + t1).
inline ModelSpec gaussian_square_model(const FamilyParams& p) {
  const double mu = p.mu;
  const double var = p.sigma * p.sigma;
  ModelSpec m;
  m.name = "gaussian-mean-and-square";
  m.d = 1;
  m.s = 2;
  m.conjugacy = Conjugacy::generic_1d;
  m.cumulant_domain = {Vec::Constant(2, kNegInf), (Vec(2) << kInf, 0.5 / var).finished(), {}};
  auto tilted = [=](const Vec& t) {
    const double a = 1.0 / var - 2.0 * t[1];
    const double w = 1.0 / a;
    return std::pair{w * (mu / var + t[0]), w};
  };
  const double log_norm = -0.5 * (kLog2Pi + std::log(var));
  m.log_density_1d = [=](double x) { return log_norm - 0.5 * (x - mu) * (x - mu) / var; };
  m.statistic_1d = [](double x, double* u) {
    u[0] = x;
    u[1] = x * x;
  };
  m.log_density_x = [=](const Vec& x) { return log_norm - 0.5 * (x[0] - mu) * (x[0] - mu) / var; };
  m.statistic = [](const Vec& x) { return (Vec(2) << x[0], x[0] * x[0]).finished(); };
  m.cumulant = [=](const Vec& t) {
    const double a = 1.0 / var - 2.0 * t[1];
    const double b = mu / var + t[0];
    return -0.5 * std::log(var * a) + 0.5 * b * b / a - 0.5 * mu * mu / var;
  };
  m.cumulant_gradient = [=](const Vec& t) {
    const auto [c, w] = tilted(t);
    return (Vec(2) << c, w + c * c).finished();
  };
  m.cumulant_hessian = [=](const Vec& t) {
    const auto [c, w] = tilted(t);
    return (Mat(2, 2) << w, 2.0 * c * w, 2.0 * c * w, 2.0 * w * w + 4.0 * c * c * w).finished();
  };
  m.cumulant_third_contracted = [=](const Vec& t) {
    const auto [c, w] = tilted(t);
    const double k112 = 2.0 * w * w;
    const double k122 = 8.0 * c * w * w;
    const double k222 = 8.0 * w * w * w + 24.0 * c * c * w * w;
    return (Vec(2) << k122, k112 + k222).finished();
  };
  m.sample_tilted = [=](const Vec& t, Rng& rng) {
    const auto [c, w] = tilted(t);
    std::normal_distribution<double> normal(c, std::sqrt(w));
    return Vec::Constant(1, normal(rng));
  };
  m.tilted_location = [=](const Vec& t) {
    const auto [c, w] = tilted(t);
    return std::pair{c, std::sqrt(w)};
  };
  return m;
}

}  // namespace detail

/// Fully populated model for one of the built-in families.
inline ModelSpec builtin_model(Family family, const FamilyParams& params) {
  switch (family) {
    case Family::gaussian_mean:
      if (params.d < 1) throw ConfigError("gaussian-mean: d must be >= 1");
      if (!(params.sigma > 0.0) || !std::isfinite(params.sigma)) throw ConfigError("gaussian-mean: sigma must be > 0");
      if (!std::isfinite(params.mu)) throw ConfigError("gaussian-mean: mu must be finite");
      return detail::gaussian_mean_model(params);
    case Family::exponential_mean:
      if (params.d != 1) throw ConfigError("exponential-mean: d must be 1");
      if (!(params.rate > 0.0) || !std::isfinite(params.rate)) throw ConfigError("exponential-mean: rate must be > 0");
      return detail::exponential_mean_model(params);
    case Family::gaussian_mean_and_square:
      if (params.d != 1) throw ConfigError("gaussian-mean-and-square: d must be 1");
      if (!(params.sigma > 0.0) || !std::isfinite(params.sigma)) {
        throw ConfigError("gaussian-mean-and-square: sigma must be > 0");
      }
      if (!std::isfinite(params.mu)) throw ConfigError("gaussian-mean-and-square: mu must be finite");
      return detail::gaussian_square_model(params);
  }
  throw ConfigError("unknown model family");
}

}  // namespace raresum
