#pragma once

// Path generation under the adaptive scheme.
//
// The first k points follow the recursive kernel
//   g(y_{i+1} | y_1^i) = C_i n_s(u(y_{i+1}); beta alpha + c, beta) p_X(y_{i+1})
// with m_{i,n} = n/(n-i) (v - u_{1,i}/n), m(t_i) = m_{i,n},
//   alpha = t_i + kappa^-1 (kappa^-1 gamma) / (2 (n-i-1)),   beta = kappa (n-i-1),
// and c = m_{i,n} (uniform-step) or c = v (paper-literal). The remaining n-k points are
// i.i.d. from the tilted law pi^{m_k}, m_k = n/(n-k) (v - u_{1,k}/n).
//
// Under uniform-step the kernel is applied at i = 0 as well; paper-literal uses pi^v for
// the first point. With X Gaussian and u = identity the uniform-step kernel is exactly the
// conditional law of X_{i+1} given the remaining sum, so g_nv is the exact conditional
// density for k = n - 1.

#include "raresum/errors.hpp"
#include "raresum/grid_density.hpp"
#include "raresum/model.hpp"
#include "raresum/tilt.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace raresum {

enum class KMode { default_rule, gaussian_exact, manual };
enum class Variant { uniform_step, paper_literal };

inline std::string to_string(KMode m) {
  switch (m) {
    case KMode::default_rule: return "default";
    case KMode::gaussian_exact: return "gaussian-exact";
    case KMode::manual: return "manual";
  }
  return "?";
}

inline std::string to_string(Variant v) { return v == Variant::uniform_step ? "uniform-step" : "paper-literal"; }

/// default: n - ceil(sqrt(n)); gaussian-exact: n - 1; manual: validated user value.
inline int select_k(int n, KMode mode, int manual_k = 0) {
  if (n < 3) throw ConfigError("n must be at least 3 to choose a split index");
  switch (mode) {
    case KMode::gaussian_exact: return n - 1;
    case KMode::default_rule: return n - static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    case KMode::manual:
      if (manual_k < 1 || manual_k > n - 1) {
        throw ConfigError("k = " + std::to_string(manual_k) + " out of range [1, " + std::to_string(n - 1) + "]");
      }
      return manual_k;
  }
  throw ConfigError("unknown k mode");
}

enum class StepKind {
  gaussian_factor,  ///< recursive kernel C_i n_s(u(y); gauss_mean, beta) p_X(y)
  tilted,           ///< pi^{m_target} (paper-literal first step)
};

struct StepParams {
  int i = 0;
  StepKind kind = StepKind::gaussian_factor;
  Vec m_target;
  Vec t_i;
  LocalCumulants local;
  Vec alpha;
  Mat beta;
  Vec gauss_mean;
  double log_norm = 0.0;  ///< log C_i; filled when the kernel is built
};

namespace detail {

inline Vec step_target(const Vec& v, const Vec& u_partial, int i, int n) {
  return (static_cast<double>(n) / (n - i)) * (v - u_partial / static_cast<double>(n));
}

}  // namespace detail

/// Parameters of the kernel that draws y_{i+1} given u_{1,i}. `i` counts points already drawn.
inline StepParams step_params(const ModelSpec& model, const Vec& v, int i, const Vec& u_partial, int n,
                              Variant variant = Variant::uniform_step, const std::optional<Vec>& t_start = std::nullopt,
                              const TiltOptions& opts = {}) {
  if (i < 0 || n - i - 1 < 1) throw ConfigError("step index out of range: need n - i - 1 >= 1");
  StepParams p;
  p.i = i;
  p.m_target = (variant == Variant::paper_literal && i == 0) ? v : detail::step_target(v, u_partial, i, n);
  const TiltSolution sol = solve_tilt(model, p.m_target, opts, t_start);
  p.t_i = sol.t;
  p.local = sol.local;
  if (variant == Variant::paper_literal && i == 0) {
    p.kind = StepKind::tilted;
    return p;
  }
  const double remaining = n - i - 1;
  const Eigen::LDLT<Mat> kappa(p.local.covariance);
  p.alpha = p.t_i + kappa.solve(kappa.solve(p.local.third)) / (2.0 * remaining);
  p.beta = p.local.covariance * remaining;
  const Vec& center = variant == Variant::uniform_step ? p.m_target : v;
  p.gauss_mean = p.beta * p.alpha + center;
  return p;
}

/// Normalized density of one step (or of a tilted law) with sampling and evaluation.
class StepKernel {
 public:
  StepKernel(const StepKernel&) = delete;
  StepKernel& operator=(const StepKernel&) = delete;

  /// `with_sampler = false` skips the inverse-CDF table for grid kernels.
  StepKernel(const ModelSpec& model, StepParams& params, bool with_sampler = true) : model_(&model) {
    if (params.kind == StepKind::tilted) {
      init_tilted(params.t_i, with_sampler);
      params.log_norm = 0.0;
      return;
    }
    switch (model.conjugacy) {
      case Conjugacy::gaussian_identity: init_gaussian(params); break;
      case Conjugacy::generic_1d: init_grid(params, with_sampler); break;
      case Conjugacy::generic:
        throw ConfigError("adaptive step sampling needs a gaussian-identity or one-dimensional model");
    }
  }

  /// Tilted law pi_t.
  StepKernel(const ModelSpec& model, const Vec& t, bool with_sampler = true) : model_(&model) {
    init_tilted(t, with_sampler);
  }

  double log_density(const Vec& y) const {
    switch (kind_) {
      case Kind::gaussian: return gauss_(y);
      case Kind::grid: return grid_log_f(y[0]) - log_z_;
      case Kind::tilted: return model_->log_tilted_density(t_, k_t_, y);
    }
    return kNaN;
  }

  Vec sample(Rng& rng) const {
    switch (kind_) {
      case Kind::gaussian: return gauss_.sample(rng);
      case Kind::grid: return Vec::Constant(1, grid_->sample(rng));
      case Kind::tilted:
        if (model_->sample_tilted) return model_->sample_tilted(t_, rng);
        if (grid_) return Vec::Constant(1, grid_->sample(rng));
        throw ConfigError("model has no sampler for its tilted law");
    }
    return {};
  }

  /// Simpson normalizer of a grid kernel (log Z); 0 otherwise.
  double log_normalizer() const { return log_z_; }
  const GridDensity1d* grid() const { return grid_ ? &*grid_ : nullptr; }

 private:
  enum class Kind { gaussian, grid, tilted };

  void init_tilted(const Vec& t, bool with_sampler) {
    kind_ = Kind::tilted;
    t_ = t;
    k_t_ = cumulant(*model_, t);
    if (model_->conjugacy == Conjugacy::gaussian_identity && model_->gaussian) {
      kind_ = Kind::gaussian;
      const auto& g = *model_->gaussian;
      gauss_ = GaussianLogDensity(g.mean + g.cov * t, g.cov);
      return;
    }
    if (with_sampler && !model_->sample_tilted) {
      if (model_->d != 1) throw ConfigError("model has no sampler for its tilted law");
      const Vec tt = t;
      const double kt = k_t_;
      const ModelSpec* m = model_;
      std::function<double(double)> lf = [m, tt, kt](double x) {
        return m->log_tilted_density(tt, kt, Vec::Constant(1, x));
      };
      auto [c, sc] = location_hint(t);
      grid_.emplace(make_grid_density(std::move(lf), c, sc, model_->support_lower, model_->support_upper));
    }
  }

  void init_gaussian(StepParams& p) {
    if (!model_->gaussian) throw ConfigError("gaussian-identity model lacks Gaussian parameters");
    kind_ = Kind::gaussian;
    const auto& g = *model_->gaussian;
    const Mat sigma_inv = g.cov.inverse();
    const Mat beta_inv = p.beta.inverse();
    const Mat post_cov_raw = (sigma_inv + beta_inv).inverse();
    const Mat post_cov = 0.5 * (post_cov_raw + post_cov_raw.transpose());
    const Vec post_mean = post_cov * (beta_inv * p.gauss_mean + sigma_inv * g.mean);
    gauss_ = GaussianLogDensity(post_mean, post_cov);
    if (!gauss_.ok()) throw NumericError("step posterior covariance is not positive definite");
    // C_i^{-1} = integral of n(x; gauss_mean, beta) p_X(x) dx = n(gauss_mean; mu, beta + Sigma).
    const GaussianLogDensity conv(g.mean, p.beta + g.cov);
    p.log_norm = -conv(p.gauss_mean);
  }

  void init_grid(StepParams& p, bool with_sampler) {
    if (model_->d != 1) throw ConfigError("grid step kernels need d = 1");
    kind_ = Kind::grid;
    const int s = model_->s;
    if (s > kMaxS) throw ConfigError("grid step kernels support at most 8 constraints");
    Eigen::LLT<Mat> llt(p.beta);
    if (llt.info() != Eigen::Success) throw NumericError("beta is not positive definite");
    const Mat beta_inv = llt.solve(Mat::Identity(s, s));
    const Mat l = llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    s_ = s;
    for (int a = 0; a < s; ++a) {
      center_[a] = p.gauss_mean[a];
      for (int b = 0; b < s; ++b) prec_[a * kMaxS + b] = beta_inv(a, b);
    }
    gauss_const_ = -0.5 * (log_det + s * kLog2Pi);

    const auto [c, sc] = location_hint(p.t_i);
    std::function<double(double)> lf = [this](double x) { return grid_log_f(x); };
    const auto [lo, hi] = bracket_support(lf, c, sc, model_->support_lower, model_->support_upper);
    if (with_sampler) {
      grid_.emplace(lf, lo, hi);
      log_z_ = grid_->log_normalizer();
    } else {
      double peak = kNegInf;
      for (int j = 0; j <= 32; ++j) peak = std::max(peak, lf(lo + (hi - lo) * j / 32.0));
      log_z_ = log_integral_simpson(lf, lo, hi, peak);
    }
    if (!std::isfinite(log_z_)) throw NumericError("step density normalization underflowed");
    p.log_norm = -log_z_;
  }

  std::pair<double, double> location_hint(const Vec& t) const {
    if (model_->tilted_location) return model_->tilted_location(t);
    const Vec m = mean_map(*model_, t);
    const Mat kappa = cumulant_hessian(*model_, t);
    return {m[0], std::sqrt(kappa(0, 0))};
  }

  double grid_log_f(double x) const {
    double lp;
    std::array<double, kMaxS> u{};
    if (model_->log_density_1d && model_->statistic_1d) {
      lp = model_->log_density_1d(x);
      if (!std::isfinite(lp)) return kNegInf;
      model_->statistic_1d(x, u.data());
    } else {
      const Vec xv = Vec::Constant(1, x);
      lp = model_->log_density_x(xv);
      if (!std::isfinite(lp)) return kNegInf;
      const Vec uv = model_->statistic(xv);
      for (int a = 0; a < s_; ++a) u[a] = uv[a];
    }
    double q = 0.0;
    for (int a = 0; a < s_; ++a) {
      const double da = u[a] - center_[a];
      double row = 0.0;
      for (int b = 0; b < s_; ++b) row += prec_[a * kMaxS + b] * (u[b] - center_[b]);
      q += da * row;
    }
    return gauss_const_ - 0.5 * q + lp;
  }

  static constexpr int kMaxS = 8;

  const ModelSpec* model_;
  Kind kind_ = Kind::gaussian;
  GaussianLogDensity gauss_;
  std::optional<GridDensity1d> grid_;
  Vec t_;
  double k_t_ = 0.0;
  double log_z_ = 0.0;
  int s_ = 0;
  std::array<double, kMaxS> center_{};
  std::array<double, kMaxS * kMaxS> prec_{};
  double gauss_const_ = 0.0;
};

struct StepDraw {
  Vec point;
  double log_density = 0.0;
};

/// One draw from the step kernel, with its log-density (log C_i included).
inline StepDraw sample_step(const ModelSpec& model, StepParams& params, Rng& rng) {
  const StepKernel kernel(model, params);
  StepDraw d;
  d.point = kernel.sample(rng);
  d.log_density = kernel.log_density(d.point);
  return d;
}

/// Sampler and exact log-density for pi^{m}, the tilted law with mean of u equal to m.
class TiltedSampler {
 public:
  TiltedSampler(const ModelSpec& model, const Vec& m, const std::optional<Vec>& t_start = std::nullopt,
                const TiltOptions& opts = {})
      : solution_(solve_tilt(model, m, opts, t_start)), kernel_(model, solution_.t) {}

  const Vec& t() const noexcept { return solution_.t; }
  const TiltSolution& solution() const noexcept { return solution_; }
  double log_density(const Vec& x) const { return kernel_.log_density(x); }
  Vec sample(Rng& rng) const { return kernel_.sample(rng); }

 private:
  TiltSolution solution_;
  StepKernel kernel_;
};

inline TiltedSampler tilted_tail_sampler(const ModelSpec& model, const Vec& m_k) { return TiltedSampler(model, m_k); }

struct PathSample {
  std::vector<Vec> points;
  std::vector<Vec> u_partial;  ///< u_partial[i] = u_{1,i+1}
  double log_g = 0.0;
  double log_g_head = 0.0;
  double log_p = 0.0;
  Vec v;
  int k = 0;

  Vec sample_mean() const { return u_partial.back() / static_cast<double>(u_partial.size()); }
  double log_weight() const { return log_p - log_g; }
};

/// Draws y_1..y_n: k recursive steps, then n - k i.i.d. tilted points. Throws PathAbort.
inline PathSample sample_path(const ModelSpec& model, const Vec& v, int n, int k, Variant variant, Rng& rng,
                              const TiltOptions& tilt = {}) {
  if (k < 1 || k > n - 1) throw ConfigError("k must satisfy 1 <= k <= n - 1");
  PathSample path;
  path.v = v;
  path.k = k;
  path.points.reserve(static_cast<std::size_t>(n));
  path.u_partial.reserve(static_cast<std::size_t>(n));
  Vec u = Vec::Zero(model.s);
  std::optional<Vec> t_prev;
  for (int i = 0; i < k; ++i) {
    try {
      StepParams params = step_params(model, v, i, u, n, variant, t_prev, tilt);
      t_prev = params.t_i;
      const StepDraw draw = sample_step(model, params, rng);
      if (!std::isfinite(draw.log_density)) throw NumericError("step density vanished at the drawn point");
      u += model.statistic(draw.point);
      path.log_g += draw.log_density;
      path.log_p += model.log_density_x(draw.point);
      path.points.push_back(draw.point);
      path.u_partial.push_back(u);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw PathAbort(std::string("step ") + std::to_string(i) + ": " + e.what(), i);
    }
  }
  path.log_g_head = path.log_g;
  try {
    const Vec m_k = detail::step_target(v, u, k, n);
    const TiltedSampler tail(model, m_k, t_prev, tilt);
    for (int i = k; i < n; ++i) {
      Vec y = tail.sample(rng);
      u += model.statistic(y);
      path.log_g += tail.log_density(y);
      path.log_p += model.log_density_x(y);
      path.points.push_back(std::move(y));
      path.u_partial.push_back(u);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw PathAbort(std::string("tail: ") + e.what(), k);
  }
  if (!std::isfinite(path.log_g)) throw PathAbort("non-finite path density", n - 1);
  return path;
}

struct PathDensity {
  double head = kNegInf;
  double tail = kNegInf;
  double total() const { return head + tail; }
};

/// log g_nv of a given path (head and tail parts); -inf where the kernel is undefined.
/// With fewer than n points, only the head (first min(k, size) points) is evaluated.
inline PathDensity path_log_density(const ModelSpec& model, const Vec& v, int n, int k, Variant variant,
                                    const std::vector<Vec>& points, const TiltOptions& tilt = {}) {
  PathDensity out;
  Vec u = Vec::Zero(model.s);
  std::optional<Vec> t_prev;
  double head = 0.0;
  const int head_len = std::min<int>(k, static_cast<int>(points.size()));
  try {
    for (int i = 0; i < head_len; ++i) {
      StepParams params = step_params(model, v, i, u, n, variant, t_prev, tilt);
      t_prev = params.t_i;
      const StepKernel kernel(model, params, /*with_sampler=*/false);
      head += kernel.log_density(points[static_cast<std::size_t>(i)]);
      u += model.statistic(points[static_cast<std::size_t>(i)]);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    return out;
  }
  out.head = head;
  if (static_cast<int>(points.size()) < n) {
    out.tail = 0.0;
    return out;
  }
  try {
    const Vec m_k = detail::step_target(v, u, k, n);
    const TiltSolution sol = solve_tilt(model, m_k, tilt, t_prev);
    const double k_t = model.cumulant(sol.t);
    double tail = 0.0;
    for (int i = k; i < n; ++i) tail += model.log_tilted_density(sol.t, k_t, points[static_cast<std::size_t>(i)]);
    out.tail = tail;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    out.tail = kNegInf;
  }
  return out;
}

/// For gaussian-identity models, log g_nv(y) as an explicit quadratic in v:
///   log g = constant - (h0 - 2 <h, v> + h2 v' Sigma^-1 v) / 2.
/// Each step (head and tail) is N(y_{i+1}; p_i v + q_i, c_i Sigma) with scalars p_i, c_i.
class GaussianPathForm {
 public:
  GaussianPathForm(const ModelSpec& model, int n, int k, Variant variant, const std::vector<Vec>& points) {
    if (model.conjugacy != Conjugacy::gaussian_identity || !model.gaussian) {
      throw ConfigError("GaussianPathForm needs a gaussian-identity model");
    }
    if (static_cast<int>(points.size()) != n) throw ConfigError("GaussianPathForm needs a full path");
    const Mat& sigma = model.gaussian->cov;
    const Eigen::LLT<Mat> llt(sigma);
    sigma_inv_ = llt.solve(Mat::Identity(sigma.rows(), sigma.cols()));
    const double log_det_sigma = 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
    const int d = static_cast<int>(sigma.rows());
    h_ = Vec::Zero(d);
    Vec u = Vec::Zero(d);
    auto add_step = [&](const Vec& y, double p, const Vec& q, double c) {
      const Vec z = y - q;
      const Vec sz = sigma_inv_ * z;
      h0_ += z.dot(sz) / c;
      h_ += (p / c) * sz;
      h2_ += p * p / c;
      constant_ -= 0.5 * (d * (kLog2Pi + std::log(c)) + log_det_sigma);
    };
    const double nd = n;
    for (int i = 0; i < k; ++i) {
      const Vec& y = points[static_cast<std::size_t>(i)];
      const double r = n - i;
      if (variant == Variant::paper_literal && i == 0) {
        add_step(y, 1.0, Vec::Zero(d), 1.0);
      } else if (variant == Variant::uniform_step) {
        add_step(y, nd / r, -u / r, (r - 1.0) / r);
      } else {
        add_step(y, ((r - 1.0) * nd / r + 1.0) / r, -(r - 1.0) * u / (r * r), (r - 1.0) / r);
      }
      u += y;
    }
    const double r = n - k;
    const Vec q = -u / r;
    for (int i = k; i < n; ++i) add_step(points[static_cast<std::size_t>(i)], nd / r, q, 1.0);
  }

  double log_density(const Vec& v) const {
    return constant_ - 0.5 * (h0_ - 2.0 * h_.dot(v) + h2_ * v.dot(sigma_inv_ * v));
  }

 private:
  Mat sigma_inv_;
  Vec h_;
  double h0_ = 0.0;
  double h2_ = 0.0;
  double constant_ = 0.0;
};

}  // namespace raresum
