#pragma once

// One-dimensional unnormalized log-densities: bracketing of the effective support,
// adaptive Simpson normalization, and inverse-CDF sampling from a tabulated
// piecewise log-linear interpolant.

#include "raresum/errors.hpp"
#include "raresum/linalg.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace raresum {

namespace detail {

struct SimpsonCtx {
  const std::function<double(double)>* f;
  double shift;
  int evaluations = 0;
  int max_evaluations = 20000;
};

inline double simpson_rec(SimpsonCtx& ctx, double a, double b, double fa, double fm, double fb, double whole,
                          double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = std::exp((*ctx.f)(lm) - ctx.shift);
  const double frm = std::exp((*ctx.f)(rm) - ctx.shift);
  ctx.evaluations += 2;
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || ctx.evaluations > ctx.max_evaluations || std::abs(diff) <= 15.0 * tol) {
    return left + right + diff / 15.0;
  }
  return simpson_rec(ctx, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_rec(ctx, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// log of the integral of exp(log_f) over [a, b], computed as exp(shift) * integral of
/// exp(log_f - shift). Starts from `panels` equal panels; refines until the relative
/// change falls below `rel_tol`.
inline double log_integral_simpson(const std::function<double(double)>& log_f, double a, double b, double shift,
                                   double rel_tol = 1e-8, int panels = 16) {
  detail::SimpsonCtx ctx{&log_f, shift};
  const double h = (b - a) / panels;
  // First pass: a coarse composite estimate sets the absolute tolerance.
  std::vector<double> xs(2 * panels + 1), fs(2 * panels + 1);
  for (int i = 0; i <= 2 * panels; ++i) {
    xs[i] = a + 0.5 * h * i;
    fs[i] = std::exp(log_f(xs[i]) - shift);
  }
  double coarse = 0.0;
  for (int p = 0; p < panels; ++p) coarse += h / 6.0 * (fs[2 * p] + 4.0 * fs[2 * p + 1] + fs[2 * p + 2]);
  if (!(coarse > 0.0) || !std::isfinite(coarse)) return kNegInf;
  const double tol = rel_tol * coarse / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double whole = h / 6.0 * (fs[2 * p] + 4.0 * fs[2 * p + 1] + fs[2 * p + 2]);
    total += detail::simpson_rec(ctx, xs[2 * p], xs[2 * p + 2], fs[2 * p], fs[2 * p + 1], fs[2 * p + 2], whole, tol, 40);
  }
  return shift + std::log(total);
}

/// Finds [lo, hi] outside of which log_f stays below its maximum minus `drop`, starting from
/// a (center, scale) hint and clipped to the support.
inline std::pair<double, double> bracket_support(const std::function<double(double)>& log_f, double center,
                                                 double scale, double support_lo, double support_hi,
                                                 double drop = 36.0, int coarse_nodes = 129) {
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  if (!std::isfinite(center)) center = 0.0;
  double lo = std::max(support_lo, center - 12.0 * scale);
  double hi = std::min(support_hi, center + 12.0 * scale);
  if (!(hi > lo)) {
    lo = support_lo;
    hi = std::isfinite(support_lo) ? support_lo + 24.0 * scale : center + 12.0 * scale;
  }
  for (int attempt = 0; attempt < 40; ++attempt) {
    const double h = (hi - lo) / (coarse_nodes - 1);
    double best = kNegInf;
    int arg = 0;
    std::vector<double> vals(coarse_nodes);
    for (int i = 0; i < coarse_nodes; ++i) {
      vals[i] = log_f(lo + h * i);
      if (vals[i] > best) {
        best = vals[i];
        arg = i;
      }
    }
    if (!std::isfinite(best)) {
      // Nothing visible yet: widen symmetrically.
      const double w = hi - lo;
      lo = std::max(support_lo, lo - w);
      hi = std::min(support_hi, hi + w);
      continue;
    }
    const double cut = best - drop;
    const bool open_left = vals.front() > cut && lo > support_lo;
    const bool open_right = vals.back() > cut && hi < support_hi;
    if (!open_left && !open_right) {
      int first = 0, last = coarse_nodes - 1;
      while (first < arg && vals[first + 1] <= cut) ++first;
      while (last > arg && vals[last - 1] <= cut) --last;
      if (last == first) {
        first = std::max(arg - 1, 0);
        last = std::min(arg + 1, coarse_nodes - 1);
      }
      const double new_lo = lo + h * first, new_hi = lo + h * last;
      // Peak barely resolved by the coarse spacing: zoom in on it.
      if (last - first < 8) {
        lo = new_lo;
        hi = new_hi;
        continue;
      }
      return {new_lo, new_hi};
    }
    const double w = hi - lo;
    if (open_left) lo = std::max(support_lo, lo - w);
    if (open_right) hi = std::min(support_hi, hi + w);
  }
  throw NumericError("could not bracket the effective support of a one-dimensional density");
}

/// Normalized density exp(log_f)/Z on [lo, hi] with Z from adaptive Simpson; samples by
/// inverse CDF on a tabulated piecewise log-linear interpolant.
class GridDensity1d {
 public:
  GridDensity1d(std::function<double(double)> log_f, double lo, double hi, int nodes = 1025)
      : log_f_(std::move(log_f)), lo_(lo), hi_(hi) {
    if (!(hi_ > lo_)) throw NumericError("degenerate grid interval");
    xs_.resize(nodes);
    lf_.resize(nodes);
    const double h = (hi_ - lo_) / (nodes - 1);
    double peak = kNegInf;
    for (int i = 0; i < nodes; ++i) {
      xs_[i] = lo_ + h * i;
      lf_[i] = log_f_(xs_[i]);
      peak = std::max(peak, lf_[i]);
    }
    if (!std::isfinite(peak)) throw NumericError("density is numerically zero on its grid");
    peak_ = peak;
    cdf_.assign(nodes, 0.0);
    for (int i = 1; i < nodes; ++i) cdf_[i] = cdf_[i - 1] + cell_mass(i - 1);
    if (!(cdf_.back() > 0.0)) throw NumericError("density has no mass on its grid");
    log_norm_ = log_integral_simpson(log_f_, lo_, hi_, peak_);
    if (!std::isfinite(log_norm_)) throw NumericError("density normalization underflowed");
  }

  /// log Z by adaptive Simpson.
  double log_normalizer() const noexcept { return log_norm_; }
  /// log Z by the tabulated interpolant (diagnostic).
  double log_normalizer_grid() const { return peak_ + std::log(cdf_.back()); }
  double lower() const noexcept { return lo_; }
  double upper() const noexcept { return hi_; }

  double log_density(double x) const {
    if (x < lo_ || x > hi_) return kNegInf;
    return log_f_(x) - log_norm_;
  }

  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double target = unif(rng) * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
    std::size_t cell = static_cast<std::size_t>(std::distance(cdf_.begin(), it));
    cell = std::clamp<std::size_t>(cell, 1, cdf_.size() - 1) - 1;
    const double mass = cdf_[cell + 1] - cdf_[cell];
    const double frac = mass > 0.0 ? std::clamp((target - cdf_[cell]) / mass, 0.0, 1.0) : 0.5;
    // Invert the exponential segment between nodes cell and cell+1.
    const double a = lf_[cell] - peak_, b = lf_[cell + 1] - peak_;
    const double width = xs_[cell + 1] - xs_[cell];
    const double slope = b - a;
    double u;
    if (std::abs(slope) < 1e-9) {
      u = frac;
    } else {
      u = std::log1p(frac * std::expm1(slope)) / slope;
      if (!std::isfinite(u)) u = frac;
    }
    return xs_[cell] + std::clamp(u, 0.0, 1.0) * width;
  }

 private:
  double cell_mass(int i) const {
    const double a = lf_[i] - peak_, b = lf_[i + 1] - peak_;
    const double width = xs_[i + 1] - xs_[i];
    if (!std::isfinite(a) && !std::isfinite(b)) return 0.0;
    if (!std::isfinite(a) || !std::isfinite(b)) return 0.5 * width * (std::exp(std::isfinite(a) ? a : b));
    const double slope = b - a;
    if (std::abs(slope) < 1e-9) return width * std::exp(a);
    return width * std::exp(a) * std::expm1(slope) / slope;
  }

  std::function<double(double)> log_f_;
  double lo_, hi_;
  double peak_ = 0.0;
  double log_norm_ = 0.0;
  std::vector<double> xs_, lf_, cdf_;
};

/// Builds a normalized grid density, bracketing the support first.
inline GridDensity1d make_grid_density(std::function<double(double)> log_f, double center, double scale,
                                       double support_lo, double support_hi, int nodes = 1025) {
  const auto [lo, hi] = bracket_support(log_f, center, scale, support_lo, support_hi);
  return GridDensity1d(std::move(log_f), lo, hi, nodes);
}

}  // namespace raresum
