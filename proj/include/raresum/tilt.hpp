#pragma once

// Tilting equation m(t) = alpha, the rate function I(v) = <t_v, v> - K(t_v), and the
// dominating point of a product region (used only by the state-independent baseline).

#include "raresum/errors.hpp"
#include "raresum/model.hpp"
#include "raresum/region.hpp"

#include <optional>
#include <string>

namespace raresum {

struct TiltOptions {
  double tolerance = 1e-10;  ///< absolute, per coordinate (scaled by max(1, |alpha_j|))
  int max_iterations = 200;
};

struct TiltSolution {
  Vec target;
  Vec t;
  LocalCumulants local;
  int iterations = 0;
  double residual = 0.0;  ///< sqrt((m - alpha)' kappa^-1 (m - alpha))
};

/// Damped Newton on the convex dual K(t) - <t, alpha>, started at `start` (t = 0 by default).
inline TiltSolution solve_tilt(const ModelSpec& model, const Vec& alpha, const TiltOptions& opts = {},
                               const std::optional<Vec>& start = std::nullopt) {
  if (alpha.size() != model.s) throw ConfigError("tilt target has wrong dimension");
  if (!alpha.allFinite()) throw SteepnessError("tilt target is not finite");
  Vec t = start && start->size() == model.s && model.cumulant_domain.contains(*start) ? *start : Vec::Zero(model.s);
  const auto& dom = model.cumulant_domain;
  auto dual = [&](const Vec& x) { return model.cumulant(x) - x.dot(alpha); };

  for (int iter = 0; iter <= opts.max_iterations; ++iter) {
    Vec m;
    Mat kappa;
    try {
      m = mean_map(model, t);
      kappa = cumulant_hessian(model, t);
    } catch (const DomainError& e) {
      throw SteepnessError(std::string("tilt iterate left the cumulant domain: ") + e.what());
    }
    const Vec r = alpha - m;
    bool converged = true;
    for (Eigen::Index j = 0; j < r.size(); ++j) {
      if (!(std::abs(r[j]) <= opts.tolerance * std::max(1.0, std::abs(alpha[j])))) converged = false;
    }
    const Eigen::LDLT<Mat> ldlt(0.5 * (kappa + kappa.transpose()));
    if (ldlt.info() != Eigen::Success) throw SteepnessError("singular cumulant Hessian during tilt solve");
    const Vec step = ldlt.solve(r);
    if (converged) {
      TiltSolution sol;
      sol.target = alpha;
      sol.t = t;
      sol.iterations = iter;
      sol.residual = std::sqrt(std::max(0.0, r.dot(step)));
      try {
        sol.local = local_cumulants(model, t);
      } catch (const std::exception& e) {
        throw SteepnessError(std::string("tilt solution unusable: ") + e.what());
      }
      return sol;
    }
    if (iter == opts.max_iterations) break;
    if (!step.allFinite()) throw SteepnessError("non-finite Newton step during tilt solve");

    // Backtracking: stay strictly inside the domain and decrease the dual objective.
    const double f0 = dual(t);
    const double slope = -r.dot(step);
    double lambda = 1.0;
    bool moved = false;
    while (lambda > 1e-20) {
      const Vec trial = t + lambda * step;
      if (dom.contains(trial)) {
        const double f1 = dual(trial);
        if (std::isfinite(f1) && f1 <= f0 + 1e-4 * lambda * slope + 1e-14 * (1.0 + std::abs(f0))) {
          t = trial;
          moved = true;
          break;
        }
      }
      lambda *= 0.5;
    }
    if (!moved) throw SteepnessError("tilt line search stalled; target likely outside the attainable mean range");
  }
  throw SteepnessError("tilt solve did not converge within " + std::to_string(opts.max_iterations) + " iterations");
}

/// I(v) = <t_v, v> - K(t_v).
inline double rate_function(const ModelSpec& model, const Vec& v, const TiltOptions& opts = {}) {
  const TiltSolution sol = solve_tilt(model, v, opts);
  return sol.t.dot(v) - model.cumulant(sol.t);
}

struct DominatingPoint {
  Vec point;
  double rate = kInf;
  /// Number of boxes of the region attaining the minimal rate (>1 means the baseline
  /// will ignore part of the set).
  int multiplicity = 0;
};

namespace detail {

inline Vec project_box(const Vec& v, const std::vector<Interval>& box) {
  Vec out = v;
  for (std::size_t j = 0; j < box.size(); ++j) out[static_cast<Eigen::Index>(j)] = box[j].clamp(v[static_cast<Eigen::Index>(j)]);
  return out;
}

// Projected gradient with Armijo backtracking; grad I(v) = t_v.
inline std::optional<std::pair<Vec, double>> minimize_rate_on_box(const ModelSpec& model, const std::vector<Interval>& box,
                                                                  const Vec& m0) {
  auto eval = [&](const Vec& v) -> std::optional<std::pair<double, Vec>> {
    try {
      const TiltSolution sol = solve_tilt(model, v);
      return std::pair{sol.t.dot(v) - model.cumulant(sol.t), sol.t};
    } catch (const SteepnessError&) {
      return std::nullopt;
    }
  };
  Vec v = project_box(m0, box);
  auto cur = eval(v);
  if (!cur) {
    // The projection of the mean may not be attainable; try an interior representative.
    Vec rep(v.size());
    for (std::size_t j = 0; j < box.size(); ++j) {
      const auto& i = box[j];
      const double width = i.bounded() ? i.upper - i.lower : 1.0;
      rep[static_cast<Eigen::Index>(j)] = representative_point(i, m0[static_cast<Eigen::Index>(j)], 0.1 * width);
    }
    v = rep;
    cur = eval(v);
    if (!cur) return std::nullopt;
  }
  for (int iter = 0; iter < 500; ++iter) {
    const auto& [rate, grad] = *cur;
    double eta = std::max(1e-8, cumulant_hessian(model, grad).diagonal().maxCoeff());
    bool improved = false;
    while (eta > 1e-16) {
      const Vec trial = project_box(v - eta * grad, box);
      const Vec delta = trial - v;
      if (delta.norm() <= 1e-14 * (1.0 + v.norm())) break;
      auto next = eval(trial);
      if (next && next->first <= rate + 1e-4 * grad.dot(delta)) {
        v = trial;
        cur = next;
        improved = true;
        break;
      }
      eta *= 0.5;
    }
    if (!improved) break;
  }
  return std::pair{v, cur->first};
}

}  // namespace detail

/// argmin of I over the closure of the region, scanning every box of the product of
/// unions. Ties (within 1e-9 relative) resolve to the lexicographically smallest point.
inline DominatingPoint dominating_point(const ModelSpec& model, const ProductRegion& region) {
  if (region.empty()) throw ConfigError("region is empty");
  if (region.s() != model.s) throw ConfigError("region dimension does not match the model");
  const std::size_t boxes = region.box_count();
  if (boxes > (std::size_t{1} << 16)) throw BaselineUnavailable("region has too many boxes for dominating-point search");
  const Vec m0 = mean_map(model, Vec::Zero(model.s));

  std::vector<std::pair<Vec, double>> minima;
  for (std::size_t b = 0; b < boxes; ++b) {
    if (auto found = detail::minimize_rate_on_box(model, region.box(b), m0)) minima.push_back(std::move(*found));
  }
  if (minima.empty()) throw BaselineUnavailable("no attainable point in the region; dominating point undefined");

  double best = kInf;
  for (const auto& [v, rate] : minima) best = std::min(best, rate);
  DominatingPoint out;
  out.rate = best;
  for (const auto& [v, rate] : minima) {
    if (rate <= best + 1e-9 * std::max(1e-12, std::abs(best))) {
      ++out.multiplicity;
      const bool smaller = out.point.size() == 0 ||
                           std::lexicographical_compare(v.begin(), v.end(), out.point.begin(), out.point.end());
      if (smaller) out.point = v;
    }
  }
  return out;
}

}  // namespace raresum
