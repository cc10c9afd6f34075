#pragma once

// Metropolis-Hastings sampling of conditioning points v from the law of U_{1,n}/n given
// U_{1,n} in nA. The normalizing constant P(U_{1,n} in nA) cancels in the acceptance ratio,
// so only an unnormalized density of the empirical mean is needed: exact for Gaussian
// identity models, first-order saddlepoint otherwise.
//
// Proposal: with probability 1 - restart_probability a Gaussian random walk; otherwise an
// independent draw from a mixture over the boxes of the region (see detail::restart_boxes),
// which lets the chain move between disconnected pieces of A.

#include "raresum/errors.hpp"
#include "raresum/model.hpp"
#include "raresum/region.hpp"
#include "raresum/tilt.hpp"

#include <string>
#include <vector>

namespace raresum {

enum class ChainTarget { automatic, exact_gaussian, saddlepoint };

inline std::string to_string(ChainTarget t) {
  switch (t) {
    case ChainTarget::automatic: return "auto";
    case ChainTarget::exact_gaussian: return "exact-gaussian";
    case ChainTarget::saddlepoint: return "saddlepoint";
  }
  return "?";
}

struct MeanChainConfig {
  int burn_in = 1000;
  int thinning = 5;
  Vec proposal_scale;  ///< empty: sqrt(kappa_jj(0) / n) per coordinate
  ChainTarget target_kind = ChainTarget::automatic;
  double restart_probability = 0.1;
  double restart_window = 6.0;  ///< half-width of uniform restart windows, in sd of the mean

  void validate() const {
    if (burn_in < 0) throw ConfigError("chain burn_in must be >= 0");
    if (thinning < 1) throw ConfigError("chain thinning must be >= 1");
    if (proposal_scale.size() > 0 && (proposal_scale.array() <= 0.0).any()) {
      throw ConfigError("chain proposal_scale must be positive");
    }
    if (restart_probability < 0.0 || restart_probability >= 1.0) {
      throw ConfigError("chain restart_probability must be in [0, 1)");
    }
    if (!(restart_window > 0.0)) throw ConfigError("chain restart_window must be positive");
  }
};

struct MeanChainDiagnostics {
  double acceptance_rate = 0.0;  ///< over post-burn-in iterations
  long long accepted = 0;
  long long proposals = 0;
  int chain_length = 0;  ///< returned states
  Vec mean;
  Vec variance;
  long long target_failures = 0;  ///< saddlepoint evaluations that failed inside A
  bool stuck = false;
  ChainTarget target_kind = ChainTarget::exact_gaussian;
};

struct MeanChainResult {
  std::vector<Vec> states;
  MeanChainDiagnostics diagnostics;
};

inline ChainTarget resolve_target(const ModelSpec& model, ChainTarget requested) {
  if (requested != ChainTarget::automatic) return requested;
  return model.conjugacy == Conjugacy::gaussian_identity && model.gaussian ? ChainTarget::exact_gaussian
                                                                          : ChainTarget::saddlepoint;
}

/// Unnormalized log-density of U_{1,n}/n restricted to the region.
/// exact-gaussian: -n (v - mu)' Sigma^-1 (v - mu) / 2.
/// saddlepoint:    -n I(v) - log det kappa(t_v) / 2.
inline double target_logdensity(const ModelSpec& model, const ProductRegion& region, int n, const Vec& v,
                                ChainTarget kind = ChainTarget::automatic, long long* failures = nullptr) {
  if (!region.contains(v)) return kNegInf;
  kind = resolve_target(model, kind);
  if (kind == ChainTarget::exact_gaussian) {
    if (!model.gaussian) throw ConfigError("exact-gaussian chain target needs a Gaussian identity model");
    const Vec diff = v - model.gaussian->mean;
    return -0.5 * n * diff.dot(model.gaussian->cov.ldlt().solve(diff));
  }
  try {
    const TiltSolution sol = solve_tilt(model, v);
    const double rate = sol.t.dot(v) - model.cumulant(sol.t);
    const double log_det = std::log(sol.local.covariance.determinant());
    return -n * rate - 0.5 * log_det;
  } catch (const std::exception&) {
    if (failures) ++*failures;
    return kNegInf;
  }
}

namespace detail {

// Independence proposal used for restarts: a mixture over the boxes of the region. Within a
// box each coordinate is drawn independently, from an exponential decaying away from the
// finite endpoint nearest to m(0)_j (truncated at the far endpoint), or uniformly on a window
// when the interval contains m(0)_j. The decay rate n (a - m0_j) / kappa_jj(0) is the slope of
// the Gaussian approximation of -n I at the endpoint.
struct RestartCoord {
  enum class Kind { uniform, up, down } kind = Kind::uniform;
  double lo = 0.0, hi = 0.0;  ///< support; for up/down `lo`/`hi` is the anchor endpoint
  double rate = 0.0;
  double log_mass = 0.0;  ///< log(1 - exp(-rate * length)) for truncated exponentials

  double sample(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    if (kind == Kind::uniform) return lo + (hi - lo) * u;
    const double x = -std::log1p(-u * std::exp(log_mass)) / rate;
    return kind == Kind::up ? lo + x : hi - x;
  }

  double log_density(double x) const {
    if (!(x >= lo && x <= hi)) return kNegInf;
    if (kind == Kind::uniform) return -std::log(hi - lo);
    const double dist = kind == Kind::up ? x - lo : hi - x;
    return std::log(rate) - rate * dist - log_mass;
  }
};

struct RestartBox {
  std::vector<RestartCoord> coords;
  double log_weight = 0.0;
};

inline RestartCoord restart_coord(const Interval& iv, double m0, double sd, double n_over_var, double window) {
  RestartCoord c;
  const bool below = std::isfinite(iv.lower) && m0 < iv.lower;
  const bool above = std::isfinite(iv.upper) && m0 > iv.upper;
  if (below || above) {
    const double anchor = below ? iv.lower : iv.upper;
    c.rate = n_over_var * std::abs(anchor - m0);
    const double length = iv.upper - iv.lower;
    if (c.rate * sd > 1e-6) {
      c.kind = below ? RestartCoord::Kind::up : RestartCoord::Kind::down;
      c.lo = below ? iv.lower : (std::isfinite(iv.lower) ? iv.lower : kNegInf);
      c.hi = below ? (std::isfinite(iv.upper) ? iv.upper : kInf) : iv.upper;
      c.log_mass = std::isfinite(length) ? std::log(-std::expm1(-c.rate * length)) : 0.0;
      return c;
    }
  }
  const double center = representative_point(iv, m0, sd);
  c.kind = RestartCoord::Kind::uniform;
  c.lo = std::max(iv.lower, center - window * sd);
  c.hi = std::min(iv.upper, center + window * sd);
  return c;
}

template <class Target>
std::vector<RestartBox> restart_boxes(const ProductRegion& region, const Vec& m0, const Vec& scale, const Vec& var0,
                                      int n, double window, Target&& target) {
  std::vector<RestartBox> out;
  const std::size_t count = region.box_count();
  if (count > 4096) return out;
  for (std::size_t b = 0; b < count; ++b) {
    const auto box = region.box(b);
    RestartBox rb;
    bool ok = true;
    Vec probe(static_cast<Eigen::Index>(box.size()));
    double log_extent = 0.0;
    for (std::size_t j = 0; j < box.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const RestartCoord c = restart_coord(box[j], m0[jj], scale[jj], n / var0[jj], window);
      if (!(c.hi > c.lo)) ok = false;
      // A point one decay length inside the box, and the box's effective extent.
      switch (c.kind) {
        case RestartCoord::Kind::uniform:
          probe[jj] = 0.5 * (c.lo + c.hi);
          log_extent += std::log(c.hi - c.lo);
          break;
        case RestartCoord::Kind::up:
          probe[jj] = std::min(c.lo + 1.0 / c.rate, 0.5 * (c.lo + c.hi));
          log_extent += c.log_mass - std::log(c.rate) + 1.0;
          break;
        case RestartCoord::Kind::down:
          probe[jj] = std::max(c.hi - 1.0 / c.rate, 0.5 * (c.lo + c.hi));
          log_extent += c.log_mass - std::log(c.rate) + 1.0;
          break;
      }
      rb.coords.push_back(c);
    }
    if (!ok) continue;
    rb.log_weight = target(probe) + log_extent;
    out.push_back(std::move(rb));
  }
  if (out.empty()) return out;
  // Normalize, then mix with a uniform share so that no box is starved by a poor estimate.
  std::vector<double> lw;
  for (const auto& rb : out) lw.push_back(rb.log_weight);
  const double total = log_sum_exp(lw);
  const double B = static_cast<double>(out.size());
  for (auto& rb : out) {
    const double w = std::isfinite(total) && std::isfinite(rb.log_weight) ? std::exp(rb.log_weight - total) : 0.0;
    rb.log_weight = std::log(0.9 * w + 0.1 / B);
  }
  return out;
}

inline Vec restart_sample(const std::vector<RestartBox>& boxes, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  std::size_t pick = boxes.size() - 1;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    u -= std::exp(boxes[b].log_weight);
    if (u <= 0.0) {
      pick = b;
      break;
    }
  }
  const auto& coords = boxes[pick].coords;
  Vec v(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t j = 0; j < coords.size(); ++j) v[static_cast<Eigen::Index>(j)] = coords[j].sample(rng);
  return v;
}

inline double restart_logdensity(const std::vector<RestartBox>& boxes, const Vec& v) {
  std::vector<double> terms;
  terms.reserve(boxes.size());
  for (const auto& b : boxes) {
    double lp = b.log_weight;
    for (std::size_t j = 0; j < b.coords.size() && std::isfinite(lp); ++j) {
      lp += b.coords[j].log_density(v[static_cast<Eigen::Index>(j)]);
    }
    terms.push_back(lp);
  }
  return log_sum_exp(terms);
}

}  // namespace detail

/// Acceptance probability of a Metropolis-Hastings move from log target `from` to `to`,
/// with log proposal correction `log_q_ratio` = log q(to -> from) - log q(from -> to).
inline double acceptance_probability(double log_target_from, double log_target_to, double log_q_ratio = 0.0) {
  if (!std::isfinite(log_target_to)) return 0.0;
  if (!std::isfinite(log_target_from)) return 1.0;
  const double log_ratio = log_target_to - log_target_from + log_q_ratio;
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

/// `count` states after burn-in, keeping every `thinning`-th iterate.
inline MeanChainResult run_chain(const ModelSpec& model, const ProductRegion& region, int n,
                                 const MeanChainConfig& config, int count, Rng& rng) {
  config.validate();
  if (count < 1) throw ConfigError("chain count must be >= 1");
  if (region.empty()) throw ConfigError("region is empty");
  if (region.s() != model.s) throw ConfigError("region dimension does not match the model");

  const ChainTarget kind = resolve_target(model, config.target_kind);
  const Vec scale = config.proposal_scale.size() == model.s ? config.proposal_scale : mean_scale(model, n);
  const Vec m0 = mean_map(model, Vec::Zero(model.s));
  const Vec var0 = cumulant_hessian(model, Vec::Zero(model.s)).diagonal();

  MeanChainResult result;
  auto& diag = result.diagnostics;
  diag.target_kind = kind;
  auto target = [&](const Vec& v) { return target_logdensity(model, region, n, v, kind, &diag.target_failures); };
  const auto boxes = detail::restart_boxes(region, m0, mean_scale(model, n), var0, n, config.restart_window,
                                           [&](const Vec& v) { return target_logdensity(model, region, n, v, kind); });
  const double restart_p = boxes.empty() ? 0.0 : config.restart_probability;

  Vec current = initial_point(region, model, n);
  double current_lp = target(current);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const long long total = static_cast<long long>(config.burn_in) + static_cast<long long>(count) * config.thinning;
  result.states.reserve(static_cast<std::size_t>(count));
  for (long long iter = 0; iter < total; ++iter) {
    Vec proposal(model.s);
    double log_q_ratio = 0.0;
    if (unif(rng) < restart_p) {
      proposal = detail::restart_sample(boxes, rng);
      log_q_ratio = detail::restart_logdensity(boxes, current) - detail::restart_logdensity(boxes, proposal);
    } else {
      for (int j = 0; j < model.s; ++j) proposal[j] = current[j] + scale[j] * normal(rng);
    }
    const double proposal_lp = target(proposal);
    const bool accept = unif(rng) < acceptance_probability(current_lp, proposal_lp, log_q_ratio);
    if (accept) {
      current = proposal;
      current_lp = proposal_lp;
    }
    if (iter >= config.burn_in) {
      ++diag.proposals;
      if (accept) ++diag.accepted;
      if ((iter - config.burn_in + 1) % config.thinning == 0) result.states.push_back(current);
    }
  }

  diag.chain_length = static_cast<int>(result.states.size());
  diag.acceptance_rate = diag.proposals > 0 ? static_cast<double>(diag.accepted) / diag.proposals : 0.0;
  diag.stuck = diag.accepted == 0;
  diag.mean = Vec::Zero(model.s);
  diag.variance = Vec::Zero(model.s);
  for (const auto& v : result.states) diag.mean += v;
  diag.mean /= static_cast<double>(result.states.size());
  for (const auto& v : result.states) diag.variance += (v - diag.mean).array().square().matrix();
  if (result.states.size() > 1) diag.variance /= static_cast<double>(result.states.size() - 1);
  return result;
}

}  // namespace raresum
