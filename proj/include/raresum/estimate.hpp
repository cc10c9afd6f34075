#pragma once

// Estimators of P_n = P(U_{1,n} in nA): the adaptive scheme, the state-independent tilted
// baseline and naive Monte Carlo.
//
// Adaptive scheme. Conditioning points v_1..v_M come from the mean chain; replicate l draws a
// path from g_{n v_j} with j = l mod M. Two weightings are available:
//
//   mixture (default): w_l = p(Y) 1_E(Y) / gbar(Y), gbar = sum_j (n_j / L) g_{n v_j}, n_j the
//     number of replicates assigned to v_j. Summing over replicates,
//     E[sum_l w_l] = sum_j n_j int g_j p 1_E / gbar = L int p 1_E, so p_hat is unbiased for any
//     list of v's in A.
//   paired: w_l = p(Y) 1_E(Y) / g_{n v_l}(Y). Also unbiased given v_l, but its variance blows up
//     once the head is long: under g_{nv} the path mean is pinned to v within sqrt(n-k)/n, so
//     the weight behaves like f(Ybar)/N(Ybar; v, tau^2) with tau^2 ~ (n-k)/n^2.
//
// Per-replicate contributions are combined sequentially by index, so every reported number is
// reproducible bit-for-bit from the seed regardless of the thread count.

#include "raresum/errors.hpp"
#include "raresum/meanchain.hpp"
#include "raresum/model.hpp"
#include "raresum/pathgen.hpp"
#include "raresum/region.hpp"
#include "raresum/seeding.hpp"
#include "raresum/tilt.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace raresum {

enum class Scheme { adaptive, tilted_iid, naive };
enum class Weighting { mixture, paired };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::adaptive: return "adaptive";
    case Scheme::tilted_iid: return "tilted-iid";
    case Scheme::naive: return "naive";
  }
  return "?";
}

inline std::string to_string(Weighting w) { return w == Weighting::mixture ? "mixture" : "paired"; }

inline SchemeCode scheme_code(Scheme s) {
  switch (s) {
    case Scheme::adaptive: return SchemeCode::adaptive;
    case Scheme::tilted_iid: return SchemeCode::tilted_iid;
    case Scheme::naive: return SchemeCode::naive;
  }
  return SchemeCode::naive;
}

struct PathConfig {
  KMode k_mode = KMode::default_rule;
  int manual_k = 0;
  Variant variant = Variant::uniform_step;
  Weighting weighting = Weighting::mixture;
  /// Number of chain states the replicates cycle through. 0 picks L for gaussian-identity
  /// models (the mixture is cheap there) and 48 otherwise.
  int mixture_components = 0;
  TiltOptions tilt;
};

struct RunOptions {
  int threads = 1;
  bool keep_replicates = false;
};

struct ReplicateRecord {
  double weight = 0.0;
  bool hit = false;
  bool aborted = false;
  Vec sample_mean;  ///< u_{1,n}/n; empty when aborted
};

struct EstimateReport {
  Scheme scheme = Scheme::adaptive;
  int n = 0, k = 0, d = 0, s = 0, L = 0;
  std::uint64_t seed = 0;
  double p_hat = 0.0;
  double std_error = 0.0;
  double relative_error = kNaN;  ///< std_error / p_hat; NaN when p_hat = 0
  bool zero_hits = false;
  double weight_cv = kNaN;  ///< coefficient of variation of the nonzero weights
  double hit_rate = 0.0;
  long long aborts = 0;
  double wall_time = 0.0;

  std::vector<std::string> warnings;
  std::optional<MeanChainDiagnostics> chain;
  std::vector<ReplicateRecord> replicates;  ///< filled when RunOptions::keep_replicates
};

namespace detail {

/// Runs body(l) for l in [0, count) on up to `threads` workers. The first exception wins.
template <class Body>
void parallel_for(int count, int threads, Body&& body) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int l = 0; l < count; ++l) body(l);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int l = next++; l < count; l = next++) {
      try {
        body(l);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Sequential reduction of per-replicate records into a report.
inline void summarize(EstimateReport& r, const std::vector<ReplicateRecord>& recs) {
  const double L = static_cast<double>(recs.size());
  double sum = 0.0;
  long long hits = 0;
  for (const auto& rec : recs) {
    sum += rec.weight;
    if (rec.hit) ++hits;
    if (rec.aborted) ++r.aborts;
  }
  r.p_hat = sum / L;
  double ss = 0.0;
  for (const auto& rec : recs) ss += (rec.weight - r.p_hat) * (rec.weight - r.p_hat);
  r.std_error = recs.size() > 1 ? std::sqrt(ss / (L - 1.0)) / std::sqrt(L) : kNaN;
  r.hit_rate = static_cast<double>(hits) / L;
  r.zero_hits = !(r.p_hat > 0.0);
  r.relative_error = r.zero_hits ? kNaN : r.std_error / r.p_hat;

  double nz_sum = 0.0;
  long long nz = 0;
  for (const auto& rec : recs) {
    if (rec.weight > 0.0) {
      nz_sum += rec.weight;
      ++nz;
    }
  }
  if (nz >= 2) {
    const double mean = nz_sum / static_cast<double>(nz);
    double var = 0.0;
    for (const auto& rec : recs) {
      if (rec.weight > 0.0) var += (rec.weight - mean) * (rec.weight - mean);
    }
    r.weight_cv = std::sqrt(var / static_cast<double>(nz - 1)) / mean;
  }
  if (r.zero_hits) r.warnings.push_back("no replicate hit the event; relative error undefined");
}

inline void check_common(const ModelSpec& model, const ProductRegion& region, int n, int L) {
  if (L < 2) throw ConfigError("L must be >= 2");
  if (n < 1) throw ConfigError("n must be >= 1");
  if (region.empty()) throw ConfigError("region is empty");
  if (region.s() != model.s) {
    throw ConfigError("region has " + std::to_string(region.s()) + " constraints but the model has s = " +
                      std::to_string(model.s));
  }
  if (model.s >= n) throw ConfigError("constraint count must be < n");
}

inline EstimateReport base_report(Scheme scheme, const ModelSpec& model, int n, int k, int L, std::uint64_t seed) {
  EstimateReport r;
  r.scheme = scheme;
  r.n = n;
  r.k = k;
  r.d = model.d;
  r.s = model.s;
  r.L = L;
  r.seed = seed;
  return r;
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Mixture components: distinct chain states with their replicate counts.
struct Component {
  Vec v;
  double log_share = 0.0;  ///< log(n_j / L)
};

inline std::vector<Component> mixture_components(const std::vector<Vec>& states, int L, std::vector<int>& index_of) {
  const int M = static_cast<int>(states.size());
  std::map<std::vector<double>, int> seen;
  std::vector<Component> out;
  std::vector<int> counts;
  index_of.assign(static_cast<std::size_t>(M), 0);
  for (int j = 0; j < M; ++j) {
    const Vec& v = states[static_cast<std::size_t>(j)];
    const std::vector<double> key(v.data(), v.data() + v.size());
    auto [it, inserted] = seen.emplace(key, static_cast<int>(out.size()));
    if (inserted) {
      out.push_back({v, 0.0});
      counts.push_back(0);
    }
    index_of[static_cast<std::size_t>(j)] = it->second;
  }
  // Replicate l uses state l mod M.
  for (int l = 0; l < L; ++l) ++counts[static_cast<std::size_t>(index_of[static_cast<std::size_t>(l % M)])];
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c].log_share = counts[c] > 0 ? std::log(static_cast<double>(counts[c]) / L) : kNegInf;
  }
  return out;
}

}  // namespace detail

/// Adaptive estimate. The chain supplies the conditioning points; see the header comment for
/// the two weightings.
inline EstimateReport adaptive_estimate(const ModelSpec& model, const ProductRegion& region, int n, int L,
                                        const PathConfig& path, const MeanChainConfig& chain_config,
                                        const SeedPlan& seeds, const RunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  detail::check_common(model, region, n, L);
  if (model.conjugacy == Conjugacy::generic) {
    throw ConfigError("adaptive scheme needs a gaussian-identity or one-dimensional model");
  }
  const int k = select_k(n, path.k_mode, path.manual_k);
  EstimateReport report = detail::base_report(Scheme::adaptive, model, n, k, L, seeds.base);
  if (path.k_mode == KMode::gaussian_exact && model.conjugacy != Conjugacy::gaussian_identity) {
    report.warnings.push_back("k = n - 1 is exact only for Gaussian models");
  }
  if (path.mixture_components < 0) throw ConfigError("mixture_components must be >= 0");

  const bool gaussian = model.conjugacy == Conjugacy::gaussian_identity && model.gaussian;
  int M = L;
  if (path.weighting == Weighting::mixture) {
    M = path.mixture_components > 0 ? path.mixture_components : (gaussian ? L : 48);
    M = std::min(M, L);
  }

  Rng chain_rng(seeds.replicate(SchemeCode::adaptive, kChainStream));
  MeanChainResult chain = run_chain(model, region, n, chain_config, M, chain_rng);
  report.chain = chain.diagnostics;
  if (chain.diagnostics.stuck) report.warnings.push_back("mean chain accepted no proposal after burn-in");

  std::vector<int> index_of;
  const auto components = detail::mixture_components(chain.states, L, index_of);

  std::vector<ReplicateRecord> recs(static_cast<std::size_t>(L));
  detail::parallel_for(L, opts.threads, [&](int l) {
    ReplicateRecord& rec = recs[static_cast<std::size_t>(l)];
    Rng rng(seeds.replicate(SchemeCode::adaptive, static_cast<std::uint64_t>(l)));
    const int own = index_of[static_cast<std::size_t>(l % M)];
    const Vec& v = components[static_cast<std::size_t>(own)].v;
    PathSample sample;
    try {
      sample = sample_path(model, v, n, k, path.variant, rng, path.tilt);
    } catch (const PathAbort&) {
      rec.aborted = true;
      return;
    }
    rec.sample_mean = sample.sample_mean();
    rec.hit = region.contains(rec.sample_mean);
    if (!rec.hit) return;
    double log_g = sample.log_g;
    if (path.weighting == Weighting::mixture && components.size() > 1) {
      std::vector<double> terms(components.size());
      std::optional<GaussianPathForm> form;
      if (gaussian) form.emplace(model, n, k, path.variant, sample.points);
      for (std::size_t c = 0; c < components.size(); ++c) {
        double lg;
        if (static_cast<int>(c) == own) {
          lg = sample.log_g;
        } else if (form) {
          lg = form->log_density(components[c].v);
        } else {
          lg = path_log_density(model, components[c].v, n, k, path.variant, sample.points, path.tilt).total();
        }
        terms[c] = components[c].log_share + lg;
      }
      log_g = log_sum_exp(terms);
    }
    rec.weight = std::exp(sample.log_p - log_g);
  });

  detail::summarize(report, recs);
  if (report.aborts == L) throw NumericError("every replicate of the adaptive scheme aborted");
  if (report.aborts > 0) {
    report.warnings.push_back(std::to_string(report.aborts) + " adaptive path(s) aborted and were scored as zero");
  }
  if (opts.keep_replicates) report.replicates = std::move(recs);
  report.wall_time = detail::seconds_since(start);
  return report;
}

/// State-independent baseline: all n points i.i.d. from the tilted law centered at the
/// dominating point a*, weight exp(n K(t*) - <t*, U_{1,n}>) on the event.
inline EstimateReport tilted_iid_estimate(const ModelSpec& model, const ProductRegion& region, int n, int L,
                                          const SeedPlan& seeds, const RunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  detail::check_common(model, region, n, L);
  EstimateReport report = detail::base_report(Scheme::tilted_iid, model, n, 0, L, seeds.base);
  const DominatingPoint dom = dominating_point(model, region);
  if (dom.multiplicity > 1) {
    report.warnings.push_back("dominating point is not unique (" + std::to_string(dom.multiplicity) +
                              " minimizers); the baseline tilts to one of them only");
  }
  const TiltedSampler sampler(model, dom.point);
  const Vec t = sampler.t();
  const double k_t = model.cumulant(t);

  std::vector<ReplicateRecord> recs(static_cast<std::size_t>(L));
  detail::parallel_for(L, opts.threads, [&](int l) {
    ReplicateRecord& rec = recs[static_cast<std::size_t>(l)];
    Rng rng(seeds.replicate(SchemeCode::tilted_iid, static_cast<std::uint64_t>(l)));
    Vec u = Vec::Zero(model.s);
    for (int i = 0; i < n; ++i) u += model.statistic(sampler.sample(rng));
    rec.sample_mean = u / static_cast<double>(n);
    rec.hit = region.contains(rec.sample_mean);
    if (rec.hit) rec.weight = std::exp(n * k_t - t.dot(u));
  });

  detail::summarize(report, recs);
  if (opts.keep_replicates) report.replicates = std::move(recs);
  report.wall_time = detail::seconds_since(start);
  return report;
}

/// Plain Monte Carlo: fraction of runs drawn from p_X that land in the event.
inline EstimateReport naive_estimate(const ModelSpec& model, const ProductRegion& region, int n, int L,
                                     const SeedPlan& seeds, const RunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  detail::check_common(model, region, n, L);
  EstimateReport report = detail::base_report(Scheme::naive, model, n, 0, L, seeds.base);
  const StepKernel sampler(model, Vec::Zero(model.s));

  std::vector<ReplicateRecord> recs(static_cast<std::size_t>(L));
  detail::parallel_for(L, opts.threads, [&](int l) {
    ReplicateRecord& rec = recs[static_cast<std::size_t>(l)];
    Rng rng(seeds.replicate(SchemeCode::naive, static_cast<std::uint64_t>(l)));
    Vec u = Vec::Zero(model.s);
    for (int i = 0; i < n; ++i) u += model.statistic(sampler.sample(rng));
    rec.sample_mean = u / static_cast<double>(n);
    rec.hit = region.contains(rec.sample_mean);
    rec.weight = rec.hit ? 1.0 : 0.0;
  });

  detail::summarize(report, recs);
  if (opts.keep_replicates) report.replicates = std::move(recs);
  report.wall_time = detail::seconds_since(start);
  return report;
}

struct SchemeComparison {
  std::vector<EstimateReport> reports;
  /// relative_error(adaptive) / relative_error(tilted-iid); NaN unless both ran and hit.
  double relative_accuracy_ratio = kNaN;
};

/// Runs each scheme on the same (model, region, n, L). Relative accuracy is std_error / p_hat.
inline SchemeComparison compare_schemes(const ModelSpec& model, const ProductRegion& region, int n, int L,
                                        const std::vector<Scheme>& schemes, const PathConfig& path,
                                        const MeanChainConfig& chain, const SeedPlan& seeds,
                                        const RunOptions& opts = {}) {
  if (schemes.empty()) throw ConfigError("no schemes requested");
  SchemeComparison out;
  for (Scheme s : schemes) {
    switch (s) {
      case Scheme::adaptive: out.reports.push_back(adaptive_estimate(model, region, n, L, path, chain, seeds, opts)); break;
      case Scheme::tilted_iid: out.reports.push_back(tilted_iid_estimate(model, region, n, L, seeds, opts)); break;
      case Scheme::naive: out.reports.push_back(naive_estimate(model, region, n, L, seeds, opts)); break;
    }
  }
  const EstimateReport* a = nullptr;
  const EstimateReport* b = nullptr;
  for (const auto& r : out.reports) {
    if (r.scheme == Scheme::adaptive) a = &r;
    if (r.scheme == Scheme::tilted_iid) b = &r;
  }
  if (a && b && !a->zero_hits && !b->zero_hits) out.relative_accuracy_ratio = a->relative_error / b->relative_error;
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "scheme,n,k,d,s,L,seed,p_hat,std_error,relative_error,weight_cv,hit_rate,aborts,wall_time";

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

/// One CSV row. `with_timing = false` writes wall_time as 0 so that reruns are byte-identical.
inline std::string csv_row(const EstimateReport& r, bool with_timing = false) {
  std::string row = to_string(r.scheme);
  for (long long x : {static_cast<long long>(r.n), static_cast<long long>(r.k), static_cast<long long>(r.d),
                      static_cast<long long>(r.s), static_cast<long long>(r.L)}) {
    row += ',' + std::to_string(x);
  }
  row += ',' + std::to_string(r.seed);
  for (double x : {r.p_hat, r.std_error, r.relative_error, r.weight_cv, r.hit_rate}) row += ',' + format_number(x);
  row += ',' + std::to_string(r.aborts);
  row += ',' + format_number(with_timing ? r.wall_time : 0.0);
  return row;
}

}  // namespace raresum
