#pragma once

// Experiment files: INI-style blocks describing model, region, run settings, an optional
// one-parameter sweep, chain settings and the output path. See README.md for the grammar.
//
// Exit codes of run_experiment: 0 success, 2 unreadable or malformed file, 3 validation
// failure, 4 a scheme had every replicate abort (or another numerical breakdown).

#include "raresum/errors.hpp"
#include "raresum/estimate.hpp"
#include "raresum/meanchain.hpp"
#include "raresum/model.hpp"
#include "raresum/pathgen.hpp"
#include "raresum/region.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace raresum {

/// Unreadable file, INI syntax error, unknown key or a value of the wrong type.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RegionKind { two_sided, all, explicit_coordinates, whole_space };

struct RegionConfig {
  RegionKind kind = RegionKind::two_sided;
  double threshold = 0.0;
  IntervalUnion all;
  std::map<int, IntervalUnion> coordinates;  ///< 1-based
};

struct SweepConfig {
  std::string parameter;  ///< "d", "n" or "L"
  std::vector<double> values;
};

struct ExperimentConfig {
  std::string family;
  FamilyParams params;
  RegionConfig region;
  int n = 100;
  int L = 1000;
  std::uint64_t seed = 1;
  PathConfig path;
  std::vector<Scheme> schemes;
  std::optional<SweepConfig> sweep;
  MeanChainConfig chain;
  std::string csv;
};

struct Diagnostic {
  enum class Level { error, warning } level = Level::error;
  std::string message;
};

/// One fully instantiated sweep point.
struct ExperimentPoint {
  double sweep_value = 0.0;
  int n = 0;
  int L = 0;
  ModelSpec model;
  ProductRegion region;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(text);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(key + ": expected a number, got '" + s + "'");
  return value;
}

inline long long to_integer(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  long long value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError(key + ": expected an integer, got '" + s + "'");
  return value;
}

inline int to_int(const std::string& key, const std::string& text) {
  const long long v = to_integer(key, text);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ParseError(key + ": integer out of range");
  }
  return static_cast<int>(v);
}

inline bool to_bool(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ParseError(key + ": expected true or false, got '" + s + "'");
}

inline IntervalUnion to_union(const std::string& key, const std::string& text) {
  try {
    return parse_interval_union(text);
  } catch (const ConfigError& e) {
    throw ParseError(key + ": " + e.what());
  }
}

class Section {
 public:
  Section(const boost::property_tree::ptree* tree, std::string name, std::set<std::string> allowed)
      : tree_(tree), name_(std::move(name)) {
    if (!tree_) return;
    for (const auto& [key, child] : *tree_) {
      if (!child.empty()) throw ParseError("[" + name_ + "]: nested key '" + key + "'");
      if (!allowed.count(key) && !(name_ == "region" && key.rfind("coordinate", 0) == 0)) {
        throw ParseError("[" + name_ + "]: unknown key '" + key + "'");
      }
    }
  }

  bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }
  std::string get(const std::string& key) const { return trim(tree_->get<std::string>(key)); }
  std::string label(const std::string& key) const { return name_ + "." + key; }

  template <class F, class T>
  void read(const std::string& key, T& out, F convert) const {
    if (has(key)) out = convert(label(key), get(key));
  }

  const boost::property_tree::ptree* tree() const { return tree_; }

 private:
  const boost::property_tree::ptree* tree_;
  std::string name_;
};

inline Scheme parse_scheme(const std::string& name) {
  if (name == "adaptive") return Scheme::adaptive;
  if (name == "tilted-iid") return Scheme::tilted_iid;
  if (name == "naive") return Scheme::naive;
  throw ParseError("run.schemes: unknown scheme '" + name + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree root;
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  const std::set<std::string> sections{"model", "region", "run", "sweep", "chain", "output"};
  for (const auto& [name, child] : root) {
    if (!sections.count(name)) throw ParseError("unknown section [" + name + "]");
    if (!child.data().empty()) throw ParseError("key '" + name + "' outside of a section");
  }
  auto section = [&](const std::string& name) -> const pt::ptree* {
    auto it = root.find(name);
    return it == root.not_found() ? nullptr : &it->second;
  };
  using namespace detail;
  ExperimentConfig c;

  const Section model(section("model"), "model", {"family", "mu", "sigma", "rate", "d"});
  if (!model.has("family")) throw ParseError("model.family is required");
  c.family = model.get("family");
  model.read("mu", c.params.mu, to_double);
  model.read("sigma", c.params.sigma, to_double);
  model.read("rate", c.params.rate, to_double);
  model.read("d", c.params.d, to_int);

  const Section region(section("region"), "region", {"two_sided_threshold", "all", "whole_space"});
  if (!region.tree()) throw ParseError("[region] is required");
  int forms = 0;
  if (region.has("two_sided_threshold")) {
    ++forms;
    c.region.kind = RegionKind::two_sided;
    c.region.threshold = to_double(region.label("two_sided_threshold"), region.get("two_sided_threshold"));
  }
  if (region.has("all")) {
    ++forms;
    c.region.kind = RegionKind::all;
    c.region.all = to_union(region.label("all"), region.get("all"));
  }
  if (region.has("whole_space") && to_bool(region.label("whole_space"), region.get("whole_space"))) {
    ++forms;
    c.region.kind = RegionKind::whole_space;
  }
  for (const auto& [key, child] : *region.tree()) {
    if (key.rfind("coordinate", 0) != 0) continue;
    const int j = to_int(region.label(key), key.substr(10));
    if (j < 1) throw ParseError("region." + key + ": coordinates are numbered from 1");
    c.region.coordinates[j] = to_union(region.label(key), child.get_value<std::string>());
  }
  if (!c.region.coordinates.empty()) {
    ++forms;
    c.region.kind = RegionKind::explicit_coordinates;
  }
  if (forms != 1) {
    throw ParseError("[region] needs exactly one of two_sided_threshold, all, whole_space or coordinateN keys");
  }

  const Section run(section("run"), "run",
                    {"n", "k_mode", "k", "variant", "weighting", "mixture_components", "schemes", "L", "seed",
                     "tilt_tolerance", "tilt_max_iterations"});
  run.read("n", c.n, to_int);
  run.read("L", c.L, to_int);
  if (run.has("seed")) {
    const std::string s = run.get("seed");
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("run.seed: expected an unsigned integer");
    c.seed = v;
  }
  if (run.has("k_mode")) {
    const std::string m = run.get("k_mode");
    if (m == "default") c.path.k_mode = KMode::default_rule;
    else if (m == "gaussian-exact") c.path.k_mode = KMode::gaussian_exact;
    else if (m == "manual") c.path.k_mode = KMode::manual;
    else throw ParseError("run.k_mode: expected default, gaussian-exact or manual");
  }
  run.read("k", c.path.manual_k, to_int);
  if (run.has("variant")) {
    const std::string v = run.get("variant");
    if (v == "uniform-step") c.path.variant = Variant::uniform_step;
    else if (v == "paper-literal") c.path.variant = Variant::paper_literal;
    else throw ParseError("run.variant: expected uniform-step or paper-literal");
  }
  if (run.has("weighting")) {
    const std::string w = run.get("weighting");
    if (w == "mixture") c.path.weighting = Weighting::mixture;
    else if (w == "paired") c.path.weighting = Weighting::paired;
    else throw ParseError("run.weighting: expected mixture or paired");
  }
  run.read("mixture_components", c.path.mixture_components, to_int);
  run.read("tilt_tolerance", c.path.tilt.tolerance, to_double);
  run.read("tilt_max_iterations", c.path.tilt.max_iterations, to_int);
  c.schemes.clear();
  if (run.has("schemes")) {
    for (const auto& name : split_list(run.get("schemes"))) c.schemes.push_back(parse_scheme(name));
  } else {
    c.schemes.push_back(Scheme::adaptive);
  }

  const Section sweep(section("sweep"), "sweep", {"parameter", "values"});
  if (sweep.tree()) {
    SweepConfig s;
    if (!sweep.has("parameter")) throw ParseError("sweep.parameter is required in [sweep]");
    s.parameter = sweep.get("parameter");
    if (sweep.has("values")) {
      for (const auto& v : split_list(sweep.get("values"))) s.values.push_back(to_double("sweep.values", v));
    }
    c.sweep = s;
  }

  const Section chain(section("chain"), "chain",
                      {"burn_in", "thinning", "proposal_scale", "target", "restart_probability", "restart_window"});
  chain.read("burn_in", c.chain.burn_in, to_int);
  chain.read("thinning", c.chain.thinning, to_int);
  if (chain.has("proposal_scale")) {
    const auto parts = split_list(chain.get("proposal_scale"));
    c.chain.proposal_scale.resize(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t j = 0; j < parts.size(); ++j) {
      c.chain.proposal_scale[static_cast<Eigen::Index>(j)] = to_double("chain.proposal_scale", parts[j]);
    }
  }
  if (chain.has("target")) {
    const std::string t = chain.get("target");
    if (t == "auto") c.chain.target_kind = ChainTarget::automatic;
    else if (t == "exact-gaussian") c.chain.target_kind = ChainTarget::exact_gaussian;
    else if (t == "saddlepoint") c.chain.target_kind = ChainTarget::saddlepoint;
    else throw ParseError("chain.target: expected auto, exact-gaussian or saddlepoint");
  }
  chain.read("restart_probability", c.chain.restart_probability, to_double);
  chain.read("restart_window", c.chain.restart_window, to_double);

  const Section output(section("output"), "output", {"csv"});
  if (output.has("csv")) c.csv = output.get("csv");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read config file '" + path + "'");
  return parse_config(in);
}

inline std::vector<double> sweep_values(const ExperimentConfig& c) {
  if (c.sweep) return c.sweep->values;
  return {0.0};
}

/// Model and region for one sweep value.
inline ExperimentPoint instantiate(const ExperimentConfig& c, double sweep_value) {
  ExperimentPoint p;
  p.sweep_value = sweep_value;
  p.n = c.n;
  p.L = c.L;
  FamilyParams params = c.params;
  if (c.sweep) {
    const double rounded = std::round(sweep_value);
    if (rounded != sweep_value) throw ConfigError("sweep value " + format_number(sweep_value) + " is not an integer");
    const int v = static_cast<int>(rounded);
    if (c.sweep->parameter == "d") params.d = v;
    else if (c.sweep->parameter == "n") p.n = v;
    else if (c.sweep->parameter == "L") p.L = v;
    else throw ConfigError("sweep.parameter must be d, n or L");
  }
  const auto family = parse_family(c.family);
  if (!family) throw ConfigError("unknown model family '" + c.family + "'");
  p.model = builtin_model(*family, params);
  const int s = p.model.s;
  switch (c.region.kind) {
    case RegionKind::two_sided:
      if (!(c.region.threshold > 0.0)) throw ConfigError("two_sided_threshold must be > 0");
      p.region = ProductRegion::repeat(IntervalUnion::two_sided(c.region.threshold), s);
      break;
    case RegionKind::all:
      p.region = ProductRegion::repeat(c.region.all, s);
      break;
    case RegionKind::whole_space:
      p.region = ProductRegion::repeat(IntervalUnion::whole_line(), s);
      break;
    case RegionKind::explicit_coordinates: {
      std::vector<IntervalUnion> comps;
      for (int j = 1; j <= s; ++j) {
        auto it = c.region.coordinates.find(j);
        if (it == c.region.coordinates.end()) {
          throw ConfigError("region.coordinate" + std::to_string(j) + " missing (model has s = " + std::to_string(s) + ")");
        }
        comps.push_back(it->second);
      }
      if (static_cast<int>(c.region.coordinates.size()) != s || c.region.coordinates.rbegin()->first != s) {
        throw ConfigError("region lists " + std::to_string(c.region.coordinates.size()) +
                          " coordinates but the model has s = " + std::to_string(s));
      }
      p.region = ProductRegion(std::move(comps));
      break;
    }
  }
  if (p.region.empty()) throw ConfigError("region is empty");
  return p;
}

/// Every violated constraint of a parsed configuration; does not sample.
inline std::vector<Diagnostic> validate_config(const ExperimentConfig& c) {
  std::vector<Diagnostic> out;
  auto error = [&](std::string m) { out.push_back({Diagnostic::Level::error, std::move(m)}); };

  if (!parse_family(c.family)) error("unknown model family '" + c.family + "'");
  if (c.schemes.empty()) error("schemes list is empty");
  if (c.sweep) {
    if (c.sweep->values.empty()) error("sweep values list is empty");
    if (c.sweep->parameter != "d" && c.sweep->parameter != "n" && c.sweep->parameter != "L") {
      error("sweep.parameter must be d, n or L");
    }
  }
  try {
    c.chain.validate();
  } catch (const ConfigError& e) {
    error(e.what());
  }
  if (c.path.mixture_components < 0) error("mixture_components must be >= 0");
  if (!(c.path.tilt.tolerance > 0.0)) error("tilt_tolerance must be > 0");
  if (c.path.tilt.max_iterations < 1) error("tilt_max_iterations must be >= 1");
  if (!c.csv.empty()) {
    const auto parent = std::filesystem::path(c.csv).parent_path();
    if (!parent.empty() && !std::filesystem::is_directory(parent)) {
      error("output directory '" + parent.string() + "' does not exist");
    }
  }
  if (!out.empty() && !parse_family(c.family)) return out;
  if (c.sweep && (c.sweep->values.empty() || (c.sweep->parameter != "d" && c.sweep->parameter != "n" &&
                                              c.sweep->parameter != "L"))) {
    return out;
  }

  std::set<std::string> seen;
  auto once = [&](Diagnostic::Level level, const std::string& m) {
    if (seen.insert(m).second) out.push_back({level, m});
  };
  for (double value : sweep_values(c)) {
    const std::string where = c.sweep ? " (" + c.sweep->parameter + " = " + format_number(value) + ")" : "";
    ExperimentPoint p;
    try {
      p = instantiate(c, value);
    } catch (const ConfigError& e) {
      once(Diagnostic::Level::error, e.what() + where);
      continue;
    }
    if (p.L < 2) once(Diagnostic::Level::error, "L must be >= 2" + where);
    if (p.model.s >= p.n) once(Diagnostic::Level::error, "constraint count must be < n" + where);
    if (p.n < 3) {
      once(Diagnostic::Level::error, "n must be >= 3" + where);
    } else {
      try {
        select_k(p.n, c.path.k_mode, c.path.manual_k);
      } catch (const ConfigError& e) {
        once(Diagnostic::Level::error, e.what() + where);
      }
    }
    if (c.chain.proposal_scale.size() > 0 && c.chain.proposal_scale.size() != p.model.s) {
      once(Diagnostic::Level::error, "chain.proposal_scale needs one entry per constraint" + where);
    }
    const bool adaptive = std::find(c.schemes.begin(), c.schemes.end(), Scheme::adaptive) != c.schemes.end();
    if (adaptive && p.model.conjugacy == Conjugacy::generic) {
      once(Diagnostic::Level::error, "adaptive scheme needs a gaussian-identity or one-dimensional model" + where);
    }
    if (c.chain.target_kind == ChainTarget::exact_gaussian && p.model.conjugacy != Conjugacy::gaussian_identity) {
      once(Diagnostic::Level::error, "chain.target = exact-gaussian needs the gaussian-mean family" + where);
    }
    if (c.path.k_mode == KMode::gaussian_exact && p.model.conjugacy != Conjugacy::gaussian_identity) {
      once(Diagnostic::Level::warning, "k_mode = gaussian-exact is exact only for Gaussian models" + where);
    }
    const Vec m0 = mean_map(p.model, Vec::Zero(p.model.s));
    if (p.region.contains(m0)) {
      once(Diagnostic::Level::warning, "the mean of u(X) lies inside the region; the event is not rare" + where);
    }
  }
  return out;
}

inline bool has_errors(const std::vector<Diagnostic>& diags) {
  return std::any_of(diags.begin(), diags.end(), [](const Diagnostic& d) { return d.level == Diagnostic::Level::error; });
}

inline void print_diagnostics(const std::vector<Diagnostic>& diags, std::ostream& os) {
  for (const auto& d : diags) os << (d.level == Diagnostic::Level::error ? "error: " : "warning: ") << d.message << '\n';
}

struct RunSettings {
  int threads = 1;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool timing = false;
};

namespace detail {

inline std::string join_vec(const Vec& v) {
  std::string s;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (j) s += ' ';
    s += format_number(v[j]);
  }
  return s;
}

}  // namespace detail

/// Runs every sweep point and scheme; writes the CSV (and a `.chain.csv` sidecar with the mean
/// chain diagnostics of adaptive runs) and a summary table on `out`.
inline int run_experiment(ExperimentConfig config, const RunSettings& settings, std::ostream& out, std::ostream& err) {
  if (settings.seed) config.seed = *settings.seed;
  if (settings.out) config.csv = *settings.out;
  const auto diags = validate_config(config);
  print_diagnostics(diags, err);
  if (has_errors(diags)) return 3;

  std::vector<std::string> rows;
  std::vector<std::string> chain_rows;
  const std::string parameter = config.sweep ? config.sweep->parameter : "none";
  RunOptions opts;
  opts.threads = settings.threads;

  out << std::left << std::setw(8) << parameter << std::setw(12) << "scheme" << std::setw(18) << "p_hat"
      << std::setw(18) << "std_error" << std::setw(18) << "rel_error" << std::setw(10) << "hit_rate" << std::setw(8)
      << "aborts" << "wall_time" << '\n';
  for (double value : sweep_values(config)) {
    const ExperimentPoint p = instantiate(config, value);
    const SeedPlan seeds{config.seed, value};
    std::vector<EstimateReport> reports;
    for (Scheme scheme : config.schemes) {
      try {
        SchemeComparison one = compare_schemes(p.model, p.region, p.n, p.L, {scheme}, config.path, config.chain,
                                               seeds, opts);
        reports.push_back(std::move(one.reports.front()));
      } catch (const BaselineUnavailable& e) {
        err << "warning: " << to_string(scheme) << " skipped: " << e.what() << '\n';
      } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 3;
      } catch (const std::exception& e) {
        err << "error: " << to_string(scheme) << " failed: " << e.what() << '\n';
        return 4;
      }
    }
    for (const auto& r : reports) {
      for (const auto& w : r.warnings) err << "warning: " << to_string(r.scheme) << ": " << w << '\n';
      rows.push_back(csv_row(r, settings.timing));
      out << std::setw(8) << (config.sweep ? format_number(value) : "-") << std::setw(12) << to_string(r.scheme)
          << std::setw(18) << format_number(r.p_hat) << std::setw(18) << format_number(r.std_error) << std::setw(18)
          << format_number(r.relative_error) << std::setw(10) << format_number(r.hit_rate) << std::setw(8) << r.aborts
          << std::fixed << std::setprecision(2) << r.wall_time << "s" << std::defaultfloat << '\n';
      if (r.chain) {
        const auto& ch = *r.chain;
        chain_rows.push_back(parameter + ',' + format_number(value) + ',' + format_number(ch.acceptance_rate) + ',' +
                             std::to_string(ch.chain_length) + ',' + std::to_string(ch.target_failures) + ',' +
                             (ch.stuck ? "1" : "0") + ',' + detail::join_vec(ch.mean) + ',' +
                             detail::join_vec(ch.variance));
      }
    }
  }
  out << "relative error = std_error / p_hat\n";

  if (!config.csv.empty()) {
    std::ofstream csv(config.csv, std::ios::binary);
    if (!csv) {
      err << "error: cannot write '" << config.csv << "'\n";
      return 3;
    }
    csv << kCsvHeader << '\n';
    for (const auto& r : rows) csv << r << '\n';
    if (!chain_rows.empty()) {
      std::ofstream side(config.csv + ".chain.csv", std::ios::binary);
      side << "parameter,value,acceptance_rate,chain_length,target_failures,stuck,chain_mean,chain_variance\n";
      for (const auto& r : chain_rows) side << r << '\n';
    }
  } else {
    out << '\n' << kCsvHeader << '\n';
    for (const auto& r : rows) out << r << '\n';
  }
  return 0;
}

}  // namespace raresum
