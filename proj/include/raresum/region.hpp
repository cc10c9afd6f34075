#pragma once

// Target set A as a product over constraints of finite unions of intervals.
// Membership of v is the conjunction of per-coordinate memberships, matching the
// intersection event {sum_i u^(j)(X_i) in n A^(j) for every j}.
//
// Text syntax for one coordinate: intervals joined by "U", endpoints "inf"/"-inf"
// allowed, brackets give closedness, e.g. "(-inf, -0.28] U [0.28, inf)".

#include "raresum/errors.hpp"
#include "raresum/linalg.hpp"
#include "raresum/model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace raresum {

struct Interval {
  double lower = kNegInf;
  double upper = kInf;
  bool lower_closed = false;
  bool upper_closed = false;

  bool empty() const {
    if (lower > upper) return true;
    if (lower == upper) return !(lower_closed && upper_closed);
    return false;
  }
  bool contains(double x) const {
    const bool above = lower_closed ? x >= lower : x > lower;
    const bool below = upper_closed ? x <= upper : x < upper;
    return above && below;
  }
  bool bounded() const { return std::isfinite(lower) && std::isfinite(upper); }
  double distance(double x) const {
    if (x < lower) return lower - x;
    if (x > upper) return x - upper;
    return 0.0;
  }
  double clamp(double x) const { return std::clamp(x, lower, upper); }
  bool operator==(const Interval&) const = default;
};

class IntervalUnion {
 public:
  IntervalUnion() = default;
  explicit IntervalUnion(std::vector<Interval> intervals) : intervals_(std::move(intervals)) { normalize(); }

  static IntervalUnion whole_line() { return IntervalUnion({Interval{}}); }

  /// {x : |x| > a}, the two-sided threshold set.
  static IntervalUnion two_sided(double a) {
    return IntervalUnion({Interval{kNegInf, -a, false, false}, Interval{a, kInf, false, false}});
  }

  const std::vector<Interval>& intervals() const noexcept { return intervals_; }
  bool empty() const noexcept { return intervals_.empty(); }

  bool contains(double x) const {
    return std::any_of(intervals_.begin(), intervals_.end(), [x](const Interval& i) { return i.contains(x); });
  }

  double distance(double x) const {
    double best = kInf;
    for (const auto& i : intervals_) best = std::min(best, i.distance(x));
    return best;
  }

  bool operator==(const IntervalUnion&) const = default;

  /// Sorted, disjoint, non-adjacent, no empty members.
  void normalize() {
    std::erase_if(intervals_, [](const Interval& i) { return i.empty(); });
    std::sort(intervals_.begin(), intervals_.end(), [](const Interval& a, const Interval& b) {
      if (a.lower != b.lower) return a.lower < b.lower;
      return a.lower_closed && !b.lower_closed;
    });
    std::vector<Interval> merged;
    for (const auto& cur : intervals_) {
      if (!merged.empty()) {
        Interval& last = merged.back();
        const bool touches = cur.lower < last.upper || (cur.lower == last.upper && (cur.lower_closed || last.upper_closed));
        if (touches) {
          if (cur.upper > last.upper) {
            last.upper = cur.upper;
            last.upper_closed = cur.upper_closed;
          } else if (cur.upper == last.upper) {
            last.upper_closed = last.upper_closed || cur.upper_closed;
          }
          continue;
        }
      }
      merged.push_back(cur);
    }
    intervals_ = std::move(merged);
  }

 private:
  std::vector<Interval> intervals_;
};

class ProductRegion {
 public:
  ProductRegion() = default;
  explicit ProductRegion(std::vector<IntervalUnion> components) : components_(std::move(components)) {}

  static ProductRegion repeat(const IntervalUnion& u, int s) { return ProductRegion(std::vector<IntervalUnion>(s, u)); }

  int s() const noexcept { return static_cast<int>(components_.size()); }
  const std::vector<IntervalUnion>& components() const noexcept { return components_; }
  const IntervalUnion& operator[](int j) const { return components_[static_cast<std::size_t>(j)]; }

  bool empty() const {
    return components_.empty() ||
           std::any_of(components_.begin(), components_.end(), [](const IntervalUnion& c) { return c.empty(); });
  }

  bool contains(const Vec& v) const {
    if (v.size() != s()) throw ConfigError("region dimension mismatch: point has " + std::to_string(v.size()) +
                                           " coordinates, region has " + std::to_string(s()));
    for (int j = 0; j < s(); ++j) {
      if (!components_[static_cast<std::size_t>(j)].contains(v[j])) return false;
    }
    return true;
  }

  /// Number of boxes in the expansion of the product of unions.
  std::size_t box_count() const {
    std::size_t count = 1;
    for (const auto& c : components_) count *= c.intervals().size();
    return count;
  }

  /// The box with mixed-radix index `index`: one interval per coordinate.
  std::vector<Interval> box(std::size_t index) const {
    std::vector<Interval> out;
    out.reserve(components_.size());
    for (const auto& c : components_) {
      const auto& iv = c.intervals();
      out.push_back(iv[index % iv.size()]);
      index /= iv.size();
    }
    return out;
  }

 private:
  std::vector<IntervalUnion> components_;
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline double parse_endpoint(const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "inf" || s == "+inf") return kInf;
  if (s == "-inf") return kNegInf;
  double value = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw ConfigError("bad interval endpoint '" + s + "'");
  return value;
}

}  // namespace detail

inline Interval parse_interval(std::string_view text) {
  const std::string s = detail::trim(text);
  if (s.size() < 5) throw ConfigError("bad interval '" + s + "'");
  const char open = s.front();
  const char close = s.back();
  if ((open != '[' && open != '(') || (close != ']' && close != ')')) {
    throw ConfigError("interval must be written as [a, b], (a, b), [a, b) or (a, b]: '" + s + "'");
  }
  const std::string body = s.substr(1, s.size() - 2);
  const auto comma = body.find(',');
  if (comma == std::string::npos || body.find(',', comma + 1) != std::string::npos) {
    throw ConfigError("interval needs exactly one comma: '" + s + "'");
  }
  Interval i;
  i.lower = detail::parse_endpoint(body.substr(0, comma));
  i.upper = detail::parse_endpoint(body.substr(comma + 1));
  i.lower_closed = open == '[' && std::isfinite(i.lower);
  i.upper_closed = close == ']' && std::isfinite(i.upper);
  if (i.lower > i.upper) throw ConfigError("interval has lower > upper: '" + s + "'");
  return i;
}

/// Parses "I1 U I2 U ..." into a normalized union.
inline IntervalUnion parse_interval_union(std::string_view text) {
  std::vector<Interval> parts;
  std::string current;
  int depth = 0;
  for (char c : text) {
    if (c == '[' || c == '(') ++depth;
    if (c == ']' || c == ')') --depth;
    if (depth == 0 && c == 'U') {
      parts.push_back(parse_interval(current));
      current.clear();
      continue;
    }
    current.push_back(c);
  }
  if (depth != 0) throw ConfigError("unbalanced brackets in '" + std::string(text) + "'");
  if (detail::trim(current).empty()) throw ConfigError("empty interval list in '" + std::string(text) + "'");
  parts.push_back(parse_interval(current));
  return IntervalUnion(std::move(parts));
}

inline std::string format_interval_union(const IntervalUnion& u) {
  std::ostringstream os;
  os.precision(12);
  bool first = true;
  for (const auto& i : u.intervals()) {
    if (!first) os << " U ";
    first = false;
    os << (i.lower_closed ? '[' : '(');
    if (std::isinf(i.lower)) os << "-inf"; else os << i.lower;
    os << ", ";
    if (std::isinf(i.upper)) os << "inf"; else os << i.upper;
    os << (i.upper_closed ? ']' : ')');
  }
  if (first) os << "{}";
  return os.str();
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

/// A representative interior point of one interval, given the unconditioned mean m0 and the
/// standard deviation `sd` of the empirical mean.
inline double representative_point(const Interval& i, double m0, double sd) {
  if (i.bounded()) return 0.5 * (i.lower + i.upper);
  if (i.contains(m0) && i.lower < m0 && m0 < i.upper) return m0;
  if (!std::isfinite(i.lower) && !std::isfinite(i.upper)) return m0;
  if (std::isfinite(i.lower)) return i.lower + sd;
  return i.upper - sd;
}

/// Standard deviation of the empirical mean of coordinate j at sample size n.
inline Vec mean_scale(const ModelSpec& model, int n) {
  const Mat kappa0 = cumulant_hessian(model, Vec::Zero(model.s));
  return (kappa0.diagonal().array() / static_cast<double>(n)).sqrt().matrix();
}

/// Strictly interior starting point for the mean chain: per coordinate, the interval nearest
/// to m(0)_j, at its midpoint if bounded or one standard deviation of the mean inside its
/// finite endpoint otherwise.
inline Vec initial_point(const ProductRegion& region, const ModelSpec& model, int n) {
  if (region.empty()) throw ConfigError("region is empty");
  if (region.s() != model.s) throw ConfigError("region has " + std::to_string(region.s()) +
                                               " constraints but the model has s = " + std::to_string(model.s));
  const Vec m0 = mean_map(model, Vec::Zero(model.s));
  const Vec sd = mean_scale(model, n);
  Vec v(region.s());
  for (int j = 0; j < region.s(); ++j) {
    const auto& intervals = region[j].intervals();
    const Interval* nearest = &intervals.front();
    for (const auto& i : intervals) {
      if (i.distance(m0[j]) < nearest->distance(m0[j])) nearest = &i;
    }
    v[j] = representative_point(*nearest, m0[j], sd[j]);
  }
  return v;
}

/// Euclidean distance from v to the region (0 inside).
inline double clamp_distance(const ProductRegion& region, const Vec& v) {
  if (v.size() != region.s()) throw ConfigError("region dimension mismatch");
  double acc = 0.0;
  for (int j = 0; j < region.s(); ++j) {
    const double dj = region[j].distance(v[j]);
    acc += dj * dj;
  }
  return std::sqrt(acc);
}

}  // namespace raresum
