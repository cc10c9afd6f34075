#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace raresum {

/// Invalid user configuration: parameters, regions, k, unsupported model/scheme combinations.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A tilt argument outside the cumulant domain.
class DomainError : public std::domain_error {
 public:
  DomainError(const std::string& what, std::size_t coordinate)
      : std::domain_error(what), coordinate_(coordinate) {}
  std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t coordinate_;
};

/// Numerical breakdown, e.g. a Hessian that is not positive definite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// m(t) = alpha could not be solved: alpha is (numerically) outside the attainable mean range.
class SteepnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A path could not be continued at the given step (tilt unsolvable, density underflow).
class PathAbort : public std::runtime_error {
 public:
  PathAbort(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// The state-independent baseline has no finite dominating point to tilt to.
class BaselineUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace raresum
