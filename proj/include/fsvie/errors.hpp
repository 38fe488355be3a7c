#pragma once

#include <stdexcept>
#include <string>

namespace fsvie {

/// Unknown registry name or missing resource.
class NotFoundError : public std::runtime_error {
 public:
  explicit NotFoundError(const std::string& what) : std::runtime_error(what) {}
};

/// A forward solve or cost evaluation produced a non-finite value.
class NumericalBlowup : public std::runtime_error {
 public:
  NumericalBlowup(const std::string& what, int path, int step)
      : std::runtime_error(what + " (path " + std::to_string(path) + ", step " +
                           std::to_string(step) + ")"),
        path(path),
        step(step) {}
  int path = -1;
  int step = -1;
};

/// A fixed-point iteration exceeded its iteration budget.
class NoConvergence : public std::runtime_error {
 public:
  NoConvergence(const std::string& what, int iterations, double last_ratio)
      : std::runtime_error(what + " after " + std::to_string(iterations) +
                           " iterations (last ratio " +
                           std::to_string(last_ratio) + ")"),
        iterations(iterations),
        last_ratio(last_ratio) {}
  int iterations = 0;
  double last_ratio = 0.0;
};

/// Regression design matrix is rank deficient beyond what ridge can rescue.
class IllConditioned : public std::runtime_error {
 public:
  explicit IllConditioned(const std::string& what) : std::runtime_error(what) {}
};

/// A computed quantity violated a structural invariant (e.g. symmetry).
class InternalConsistencyError : public std::runtime_error {
 public:
  explicit InternalConsistencyError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace fsvie
