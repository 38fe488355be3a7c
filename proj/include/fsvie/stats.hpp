#pragma once

#include <vector>

namespace fsvie {

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool degenerate = false;  // all values at or below the floor
};

/// Least-squares fit of log(values) against log(abscissae). Values at or
/// below `floor` mark the fit degenerate instead of poisoning the logs.
SlopeFit fit_loglog(const std::vector<double>& abscissae,
                    const std::vector<double>& values, double floor = 1e-28);

/// Ordinary least squares y ~ a + b x.
SlopeFit fit_linear(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace fsvie
