#include "fsvie/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace fsvie {

SlopeFit fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_linear: need >= 2 matching points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    syy += y[i] * y[i];
  }
  SlopeFit fit;
  const double den = n * sxx - sx * sx;
  fit.slope = (n * sxy - sx * sy) / den;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double ym = sy / n;
  for (size_t i = 0; i < x.size(); ++i) {
    const double pred = fit.intercept + fit.slope * x[i];
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - ym) * (y[i] - ym);
  }
  fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

SlopeFit fit_loglog(const std::vector<double>& abscissae,
                    const std::vector<double>& values, double floor) {
  std::vector<double> lx, ly;
  bool any_above = false;
  for (size_t i = 0; i < values.size(); ++i)
    if (values[i] > floor) any_above = true;
  if (!any_above) {
    SlopeFit fit;
    fit.degenerate = true;
    fit.r2 = 1.0;
    return fit;
  }
  for (size_t i = 0; i < values.size(); ++i) {
    if (values[i] <= floor)
      throw std::invalid_argument("fit_loglog: mixed zero and nonzero values");
    lx.push_back(std::log(abscissae[i]));
    ly.push_back(std::log(values[i]));
  }
  return fit_linear(lx, ly);
}

}  // namespace fsvie
