#include "fsvie/problem.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fsvie {

ControlProcess::ControlProcess(int control_dim, int paths, int steps, double fill)
    : m_(control_dim),
      paths_(paths),
      steps_(steps),
      values_(static_cast<size_t>(steps) * paths * control_dim, fill) {
  if (control_dim < 1 || paths < 1 || steps < 1)
    throw std::invalid_argument("ControlProcess: bad dimensions");
}

ControlProcess ControlProcess::constant(int control_dim, int paths, int steps,
                                        const std::vector<double>& value) {
  if (static_cast<int>(value.size()) != control_dim)
    throw std::invalid_argument("ControlProcess::constant: value size != control dim");
  ControlProcess u(control_dim, paths, steps);
  for (int k = 0; k < steps; ++k)
    for (int p = 0; p < paths; ++p)
      for (int i = 0; i < control_dim; ++i) u.value(k, p, i) = value[static_cast<size_t>(i)];
  return u;
}

ControlProcess ControlProcess::deterministic(
    int control_dim, int paths, const std::vector<std::vector<double>>& per_step) {
  ControlProcess u(control_dim, paths, static_cast<int>(per_step.size()));
  for (int k = 0; k < u.steps(); ++k) {
    if (static_cast<int>(per_step[static_cast<size_t>(k)].size()) != control_dim)
      throw std::invalid_argument("ControlProcess::deterministic: bad step value size");
    for (int p = 0; p < paths; ++p)
      for (int i = 0; i < control_dim; ++i)
        u.value(k, p, i) = per_step[static_cast<size_t>(k)][static_cast<size_t>(i)];
  }
  return u;
}

bool ControlProcess::is_adapted(const Filtration& filtration, double tol) const {
  for (int k = 0; k < steps_; ++k)
    if (!filtration.is_adapted(k, at(k), m_, tol)) return false;
  return true;
}

namespace {

// One finite-difference audit entry: coded derivative vs central difference.
struct FdCheck {
  double rel_err;
  std::string label;
};

double rel_err(double coded, double fd, double scale) {
  return std::abs(coded - fd) / std::max(1.0, std::max(std::abs(coded), scale));
}

}  // namespace

ValidationReport validate_h1_h2(const Problem& problem, const TimeGrid& grid,
                                int probe_count, std::uint64_t seed,
                                double fd_step, double tol) {
  if (probe_count < 1) throw std::invalid_argument("validate_h1_h2: probe_count >= 1");
  const int n = problem.state_dim();
  const int m = problem.control_dim();
  const int L = problem.num_objectives();
  ValidationReport report;
  std::uint64_t rng = seed ^ 0x5bf03635ULL;

  std::vector<double> x(n), u(m), xp(n), xm(n);
  std::vector<double> f0(n), fp(n), fm(n), jac(n * n), hess(n * n * n);
  std::vector<double> jp(n * n), jm(n * n);
  std::vector<double> gx(n), gxx(n * n), hx(n), hxx(n * n), sc1(L), sc2(L);

  auto note = [&](double e, const std::string& label) {
    if (e > report.max_derivative_mismatch) {
      report.max_derivative_mismatch = e;
      report.worst_entry = label;
    }
  };

  for (int probe = 0; probe < probe_count; ++probe) {
    const double t = grid.horizon() * uniform01(rng);
    const double s = t * uniform01(rng);
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] = 2.0 * uniform01(rng) - 1.0;
    for (int i = 0; i < m; ++i) u[static_cast<size_t>(i)] = 2.0 * uniform01(rng) - 1.0;

    for (int which = 0; which < 2; ++which) {
      auto f = [&](const double* xx, double* out) {
        which == 0 ? problem.b(t, s, xx, u.data(), out, 1)
                   : problem.sigma(t, s, xx, u.data(), out, 1);
      };
      auto fx = [&](const double* xx, double* out) {
        which == 0 ? problem.b_x(t, s, xx, u.data(), out, 1)
                   : problem.sigma_x(t, s, xx, u.data(), out, 1);
      };
      const char* nm = which == 0 ? "b" : "sigma";
      fx(x.data(), jac.data());
      which == 0 ? problem.b_xx(t, s, x.data(), u.data(), hess.data(), 1)
                 : problem.sigma_xx(t, s, x.data(), u.data(), hess.data(), 1);
      for (double v : jac)
        (which == 0 ? report.max_bx : report.max_sx) =
            std::max(which == 0 ? report.max_bx : report.max_sx, std::abs(v));
      for (double v : hess)
        (which == 0 ? report.max_bxx : report.max_sxx) =
            std::max(which == 0 ? report.max_bxx : report.max_sxx, std::abs(v));
      for (int j = 0; j < n; ++j) {
        xp = x; xm = x;
        xp[static_cast<size_t>(j)] += fd_step;
        xm[static_cast<size_t>(j)] -= fd_step;
        f(xp.data(), fp.data());
        f(xm.data(), fm.data());
        for (int i = 0; i < n; ++i) {
          const double fd = (fp[static_cast<size_t>(i)] - fm[static_cast<size_t>(i)]) / (2 * fd_step);
          note(rel_err(jac[static_cast<size_t>(i * n + j)], fd, 1.0), std::string(nm) + "_x");
        }
        fx(xp.data(), jp.data());
        fx(xm.data(), jm.data());
        for (int i = 0; i < n; ++i)
          for (int l = 0; l < n; ++l) {
            const double fd = (jp[static_cast<size_t>(i * n + l)] - jm[static_cast<size_t>(i * n + l)]) / (2 * fd_step);
            note(rel_err(hess[static_cast<size_t>(i * n * n + l * n + j)], fd, 1.0),
                 std::string(nm) + "_xx");
          }
      }
    }

    for (int l = 0; l < L; ++l) {
      problem.g_x(l, s, x.data(), u.data(), gx.data(), 1);
      problem.g_xx(l, s, x.data(), u.data(), gxx.data(), 1);
      problem.h_x(l, x.data(), hx.data(), 1);
      problem.h_xx(l, x.data(), hxx.data(), 1);
      for (double v : gxx) report.max_gxx = std::max(report.max_gxx, std::abs(v));
      for (double v : hxx) report.max_hxx = std::max(report.max_hxx, std::abs(v));
      for (int j = 0; j < n; ++j) {
        xp = x; xm = x;
        xp[static_cast<size_t>(j)] += fd_step;
        xm[static_cast<size_t>(j)] -= fd_step;
        problem.g(s, xp.data(), u.data(), sc1.data(), 1);
        problem.g(s, xm.data(), u.data(), sc2.data(), 1);
        note(rel_err(gx[static_cast<size_t>(j)],
                     (sc1[static_cast<size_t>(l)] - sc2[static_cast<size_t>(l)]) / (2 * fd_step), 1.0),
             "g_x");
        problem.h(xp.data(), sc1.data(), 1);
        problem.h(xm.data(), sc2.data(), 1);
        note(rel_err(hx[static_cast<size_t>(j)],
                     (sc1[static_cast<size_t>(l)] - sc2[static_cast<size_t>(l)]) / (2 * fd_step), 1.0),
             "h_x");
        std::vector<double> gxp(n), gxm(n), hxp(n), hxm(n);
        problem.g_x(l, s, xp.data(), u.data(), gxp.data(), 1);
        problem.g_x(l, s, xm.data(), u.data(), gxm.data(), 1);
        problem.h_x(l, xp.data(), hxp.data(), 1);
        problem.h_x(l, xm.data(), hxm.data(), 1);
        for (int i = 0; i < n; ++i) {
          note(rel_err(gxx[static_cast<size_t>(i * n + j)],
                       (gxp[static_cast<size_t>(i)] - gxm[static_cast<size_t>(i)]) / (2 * fd_step), 1.0),
               "g_xx");
          note(rel_err(hxx[static_cast<size_t>(i * n + j)],
                       (hxp[static_cast<size_t>(i)] - hxm[static_cast<size_t>(i)]) / (2 * fd_step), 1.0),
               "h_xx");
        }
      }
    }
  }
  report.passed = report.max_derivative_mismatch <= tol;
  return report;
}

}  // namespace fsvie
