#include "fsvie/forward.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fsvie/errors.hpp"

namespace fsvie {

namespace {

void check_finite(const double* values, int paths, int n, int step,
                  const char* what) {
  for (int p = 0; p < paths; ++p)
    for (int i = 0; i < n; ++i)
      if (!std::isfinite(values[static_cast<size_t>(p) * n + i]))
        throw NumericalBlowup(std::string(what) + ": non-finite state", p, step);
}

void check_window(const SpikeWindow& w, int steps) {
  if (w.width < 1 || w.tau_index < 0 || w.tau_index + w.width > steps)
    throw std::invalid_argument("spike window out of range or empty");
}

}  // namespace

StateEnsemble solve_fsvie(const Problem& problem, const TimeGrid& grid,
                          const NoiseEnsemble& noise, const ControlProcess& control) {
  const int n = problem.state_dim();
  const int paths = noise.paths();
  const int steps = grid.steps();
  if (control.paths() != paths || control.steps() != steps)
    throw std::invalid_argument("solve_fsvie: control not on the noise grid");
  if (control.control_dim() != problem.control_dim())
    throw std::invalid_argument("solve_fsvie: control dimension mismatch");

  StateEnsemble out(n, paths, steps);
  const double dt = grid.dt();
  std::vector<double> acc(static_cast<size_t>(paths) * n);
  std::vector<double> row(static_cast<size_t>(paths) * n);
  std::vector<double> phi(static_cast<size_t>(n));

  for (int j = 0; j <= steps; ++j) {
    const double tj = grid.node(j);
    problem.phi(tj, phi.data());
    double* xj = out.at(j);
    for (int p = 0; p < paths; ++p)
      for (int i = 0; i < n; ++i) xj[static_cast<size_t>(p) * n + i] = phi[static_cast<size_t>(i)];
    if (j == 0) continue;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int k = 0; k < j; ++k) {
      const double tk = grid.node(k);
      problem.b(tj, tk, out.at(k), control.at(k), row.data(), paths);
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += dt * row[i];
      problem.sigma(tj, tk, out.at(k), control.at(k), row.data(), paths);
      const double* dw = noise.increments_at(k);
      for (int p = 0; p < paths; ++p) {
        const double w = dw[p];
        for (int i = 0; i < n; ++i) acc[static_cast<size_t>(p) * n + i] += w * row[static_cast<size_t>(p) * n + i];
      }
    }
    for (size_t i = 0; i < acc.size(); ++i) xj[i] += acc[i];
    check_finite(xj, paths, n, j, "solve_fsvie");
  }
  out.provenance = problem.name();
  return out;
}

StateEnsemble solve_x1(const FrozenCoefficients& frozen, const NoiseEnsemble& noise,
                       const SpikeWindow& window) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  check_window(window, steps);
  if (noise.paths() != paths)
    throw std::invalid_argument("solve_x1: noise/frozen path mismatch");

  StateEnsemble x1(n, paths, steps);
  const double dt = frozen.grid().dt();
  std::vector<double> jac(static_cast<size_t>(paths) * n * n);
  std::vector<double> ds(static_cast<size_t>(paths) * n);

  for (int j = 1; j <= steps; ++j) {
    double* out = x1.at(j);
    // X1 is zero until the window opens; the recursion below preserves it.
    for (int k = window.tau_index; k < j; ++k) {
      const double* xk = x1.at(k);
      const double* dw = noise.increments_at(k);
      frozen.bx(j, k, jac.data());
      for (int p = 0; p < paths; ++p) {
        const double* J = jac.data() + static_cast<size_t>(p) * n * n;
        const double* v = xk + static_cast<size_t>(p) * n;
        double* o = out + static_cast<size_t>(p) * n;
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int l = 0; l < n; ++l) s += J[static_cast<size_t>(i) * n + l] * v[static_cast<size_t>(l)];
          o[static_cast<size_t>(i)] += dt * s;
        }
      }
      frozen.sx(j, k, jac.data());
      const bool forced = window.contains(k);
      if (forced) frozen.dsigma(j, k, ds.data());
      for (int p = 0; p < paths; ++p) {
        const double* J = jac.data() + static_cast<size_t>(p) * n * n;
        const double* v = xk + static_cast<size_t>(p) * n;
        double* o = out + static_cast<size_t>(p) * n;
        const double w = dw[p];
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int l = 0; l < n; ++l) s += J[static_cast<size_t>(i) * n + l] * v[static_cast<size_t>(l)];
          if (forced) s += ds[static_cast<size_t>(p) * n + i];
          o[static_cast<size_t>(i)] += w * s;
        }
      }
    }
    check_finite(out, paths, n, j, "solve_x1");
  }
  x1.provenance = "x1";
  return x1;
}

StateEnsemble solve_x2(const FrozenCoefficients& frozen, const NoiseEnsemble& noise,
                       const SpikeWindow& window, const StateEnsemble& x1) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  check_window(window, steps);
  if (x1.paths() != paths || x1.steps() != steps)
    throw std::invalid_argument("solve_x2: x1 not on the same discretization");

  StateEnsemble x2(n, paths, steps);
  const double dt = frozen.grid().dt();
  std::vector<double> jac(static_cast<size_t>(paths) * n * n);
  std::vector<double> hess(static_cast<size_t>(paths) * n * n * n);
  std::vector<double> vec(static_cast<size_t>(paths) * n);
  std::vector<double> dsx(static_cast<size_t>(paths) * n * n);

  auto quad_form = [n](const double* H, const double* v, int i) {
    // v^T H_i v with H_i the i-th component Hessian.
    double s = 0.0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        s += H[static_cast<size_t>(i) * n * n + a * n + b] * v[a] * v[b];
    return s;
  };

  for (int j = 1; j <= steps; ++j) {
    double* out = x2.at(j);
    for (int k = window.tau_index; k < j; ++k) {
      const double* x2k = x2.at(k);
      const double* x1k = x1.at(k);
      const double* dw = noise.increments_at(k);
      const bool forced = window.contains(k);

      // Drift: bx X2 + bxx X1^2 / 2 + db 1_w.
      frozen.bx(j, k, jac.data());
      frozen.bxx(j, k, hess.data());
      if (forced) frozen.db(j, k, vec.data());
      for (int p = 0; p < paths; ++p) {
        const double* J = jac.data() + static_cast<size_t>(p) * n * n;
        const double* H = hess.data() + static_cast<size_t>(p) * n * n * n;
        const double* v2 = x2k + static_cast<size_t>(p) * n;
        const double* v1 = x1k + static_cast<size_t>(p) * n;
        double* o = out + static_cast<size_t>(p) * n;
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int l = 0; l < n; ++l) s += J[static_cast<size_t>(i) * n + l] * v2[static_cast<size_t>(l)];
          s += 0.5 * quad_form(H, v1, i);
          if (forced) s += vec[static_cast<size_t>(p) * n + i];
          o[static_cast<size_t>(i)] += dt * s;
        }
      }

      // Diffusion: sx X2 + sxx X1^2 / 2 + dsx X1 1_w.
      frozen.sx(j, k, jac.data());
      frozen.sxx(j, k, hess.data());
      if (forced) frozen.dsx(j, k, dsx.data());
      for (int p = 0; p < paths; ++p) {
        const double* J = jac.data() + static_cast<size_t>(p) * n * n;
        const double* H = hess.data() + static_cast<size_t>(p) * n * n * n;
        const double* v2 = x2k + static_cast<size_t>(p) * n;
        const double* v1 = x1k + static_cast<size_t>(p) * n;
        double* o = out + static_cast<size_t>(p) * n;
        const double w = dw[p];
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int l = 0; l < n; ++l) s += J[static_cast<size_t>(i) * n + l] * v2[static_cast<size_t>(l)];
          s += 0.5 * quad_form(H, v1, i);
          if (forced) {
            const double* D = dsx.data() + static_cast<size_t>(p) * n * n;
            for (int l = 0; l < n; ++l) s += D[static_cast<size_t>(i) * n + l] * v1[static_cast<size_t>(l)];
          }
          o[static_cast<size_t>(i)] += w * s;
        }
      }
    }
    check_finite(out, paths, n, j, "solve_x2");
  }
  x2.provenance = "x2";
  return x2;
}

TwoParamEnsemble solve_aux_x1(const FrozenCoefficients& frozen,
                              const NoiseEnsemble& noise, const SpikeWindow& window,
                              const StateEnsemble& x1) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  check_window(window, steps);

  TwoParamEnsemble aux(n, paths, steps);
  const double dt = frozen.grid().dt();
  std::vector<double> jac(static_cast<size_t>(paths) * n * n);
  std::vector<double> ds(static_cast<size_t>(paths) * n);

  // A(j, r) accumulates over k < r; build incrementally in r for each j.
  for (int j = 0; j <= steps; ++j) {
    for (int r = 1; r <= j; ++r) {
      const int k = r - 1;
      double* cur = aux.at(j, r);
      const double* prev = aux.at(j, r - 1);
      std::copy(prev, prev + static_cast<size_t>(paths) * n, cur);
      if (k < window.tau_index) continue;  // X1 and the forcing vanish there
      const double* x1k = x1.at(k);
      const double* dw = noise.increments_at(k);
      const bool forced = window.contains(k);
      frozen.bx(j, k, jac.data());
      for (int p = 0; p < paths; ++p) {
        const double* J = jac.data() + static_cast<size_t>(p) * n * n;
        const double* v = x1k + static_cast<size_t>(p) * n;
        double* o = cur + static_cast<size_t>(p) * n;
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int l = 0; l < n; ++l) s += J[static_cast<size_t>(i) * n + l] * v[static_cast<size_t>(l)];
          o[static_cast<size_t>(i)] += dt * s;
        }
      }
      frozen.sx(j, k, jac.data());
      if (forced) frozen.dsigma(j, k, ds.data());
      for (int p = 0; p < paths; ++p) {
        const double* J = jac.data() + static_cast<size_t>(p) * n * n;
        const double* v = x1k + static_cast<size_t>(p) * n;
        double* o = cur + static_cast<size_t>(p) * n;
        const double w = dw[p];
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int l = 0; l < n; ++l) s += J[static_cast<size_t>(i) * n + l] * v[static_cast<size_t>(l)];
          if (forced) s += ds[static_cast<size_t>(p) * n + i];
          o[static_cast<size_t>(i)] += w * s;
        }
      }
    }
  }
  return aux;
}

CostValue cost_eval(const Problem& problem, const TimeGrid& grid,
                    const NoiseEnsemble& noise, const StateEnsemble& state,
                    const ControlProcess& control, int objective) {
  const int paths = state.paths();
  const int steps = grid.steps();
  const int L = problem.num_objectives();
  if (objective < 0 || objective >= L)
    throw std::invalid_argument("cost_eval: objective out of range");
  const double dt = grid.dt();

  std::vector<double> per_path(static_cast<size_t>(paths), 0.0);
  std::vector<double> buf(static_cast<size_t>(paths) * L);
  for (int k = 0; k < steps; ++k) {
    problem.g(grid.node(k), state.at(k), control.at(k), buf.data(), paths);
    for (int p = 0; p < paths; ++p) per_path[static_cast<size_t>(p)] += dt * buf[static_cast<size_t>(p) * L + objective];
  }
  problem.h(state.at(steps), buf.data(), paths);
  for (int p = 0; p < paths; ++p) per_path[static_cast<size_t>(p)] += buf[static_cast<size_t>(p) * L + objective];

  CostValue out;
  for (int p = 0; p < paths; ++p) {
    if (!std::isfinite(per_path[static_cast<size_t>(p)]))
      throw NumericalBlowup("cost_eval: non-finite cost", p, steps);
    out.value += noise.weight(p) * per_path[static_cast<size_t>(p)];
  }
  if (noise.mode() == NoiseMode::kGaussian) {
    double var = 0.0;
    for (int p = 0; p < paths; ++p) {
      const double d = per_path[static_cast<size_t>(p)] - out.value;
      var += noise.weight(p) * d * d;
    }
    out.std_error = std::sqrt(var / paths);
  }
  return out;
}

}  // namespace fsvie
