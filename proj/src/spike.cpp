#include "fsvie/spike.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "fsvie/hamiltonian.hpp"

namespace fsvie {

ControlProcess make_spike_control(const ControlProcess& reference, int tau_index,
                                  int width, const std::vector<double>& probe) {
  if (width < 0 || tau_index < 0 || tau_index + width > reference.steps())
    throw std::invalid_argument("make_spike_control: window out of range");
  if (static_cast<int>(probe.size()) != reference.control_dim())
    throw std::invalid_argument("make_spike_control: probe dimension mismatch");
  ControlProcess out = reference;
  for (int k = tau_index; k < tau_index + width; ++k)
    for (int p = 0; p < out.paths(); ++p)
      for (int i = 0; i < out.control_dim(); ++i)
        out.value(k, p, i) = probe[static_cast<size_t>(i)];
  return out;
}

double direct_quadratic_form(const FrozenCoefficients& frozen,
                             const std::vector<double>& hxx_field,
                             const StateEnsemble& x1, const NoiseEnsemble& noise) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();

  auto quad = [&](const double* v, const double* M, int p) {
    const double* vp = v + static_cast<size_t>(p) * n;
    const double* A = M + static_cast<size_t>(p) * n * n;
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s += vp[i] * A[static_cast<size_t>(i) * n + j] * vp[j];
    return s;
  };

  std::vector<double> per_path(static_cast<size_t>(paths), 0.0);
  for (int p = 0; p < paths; ++p)
    per_path[static_cast<size_t>(p)] = quad(x1.at(steps), frozen.hxx(), p);
  for (int k = 0; k < steps; ++k) {
    const double* hxx_k = hxx_field.data() + static_cast<size_t>(k) * paths * n * n;
    for (int p = 0; p < paths; ++p)
      per_path[static_cast<size_t>(p)] += dt * quad(x1.at(k), hxx_k, p);
  }
  return noise.mean(per_path.data());
}

namespace {

// Per-path cost J_p (terminal plus running) for one objective.
std::vector<double> per_path_cost(const Problem& problem, const TimeGrid& grid,
                                  const StateEnsemble& state, const ControlProcess& control,
                                  int objective) {
  const int paths = state.paths();
  const int steps = grid.steps();
  const int L = problem.num_objectives();
  const double dt = grid.dt();
  std::vector<double> out(static_cast<size_t>(paths), 0.0);
  std::vector<double> buf(static_cast<size_t>(paths) * L);
  for (int k = 0; k < steps; ++k) {
    problem.g(grid.node(k), state.at(k), control.at(k), buf.data(), paths);
    for (int p = 0; p < paths; ++p)
      out[static_cast<size_t>(p)] += dt * buf[static_cast<size_t>(p) * L + objective];
  }
  problem.h(state.at(steps), buf.data(), paths);
  for (int p = 0; p < paths; ++p)
    out[static_cast<size_t>(p)] += buf[static_cast<size_t>(p) * L + objective];
  return out;
}

// sup over j of the weighted mean of |a_j - b_j|^2 (b optional), plus the
// per-path squared difference at the argmax level for bootstrap reuse.
struct SupMoment {
  double value = 0.0;
  int argmax = 0;
  std::vector<double> per_path_at_argmax;
};

SupMoment sup_mean_sq(const NoiseEnsemble& noise, const StateEnsemble& a,
                      const StateEnsemble* b, const StateEnsemble* c,
                      const StateEnsemble* d) {
  const int n = a.state_dim();
  const int paths = a.paths();
  SupMoment out;
  std::vector<double> sq(static_cast<size_t>(paths));
  for (int j = 0; j <= a.steps(); ++j) {
    for (int p = 0; p < paths; ++p) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        double v = a.value(j, p, i);
        if (b) v -= b->value(j, p, i);
        if (c) v -= c->value(j, p, i);
        if (d) v -= d->value(j, p, i);
        s += v * v;
      }
      sq[static_cast<size_t>(p)] = s;
    }
    const double mean = noise.mean(sq.data());
    if (mean > out.value || j == 0) {
      out.value = mean;
      out.argmax = j;
      out.per_path_at_argmax = sq;
    }
  }
  return out;
}

}  // namespace

SpikeReport expansion_report(ProblemPtr problem, const TimeGrid& grid,
                             const NoiseEnsemble& noise, const ControlProcess& reference,
                             const SpikeSpec& spec, const ProjectionBackend& backend,
                             const SpikeOptions& options) {
  if (spec.widths.empty()) throw std::invalid_argument("expansion_report: empty sweep");
  int max_w = 0;
  for (int w : spec.widths) max_w = std::max(max_w, w);
  if (spec.tau_index + max_w > grid.steps())
    throw std::invalid_argument("expansion_report: window exceeds the grid");
  const int steps = grid.steps();
  const int paths = noise.paths();
  const double dt = grid.dt();

  // Reference solve and frozen coefficients (shared across the sweep).
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*problem, grid, noise, reference));
  auto uref = std::make_shared<ControlProcess>(reference);
  FrozenCoefficients frozen(problem, grid, xbar, uref, spec.probe);
  const std::vector<double> jref = per_path_cost(*problem, grid, *xbar, reference, frozen.objective());

  // First adjoint along the reference pair; restrict the exposed Z columns to
  // the window in regression mode to keep large sweeps bounded.
  FirstAdjointOptions fo = options.first_options;
  if (dynamic_cast<const RegressionProjection*>(&backend) && fo.z_columns.empty()) {
    for (int k = spec.tau_index; k < spec.tau_index + max_w; ++k) fo.z_columns.push_back(k);
  }
  FirstAdjoint first = solve_first_adjoint(frozen, backend, fo);
  HamiltonianContext ctx{&frozen, &first, &backend};
  const std::vector<double> hxx_field = hamiltonian_hessian(frozen, first, backend);

  std::optional<SecondAdjoint> second;
  if (options.with_adjoint_form) {
    SecondAdjoint sa;
    solve_p1_q1(frozen.hxx(), frozen.state_dim(), backend, sa);
    solve_p2_q2(frozen, backend, options.second_options, sa);
    SecondAdjointSources sources = build_sources(frozen, first, sa, backend);
    solve_p3_p4(frozen, sources, backend, options.second_options, sa);
    second = std::move(sa);
  }

  // dH window values are width independent; compute once up to max_w.
  std::vector<double> dh_per_path(static_cast<size_t>(paths) * max_w, 0.0);
  for (int k = spec.tau_index; k < spec.tau_index + max_w; ++k) {
    const std::vector<double> dh = eval_dH(ctx, k);
    std::copy(dh.begin(), dh.end(),
              dh_per_path.begin() + static_cast<size_t>(k - spec.tau_index) * paths);
  }

  SpikeReport report;
  std::vector<std::vector<double>> boot_jdiff, boot_res;  // per width, per path
  std::vector<std::vector<double>> boot_mom[4];
  for (auto& b : boot_mom) b.resize(spec.widths.size());
  boot_jdiff.resize(spec.widths.size());
  boot_res.resize(spec.widths.size());

  for (size_t wi = 0; wi < spec.widths.size(); ++wi) {
    const int w = spec.widths[wi];
    const SpikeWindow window{spec.tau_index, w};
    SpikeRow row;
    row.width = w;
    row.eps = w * dt;

    const ControlProcess u_eps = make_spike_control(reference, spec.tau_index, w, spec.probe);
    const StateEnsemble x_eps = solve_fsvie(*problem, grid, noise, u_eps);
    const std::vector<double> j_eps = per_path_cost(*problem, grid, x_eps, u_eps, frozen.objective());

    std::vector<double> jdiff_p(static_cast<size_t>(paths));
    for (int p = 0; p < paths; ++p)
      jdiff_p[static_cast<size_t>(p)] = j_eps[static_cast<size_t>(p)] - jref[static_cast<size_t>(p)];
    row.j_diff = noise.mean(jdiff_p.data());
    if (noise.mode() == NoiseMode::kGaussian) {
      double var = 0.0;
      for (int p = 0; p < paths; ++p) {
        const double d = jdiff_p[static_cast<size_t>(p)] - row.j_diff;
        var += noise.weight(p) * d * d;
      }
      row.j_diff_se = std::sqrt(var / paths);
    }

    const StateEnsemble x1 = solve_x1(frozen, noise, window);
    const StateEnsemble x2 = solve_x2(frozen, noise, window, x1);

    std::vector<double> dh_p(static_cast<size_t>(paths), 0.0);
    for (int k = 0; k < w; ++k)
      for (int p = 0; p < paths; ++p)
        dh_p[static_cast<size_t>(p)] += dt * dh_per_path[static_cast<size_t>(k) * paths + p];
    row.dh_term = noise.mean(dh_p.data());

    // Per-path direct quadratic form for the bootstrap.
    std::vector<double> e_dir_p(static_cast<size_t>(paths), 0.0);
    {
      const int n = frozen.state_dim();
      auto quad = [&](const double* v, const double* M, int p) {
        const double* vp = v + static_cast<size_t>(p) * n;
        const double* A = M + static_cast<size_t>(p) * n * n;
        double s = 0.0;
        for (int i = 0; i < n; ++i)
          for (int j2 = 0; j2 < n; ++j2)
            s += vp[i] * A[static_cast<size_t>(i) * n + j2] * vp[j2];
        return s;
      };
      for (int p = 0; p < paths; ++p)
        e_dir_p[static_cast<size_t>(p)] = quad(x1.at(steps), frozen.hxx(), p);
      for (int k = 0; k < steps; ++k) {
        const double* hk = hxx_field.data() + static_cast<size_t>(k) * paths * n * n;
        for (int p = 0; p < paths; ++p)
          e_dir_p[static_cast<size_t>(p)] += dt * quad(x1.at(k), hk, p);
      }
    }
    row.e_direct = noise.mean(e_dir_p.data());
    if (second) {
      row.e_adjoint = quadratic_form_adjoint(*second, frozen, window, noise);
      row.has_adjoint_form = true;
    }
    row.residual38 = row.j_diff - row.dh_term - 0.5 * row.e_direct;

    SupMoment m_dx = sup_mean_sq(noise, x_eps, xbar.get(), nullptr, nullptr);
    SupMoment m_dx1 = sup_mean_sq(noise, x_eps, xbar.get(), &x1, nullptr);
    SupMoment m_x2 = sup_mean_sq(noise, x2, nullptr, nullptr, nullptr);
    SupMoment m_dx12 = sup_mean_sq(noise, x_eps, xbar.get(), &x1, &x2);
    row.mom_dx = m_dx.value;
    row.mom_dx1 = m_dx1.value;
    row.mom_x2 = m_x2.value;
    row.mom_dx12 = m_dx12.value;

    if (options.bootstrap_resamples > 0 && noise.mode() == NoiseMode::kGaussian) {
      boot_jdiff[wi] = jdiff_p;
      std::vector<double> res_p(static_cast<size_t>(paths));
      for (int p = 0; p < paths; ++p)
        res_p[static_cast<size_t>(p)] = jdiff_p[static_cast<size_t>(p)] -
                                        dh_p[static_cast<size_t>(p)] -
                                        0.5 * e_dir_p[static_cast<size_t>(p)];
      boot_res[wi] = std::move(res_p);
      boot_mom[0][wi] = std::move(m_dx.per_path_at_argmax);
      boot_mom[1][wi] = std::move(m_dx1.per_path_at_argmax);
      boot_mom[2][wi] = std::move(m_x2.per_path_at_argmax);
      boot_mom[3][wi] = std::move(m_dx12.per_path_at_argmax);
    }
    report.rows.push_back(row);
  }

  // Slope fits across the sweep.
  std::vector<double> eps, v_dx, v_dx1, v_x2, v_dx12, v_res;
  for (const auto& row : report.rows) {
    eps.push_back(row.eps);
    v_dx.push_back(row.mom_dx);
    v_dx1.push_back(row.mom_dx1);
    v_x2.push_back(row.mom_x2);
    v_dx12.push_back(row.mom_dx12);
    v_res.push_back(std::abs(row.residual38));
  }
  report.slope_dx = fit_loglog(eps, v_dx);
  report.slope_dx1 = fit_loglog(eps, v_dx1);
  report.slope_x2 = fit_loglog(eps, v_x2);
  report.slope_dx12 = fit_loglog(eps, v_dx12);
  report.slope_res38 = fit_loglog(eps, v_res);

  if (options.bootstrap_resamples > 0 && noise.mode() == NoiseMode::kGaussian) {
    std::uint64_t rng = options.bootstrap_seed ^ noise.seed();
    auto boot_se = [&](const std::vector<std::vector<double>>& per_path,
                       bool absolute) -> double {
      std::vector<double> slopes;
      std::vector<int> pick(static_cast<size_t>(paths));
      for (int b = 0; b < options.bootstrap_resamples; ++b) {
        for (int p = 0; p < paths; ++p)
          pick[static_cast<size_t>(p)] = static_cast<int>(splitmix64(rng) % paths);
        std::vector<double> vals;
        bool ok = true;
        for (size_t wi = 0; wi < per_path.size(); ++wi) {
          double mean = 0.0;
          for (int p = 0; p < paths; ++p) mean += per_path[wi][static_cast<size_t>(pick[static_cast<size_t>(p)])];
          mean /= paths;
          if (absolute) mean = std::abs(mean);
          if (mean <= 0) { ok = false; break; }
          vals.push_back(mean);
        }
        if (!ok) continue;
        slopes.push_back(fit_loglog(eps, vals).slope);
      }
      if (slopes.size() < 2) return 0.0;
      double mean = 0.0;
      for (double s : slopes) mean += s;
      mean /= static_cast<double>(slopes.size());
      double var = 0.0;
      for (double s : slopes) var += (s - mean) * (s - mean);
      return std::sqrt(var / (static_cast<double>(slopes.size()) - 1));
    };
    report.se_slope_dx = boot_se(boot_mom[0], false);
    report.se_slope_dx1 = boot_se(boot_mom[1], false);
    report.se_slope_x2 = boot_se(boot_mom[2], false);
    report.se_slope_dx12 = boot_se(boot_mom[3], false);
    report.se_slope_res38 = boot_se(boot_res, true);
  }
  return report;
}

}  // namespace fsvie
