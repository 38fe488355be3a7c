#include "fsvie/verify.hpp"

#include <cmath>
#include <stdexcept>

namespace fsvie {

namespace {

struct ReferenceSolves {
  std::shared_ptr<StateEnsemble> xbar;
  std::shared_ptr<ControlProcess> uref;
  FrozenCoefficients frozen;       // probe-independent rows (probe = first probe)
  FirstAdjoint first;
  SecondAdjoint second;
};

ReferenceSolves solve_reference(ProblemPtr problem, const TimeGrid& grid,
                                const NoiseEnsemble& noise,
                                const ProjectionBackend& backend,
                                const ControlProcess& reference, int objective,
                                const ScanSetup& setup) {
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*problem, grid, noise, reference));
  auto uref = std::make_shared<ControlProcess>(reference);
  std::vector<double> probe0(static_cast<size_t>(problem->control_dim()), 0.0);
  FrozenCoefficients frozen(problem, grid, xbar, uref, probe0, objective);
  FirstAdjoint first = solve_first_adjoint(frozen, backend, setup.first_options);
  SecondAdjoint second = solve_second_adjoint(frozen, first, backend, setup.second_options);
  return ReferenceSolves{xbar, uref, std::move(frozen), std::move(first), std::move(second)};
}

}  // namespace

double mp_second_order_block(const SecondAdjoint& second,
                             const FrozenCoefficients& frozen, int tau_index,
                             const NoiseEnsemble& noise) {
  const SpikeWindow column{tau_index, 1};
  return quadratic_form_adjoint(second, frozen, column, noise) / frozen.grid().dt();
}

double mp_lhs(const HamiltonianContext& ctx, const SecondAdjoint& second, int tau_index) {
  const double dh = expected_dH(ctx, tau_index);
  const double block =
      mp_second_order_block(second, *ctx.frozen, tau_index, ctx.backend->ensemble());
  return dh + 0.5 * block;
}

MpScanResult mp_scan(ProblemPtr problem, const TimeGrid& grid, const NoiseEnsemble& noise,
                     const ProjectionBackend& backend, const ControlProcess& reference,
                     const ScanSetup& setup, int objective) {
  ReferenceSolves ref = solve_reference(problem, grid, noise, backend, reference,
                                        objective, setup);
  const auto& probes = setup.probes.empty() ? problem->control_probes() : setup.probes;

  MpScanResult result;
  result.tol = setup.tol;
  bool first_entry = true;
  for (const auto& probe : probes) {
    // Probe-specific frozen view; rows are lazy, cost caches are O(N * paths).
    FrozenCoefficients fz(problem, grid, ref.xbar, ref.uref, probe, objective,
                          /*materialize=*/false);
    HamiltonianContext ctx{&fz, &ref.first, &backend};
    for (int tau : setup.tau_indices) {
      MpEntry entry;
      entry.tau_index = tau;
      entry.probe = probe;
      entry.lhs = mp_lhs(ctx, ref.second, tau);
      if (first_entry || entry.lhs < result.min_lhs) result.min_lhs = entry.lhs;
      first_entry = false;
      if (entry.lhs < -setup.tol) result.violations.push_back(entry);
      result.entries.push_back(std::move(entry));
    }
  }
  result.pass = result.violations.empty();
  return result;
}

std::vector<MpScanResult> nash_check(
    ProblemPtr problem, const TimeGrid& grid, const NoiseEnsemble& noise,
    const ProjectionBackend& backend, const ControlProcess& reference,
    const std::vector<std::vector<std::vector<double>>>& probes,
    const ScanSetup& setup) {
  const auto& dims = problem->player_dims();
  if (probes.size() != dims.size())
    throw std::invalid_argument("nash_check: one probe list per player required");

  std::vector<MpScanResult> results;
  for (int l = 0; l < static_cast<int>(dims.size()); ++l) {
    ReferenceSolves ref = solve_reference(problem, grid, noise, backend, reference, l, setup);
    int offset = 0;
    for (int i = 0; i < l; ++i) offset += dims[static_cast<size_t>(i)];

    MpScanResult scan;
    scan.tol = setup.tol;
    bool first_entry = true;
    for (const auto& deviation : probes[static_cast<size_t>(l)]) {
      if (static_cast<int>(deviation.size()) != dims[static_cast<size_t>(l)])
        throw std::invalid_argument("nash_check: probe dimension mismatch");
      for (int tau : setup.tau_indices) {
        // Composite tuple: reference at tau with slot l deviated. Candidate
        // tuples in the scans are deterministic, so path 0 carries the value.
        std::vector<double> composite(static_cast<size_t>(problem->control_dim()));
        for (int i = 0; i < problem->control_dim(); ++i)
          composite[static_cast<size_t>(i)] = reference.value(tau, 0, i);
        for (int i = 0; i < dims[static_cast<size_t>(l)]; ++i)
          composite[static_cast<size_t>(offset + i)] = deviation[static_cast<size_t>(i)];
        FrozenCoefficients fz(problem, grid, ref.xbar, ref.uref, composite, l,
                              /*materialize=*/false);
        HamiltonianContext ctx{&fz, &ref.first, &backend};
        MpEntry entry;
        entry.tau_index = tau;
        entry.probe = deviation;
        entry.lhs = mp_lhs(ctx, ref.second, tau);
        if (first_entry || entry.lhs < scan.min_lhs) scan.min_lhs = entry.lhs;
        first_entry = false;
        if (entry.lhs < -setup.tol) scan.violations.push_back(entry);
        scan.entries.push_back(std::move(entry));
      }
    }
    scan.pass = scan.violations.empty();
    results.push_back(std::move(scan));
  }
  return results;
}

SaddleResult saddle_check(ProblemPtr problem, const TimeGrid& grid,
                          const NoiseEnsemble& noise, const ProjectionBackend& backend,
                          const ControlProcess& reference,
                          const std::vector<std::vector<double>>& probes1,
                          const std::vector<std::vector<double>>& probes2,
                          const ScanSetup& setup) {
  const auto& dims = problem->player_dims();
  if (dims.size() != 2)
    throw std::invalid_argument("saddle_check: two-player game required");
  ReferenceSolves ref = solve_reference(problem, grid, noise, backend, reference, 0, setup);

  // scriptH(tau, u1, u2) = E[H(tau, (u1,u2))] + block((u1,u2))/2 with the
  // adjoints of player 1.
  auto script_h = [&](int tau, const std::vector<double>& u1,
                      const std::vector<double>& u2) {
    std::vector<double> joint;
    joint.insert(joint.end(), u1.begin(), u1.end());
    joint.insert(joint.end(), u2.begin(), u2.end());
    FrozenCoefficients fz(problem, grid, ref.xbar, ref.uref, joint, 0,
                          /*materialize=*/false);
    HamiltonianContext ctx{&fz, &ref.first, &backend};
    const std::vector<double> per_path = eval_H(ctx, tau, joint);
    const double h_term = noise.mean(per_path.data());
    return h_term + 0.5 * mp_second_order_block(ref.second, fz, tau, noise);
  };

  SaddleResult result;
  result.tol = setup.tol;
  for (int tau : setup.tau_indices) {
    std::vector<double> u1_bar(static_cast<size_t>(dims[0]));
    std::vector<double> u2_bar(static_cast<size_t>(dims[1]));
    for (int i = 0; i < dims[0]; ++i) u1_bar[static_cast<size_t>(i)] = reference.value(tau, 0, i);
    for (int i = 0; i < dims[1]; ++i)
      u2_bar[static_cast<size_t>(i)] = reference.value(tau, 0, dims[0] + i);
    const double center = script_h(tau, u1_bar, u2_bar);
    for (const auto& v2 : probes2) {
      SaddleEntry e;
      e.tau_index = tau;
      e.probe = v2;
      e.max_side = true;
      e.violation = script_h(tau, u1_bar, v2) - center;  // must be <= 0
      result.worst_violation = std::max(result.worst_violation, e.violation);
      result.entries.push_back(std::move(e));
    }
    for (const auto& v1 : probes1) {
      SaddleEntry e;
      e.tau_index = tau;
      e.probe = v1;
      e.max_side = false;
      e.violation = center - script_h(tau, v1, u2_bar);  // must be <= 0
      result.worst_violation = std::max(result.worst_violation, e.violation);
      result.entries.push_back(std::move(e));
    }
  }
  result.pass = result.worst_violation <= setup.tol;
  return result;
}

SdeCrosscheckReport sde_crosscheck(ProblemPtr problem, const TimeGrid& grid,
                                   const NoiseEnsemble& noise,
                                   const ProjectionBackend& backend,
                                   const ControlProcess& reference,
                                   const ScanSetup& setup) {
  if (!problem->time_homogeneous())
    throw std::invalid_argument("sde_crosscheck: problem has t-dependent kernels");
  ReferenceSolves ref = solve_reference(problem, grid, noise, backend, reference, 0, setup);
  SdeReduction red = build_sde_reduction(ref.frozen, ref.first, ref.second, backend);

  SdeCrosscheckReport report;
  report.bsde_residual =
      sde_reduction_bsde_residual(ref.frozen, ref.first, red, backend);

  const int n = problem->state_dim();
  const int paths = noise.paths();
  const int steps = grid.steps();
  const auto& probes = setup.probes.empty() ? problem->control_probes() : setup.probes;
  std::vector<double> db(static_cast<size_t>(paths) * n), ds(static_cast<size_t>(paths) * n);
  std::vector<double> dg(static_cast<size_t>(paths));

  for (const auto& probe : probes) {
    FrozenCoefficients fz(problem, grid, ref.xbar, ref.uref, probe, 0,
                          /*materialize=*/false);
    HamiltonianContext ctx{&fz, &ref.first, &backend};
    for (int tau : setup.tau_indices) {
      SdeCrosscheckEntry entry;
      entry.tau_index = tau;
      entry.probe = probe;
      entry.volterra_lhs = mp_lhs(ctx, ref.second, tau);

      // Classical condition: E[dg + <db, Mcal> + <ds, Ncal>] + E[ds' Mbb ds]/2.
      fz.dg(tau, dg.data());
      fz.db(steps, tau, db.data());
      fz.dsigma(steps, tau, ds.data());
      std::vector<double> per_path(static_cast<size_t>(paths), 0.0);
      const double* mc = red.mcal_at(tau);
      const double* nc = red.ncal_at(tau);
      const double* mb = red.mbb_at(tau);
      for (int p = 0; p < paths; ++p) {
        double v = dg[static_cast<size_t>(p)];
        for (int i = 0; i < n; ++i) {
          v += db[static_cast<size_t>(p) * n + i] * mc[static_cast<size_t>(p) * n + i];
          v += ds[static_cast<size_t>(p) * n + i] * nc[static_cast<size_t>(p) * n + i];
        }
        double q = 0.0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            q += ds[static_cast<size_t>(p) * n + i] *
                 mb[(static_cast<size_t>(p) * n + i) * n + j] *
                 ds[static_cast<size_t>(p) * n + j];
        per_path[static_cast<size_t>(p)] = v + 0.5 * q;
      }
      entry.classical_lhs = noise.mean(per_path.data());
      report.max_discrepancy = std::max(
          report.max_discrepancy, std::abs(entry.volterra_lhs - entry.classical_lhs));
      report.entries.push_back(std::move(entry));
    }
  }
  return report;
}

}  // namespace fsvie
