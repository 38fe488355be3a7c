#pragma once

#include <optional>
#include <vector>

#include "fsvie/adjoint_first.hpp"
#include "fsvie/adjoint_second.hpp"
#include "fsvie/forward.hpp"
#include "fsvie/stats.hpp"

namespace fsvie {

struct SpikeSpec {
  int tau_index = 0;
  std::vector<int> widths;    // sweep of window widths, epsilon = w * dt
  std::vector<double> probe;  // spike value u in U
};

/// Reference control with the window replaced by the probe value.
ControlProcess make_spike_control(const ControlProcess& reference, int tau_index,
                                  int width, const std::vector<double>& probe);

/// Direct evaluation of the quadratic form:
///   E[ X1(T)' h_xx X1(T) + sum_{k<N} X1(k)' H_xx(k) X1(k) dt ].
double direct_quadratic_form(const FrozenCoefficients& frozen,
                             const std::vector<double>& hxx_field,
                             const StateEnsemble& x1, const NoiseEnsemble& noise);

struct SpikeRow {
  int width = 0;
  double eps = 0.0;
  double j_diff = 0.0;      // J(u_eps) - J(u_ref)
  double j_diff_se = 0.0;   // 0 in tree mode
  double dh_term = 0.0;     // E sum_{k in window} dH(k) dt
  double e_direct = 0.0;
  double e_adjoint = 0.0;   // only when the second-order solve is enabled
  bool has_adjoint_form = false;
  double residual38 = 0.0;  // j_diff - dh_term - e_direct / 2
  // sup_j E|.|^2 of the expansion differences.
  double mom_dx = 0.0, mom_dx1 = 0.0, mom_x2 = 0.0, mom_dx12 = 0.0;
};

struct SpikeReport {
  std::vector<SpikeRow> rows;  // one per width, in the spec's order
  SlopeFit slope_dx, slope_dx1, slope_x2, slope_dx12, slope_res38;
  // Bootstrap standard errors of the fitted slopes (gaussian mode only).
  std::optional<double> se_slope_dx, se_slope_dx1, se_slope_x2, se_slope_dx12,
      se_slope_res38;
};

struct SpikeOptions {
  bool with_adjoint_form = false;  // also evaluate the P-representation
  int bootstrap_resamples = 200;   // 0 disables; gaussian mode only
  std::uint64_t bootstrap_seed = 17;
  FirstAdjointOptions first_options;
  SecondAdjointOptions second_options;
};

/// Full spike-variation experiment: per width, simulate the spiked state,
/// the variational equations, the Hamiltonian window term and both quadratic
/// forms; fit log-log slopes across the sweep.
SpikeReport expansion_report(ProblemPtr problem, const TimeGrid& grid,
                             const NoiseEnsemble& noise, const ControlProcess& reference,
                             const SpikeSpec& spec, const ProjectionBackend& backend,
                             const SpikeOptions& options = {});

}  // namespace fsvie
