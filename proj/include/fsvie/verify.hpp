#pragma once

#include <vector>

#include "fsvie/adjoint_second.hpp"
#include "fsvie/hamiltonian.hpp"
#include "fsvie/spike.hpp"

namespace fsvie {

struct MpEntry {
  int tau_index = 0;
  std::vector<double> probe;
  double lhs = 0.0;
};

struct MpScanResult {
  std::vector<MpEntry> entries;
  std::vector<MpEntry> violations;  // entries with lhs < -tol
  double min_lhs = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Second-order block of the pointwise maximum principle at tau: the
/// quadratic-form representation evaluated on a one-step window divided by dt.
double mp_second_order_block(const SecondAdjoint& second,
                             const FrozenCoefficients& frozen, int tau_index,
                             const NoiseEnsemble& noise);

/// Left side of the pointwise maximum principle at (tau, probe):
/// E[dH(tau)] + block/2 with the probe taken from `frozen`.
double mp_lhs(const HamiltonianContext& ctx, const SecondAdjoint& second, int tau_index);

struct ScanSetup {
  std::vector<int> tau_indices;
  std::vector<std::vector<double>> probes;  // defaults to the problem's list
  double tol = 1e-6;
  FirstAdjointOptions first_options;
  SecondAdjointOptions second_options;
};

/// Scan the maximum-principle left side over (tau, probe) for one candidate
/// control; PASS when every entry clears -tol.
MpScanResult mp_scan(ProblemPtr problem, const TimeGrid& grid, const NoiseEnsemble& noise,
                     const ProjectionBackend& backend, const ControlProcess& reference,
                     const ScanSetup& setup, int objective = 0);

/// Per-player Nash condition: player l's scan holds the others fixed at the
/// candidate tuple and deviates only slot l. probes[l] are m_l-vectors.
std::vector<MpScanResult> nash_check(ProblemPtr problem, const TimeGrid& grid,
                                     const NoiseEnsemble& noise,
                                     const ProjectionBackend& backend,
                                     const ControlProcess& reference,
                                     const std::vector<std::vector<std::vector<double>>>& probes,
                                     const ScanSetup& setup);

struct SaddleEntry {
  int tau_index = 0;
  std::vector<double> probe;
  double violation = 0.0;  // positive = inequality broken by this amount
  bool max_side = false;   // true: player-2 (upper) inequality
};

struct SaddleResult {
  std::vector<SaddleEntry> entries;
  double worst_violation = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Minimax condition for the two-person zero-sum game, built from (h^1, g^1):
/// scriptH(tau, u1_bar, v2) <= scriptH(tau, u1_bar, u2_bar) <= scriptH(tau, v1, u2_bar).
SaddleResult saddle_check(ProblemPtr problem, const TimeGrid& grid,
                          const NoiseEnsemble& noise, const ProjectionBackend& backend,
                          const ControlProcess& reference,
                          const std::vector<std::vector<double>>& probes1,
                          const std::vector<std::vector<double>>& probes2,
                          const ScanSetup& setup);

struct SdeCrosscheckEntry {
  int tau_index = 0;
  std::vector<double> probe;
  double volterra_lhs = 0.0;
  double classical_lhs = 0.0;
};

struct SdeCrosscheckReport {
  std::vector<SdeCrosscheckEntry> entries;
  double max_discrepancy = 0.0;
  double bsde_residual = 0.0;  // first-order (Mcal, Ncal) discrete BSDE
};

/// Evaluate the classical FSDE maximum condition through the SDE-reduction
/// aggregates and compare with the Volterra left side at matching (tau, u).
SdeCrosscheckReport sde_crosscheck(ProblemPtr problem, const TimeGrid& grid,
                                   const NoiseEnsemble& noise,
                                   const ProjectionBackend& backend,
                                   const ControlProcess& reference,
                                   const ScanSetup& setup);

}  // namespace fsvie
