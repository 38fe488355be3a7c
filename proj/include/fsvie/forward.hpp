#pragma once

#include <utility>

#include "fsvie/ensembles.hpp"
#include "fsvie/frozen.hpp"
#include "fsvie/problem.hpp"
#include "fsvie/time_grid.hpp"

namespace fsvie {

/// Half-open spike window [tau_index, tau_index + width) in step indices;
/// epsilon = width * dt is always grid aligned.
struct SpikeWindow {
  int tau_index = 0;
  int width = 0;
  bool contains(int k) const { return k >= tau_index && k < tau_index + width; }
};

/// Left-point Euler solve of the controlled FSVIE
///   X(t_j) = phi(t_j) + sum_{k<j} b(t_j,t_k,X_k,u_k) dt
///                       + sum_{k<j} sigma(t_j,t_k,X_k,u_k) dW_{k+1}.
/// Throws NumericalBlowup with the offending (path, step) on non-finite values.
StateEnsemble solve_fsvie(const Problem& problem, const TimeGrid& grid,
                          const NoiseEnsemble& noise, const ControlProcess& control);

/// First variational equation along frozen coefficients with diffusion
/// forcing dsigma * 1_window; X1 vanishes on [0, tau].
StateEnsemble solve_x1(const FrozenCoefficients& frozen, const NoiseEnsemble& noise,
                       const SpikeWindow& window);

/// Second variational equation: drift forcing (bxx X1^2)/2 + db * 1_window and
/// diffusion forcing (sxx X1^2)/2 + dsx X1 * 1_window.
StateEnsemble solve_x2(const FrozenCoefficients& frozen, const NoiseEnsemble& noise,
                       const SpikeWindow& window, const StateEnsemble& x1);

/// Two-parameter auxiliary process
///   A(t_j, t_r) = sum_{k<r} bx(j,k) X1(k) dt + sum_{k<r} [sx(j,k) X1(k) +
///                 dsigma(j,k) 1_window(k)] dW_{k+1},  r <= j,
/// whose diagonal reproduces X1 exactly under the shared Euler convention.
TwoParamEnsemble solve_aux_x1(const FrozenCoefficients& frozen,
                              const NoiseEnsemble& noise, const SpikeWindow& window,
                              const StateEnsemble& x1);

struct CostValue {
  double value = 0.0;
  double std_error = 0.0;  // 0 in tree mode
};

/// J = E[h(X_T) + sum_{k<N} g(t_k, X_k, u_k) dt] for one objective.
CostValue cost_eval(const Problem& problem, const TimeGrid& grid,
                    const NoiseEnsemble& noise, const StateEnsemble& state,
                    const ControlProcess& control, int objective = 0);

}  // namespace fsvie
