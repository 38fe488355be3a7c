#pragma once

#include <vector>

#include "fsvie/frozen.hpp"
#include "fsvie/projection.hpp"

namespace fsvie {

/// Exponentially weighted mean-square norms used by the backward fixed-point
/// solvers. Time fields f(t_k): E sum_k e^{beta t_k} |f_k|^2 dt. Square fields
/// are handled by the callers via per-entry accumulation.
double beta_norm_time(const NoiseEnsemble& noise, const double* values,
                      int n_comp, int num_levels, double beta);

struct SolveTelemetry {
  int iterations = 0;
  bool converged = false;
  double beta = 0.0;
  std::vector<double> deltas;  // beta-norm distance of successive iterates
  std::vector<double> ratios;  // deltas[i] / deltas[i-1]
};

enum class SweepOrder {
  kBackward,  // Gauss-Seidel in decreasing time; exact after one sweep
  kJacobi,    // plain Picard map; converges at the contraction rate
};

struct FirstAdjointOptions {
  double tol = 1e-10;
  int max_iter = 200;
  double beta = -1.0;  // < 0: auto = 2 * (8 |sx|^2 + 4 |bx|^2 T)
  SweepOrder sweep = SweepOrder::kBackward;
  double init_fill = 0.0;  // starting value of every Y entry
  /// Lower-triangle Z columns to expose; empty = all. Large Monte Carlo runs
  /// restrict this to the spike window to keep memory bounded.
  std::vector<int> z_columns;
};

/// Adapted M-solution of the first-order adjoint system: the martingale pair
/// (eta, zeta) representing h_x and the Type-II BSVIE pair (Y, Z).
class FirstAdjoint {
 public:
  int state_dim() const { return n_; }
  int paths() const { return paths_; }
  int steps() const { return steps_; }

  const double* eta(int k) const { return eta_.data() + block(k); }
  const double* zeta(int k) const { return zeta_.data() + block(k); }
  const double* y(int k) const { return y_.data() + block(k); }

  /// Z(t_j, t_k) for j > k (M-constraint part). Writes paths()*n values.
  void z_lower(int j, int k, double* out) const;
  bool has_z_column(int k) const;
  /// Z(t_k, t_j) for j >= k (representation part; tree backend only).
  const double* z_upper(int k, int j) const;
  bool has_z_upper() const { return !z_upper_.empty(); }

  /// Max abs residual of Y(t_j) = E[Y(t_j)] + sum_{k<j} Z(t_j,t_k) dW_{k+1}.
  double m_residual(const NoiseEnsemble& noise) const;

  SolveTelemetry telemetry;

 private:
  friend FirstAdjoint solve_first_adjoint(const FrozenCoefficients&,
                                          const ProjectionBackend&,
                                          const FirstAdjointOptions&);
  size_t block(int k) const { return static_cast<size_t>(k) * paths_ * n_; }

  int n_ = 0;
  int paths_ = 0;
  int steps_ = 0;
  std::vector<double> eta_;   // k = 0..N
  std::vector<double> zeta_;  // k = 0..N-1
  std::vector<double> y_;     // k = 0..N-1
  // Per-path lower-triangle storage, or fitted coefficients per (j, k) when
  // the regression backend owns the values.
  std::vector<int> z_cols_;                 // sorted column list
  std::vector<std::vector<double>> z_val_;  // per column: [(j-k-1)*paths*n]
  std::vector<std::vector<double>> z_coef_; // per column: [(j-k-1)*n*q]
  const RegressionProjection* reg_ = nullptr;
  std::vector<double> z_upper_;  // [(tri(k) + j) * paths * n], tree only
};

/// Martingale representation of the terminal cost gradient: eta(k) = E_k[h_x],
/// zeta the representation integrand.
MartingaleRep solve_eta_zeta(const double* hx_values, int n, const ProjectionBackend& backend);

/// Picard/Gauss-Seidel solve of the discrete Type-II BSVIE
///   Y(k) = E_k[ g_x(k)' + b_x(N,k)' h_x' + s_x(N,k)' zeta(k)
///               + sum_{j=k+1}^{N-1} (b_x(j,k)' Y(j) + s_x(j,k)' Z(j,k)) dt ],
/// with Z on the upper triangle from the representation of the bracket and on
/// the lower triangle from the M-constraint. Throws NoConvergence when the
/// iteration budget is exhausted.
FirstAdjoint solve_first_adjoint(const FrozenCoefficients& frozen,
                                 const ProjectionBackend& backend,
                                 const FirstAdjointOptions& options = {});

}  // namespace fsvie
