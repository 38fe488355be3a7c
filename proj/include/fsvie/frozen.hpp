#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "fsvie/ensembles.hpp"
#include "fsvie/problem.hpp"

namespace fsvie {

/// Coefficients and their x-derivatives frozen along a reference state/control
/// pair, plus the spike deltas against one probe value. Entries at (j, k) are
/// evaluated at (t_j, t_k, Xbar(t_k), ubar(t_k)), so each row is F_{t_k}
/// measurable by construction.
///
/// Rows are produced on demand through the problem's batch evaluators; when
/// the triangle fits the memory budget they are additionally materialized at
/// freeze() time and served from the cache. `objective` selects the cost pair
/// (g^l, h^l) used for the cached cost derivatives.
class FrozenCoefficients {
 public:
  FrozenCoefficients(ProblemPtr problem, const TimeGrid& grid,
                     std::shared_ptr<const StateEnsemble> ref_state,
                     std::shared_ptr<const ControlProcess> ref_control,
                     std::vector<double> probe_u, int objective = 0,
                     bool materialize = true,
                     size_t materialize_budget_doubles = size_t(1) << 26);

  const Problem& problem() const { return *problem_; }
  ProblemPtr problem_ptr() const { return problem_; }
  const TimeGrid& grid() const { return grid_; }
  const StateEnsemble& ref_state() const { return *state_; }
  const ControlProcess& ref_control() const { return *control_; }
  const std::vector<double>& probe() const { return probe_; }
  int objective() const { return objective_; }
  int paths() const { return state_->paths(); }
  int state_dim() const { return problem_->state_dim(); }
  bool materialized() const { return materialized_; }

  // Frozen generator derivatives at (j, k), k <= j. `out` receives
  // paths() blocks of n*n (or n*n*n for the Hessians).
  void bx(int j, int k, double* out) const;
  void sx(int j, int k, double* out) const;
  void bxx(int j, int k, double* out) const;
  void sxx(int j, int k, double* out) const;
  // Spike deltas against the probe: paths() blocks of n (or n*n).
  void db(int j, int k, double* out) const;
  void dsigma(int j, int k, double* out) const;
  void dbx(int j, int k, double* out) const;
  void dsx(int j, int k, double* out) const;

  // Cached cost derivatives along the reference pair.
  const double* gx(int k) const;    // paths() x n
  const double* gxx(int k) const;   // paths() x n*n
  const double* hx() const;         // paths() x n
  const double* hxx() const;        // paths() x n*n
  /// Running cost delta g(t_k, Xbar, probe) - g(t_k, Xbar, ubar) per path.
  void dg(int k, double* out) const;

  /// Largest |sigma_x| over the triangle; lets solvers skip dead kernels.
  double max_abs_sigma_x() const;
  double max_abs_b_x() const;

 private:
  void eval_row(int which, int j, int k, double* out) const;

  ProblemPtr problem_;
  TimeGrid grid_;
  std::shared_ptr<const StateEnsemble> state_;
  std::shared_ptr<const ControlProcess> control_;
  std::vector<double> probe_;
  int objective_;
  bool materialized_ = false;

  // Per-level cost derivative caches.
  std::vector<double> gx_, gxx_;  // [k][path][...]
  std::vector<double> hx_, hxx_;
  // Optional dense triangular caches (small instances only).
  std::vector<double> c_bx_, c_sx_, c_bxx_, c_sxx_, c_db_, c_ds_, c_dbx_, c_dsx_;
  mutable std::optional<double> max_sx_, max_bx_;
  size_t tri_cells_ = 0;
};

/// Freeze coefficients along (ref_state, ref_control) with spike deltas
/// against probe_u. Throws std::invalid_argument on dimension mismatch.
FrozenCoefficients freeze(ProblemPtr problem, const TimeGrid& grid,
                          std::shared_ptr<const StateEnsemble> ref_state,
                          std::shared_ptr<const ControlProcess> ref_control,
                          std::vector<double> probe_u, int objective = 0);

}  // namespace fsvie
