#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fsvie/time_grid.hpp"

namespace fsvie {

/// Coefficient set of one controlled FSVIE instance together with its cost
/// structure. Evaluators are batched over paths: `x` holds `count` state
/// vectors (n doubles each, contiguous per path), `u` holds `count` control
/// vectors (m doubles each). All evaluators must be pure and thread safe.
///
/// Derivative layouts per path:
///   b_x, sigma_x:   n*n row-major, out[i*n+j] = d b_i / d x_j
///   b_xx, sigma_xx: n*n*n, out[i*n*n + j*n + l] = d^2 b_i / d x_j d x_l
class Problem {
 public:
  virtual ~Problem() = default;

  const std::string& name() const { return name_; }
  int state_dim() const { return n_; }
  int control_dim() const { return m_; }
  /// Number of cost functionals (1 for single objective, players for games).
  int num_objectives() const { return objectives_; }
  double horizon() const { return horizon_; }
  /// True when b and sigma do not depend on the outer time t (SDE case).
  bool time_homogeneous() const { return time_homogeneous_; }
  /// Finite probe values used by spike experiments and maximum principle
  /// scans; one flat m-vector per probe.
  const std::vector<std::vector<double>>& control_probes() const { return probes_; }
  /// Control-dimension split across players; {m} for single objective.
  const std::vector<int>& player_dims() const { return player_dims_; }

  /// Deterministic free term phi(t).
  virtual void phi(double t, double* out) const = 0;

  virtual void b(double t, double s, const double* x, const double* u,
                 double* out, int count) const = 0;
  virtual void sigma(double t, double s, const double* x, const double* u,
                     double* out, int count) const = 0;
  virtual void b_x(double t, double s, const double* x, const double* u,
                   double* out, int count) const = 0;
  virtual void sigma_x(double t, double s, const double* x, const double* u,
                       double* out, int count) const = 0;
  virtual void b_xx(double t, double s, const double* x, const double* u,
                    double* out, int count) const = 0;
  virtual void sigma_xx(double t, double s, const double* x, const double* u,
                        double* out, int count) const = 0;

  /// Running cost g^l(s, x, u); out has num_objectives() entries per path.
  virtual void g(double s, const double* x, const double* u, double* out,
                 int count) const = 0;
  virtual void g_x(int objective, double s, const double* x, const double* u,
                   double* out, int count) const = 0;
  virtual void g_xx(int objective, double s, const double* x, const double* u,
                    double* out, int count) const = 0;
  /// Terminal cost h^l(x); out has num_objectives() entries per path.
  virtual void h(const double* x, double* out, int count) const = 0;
  virtual void h_x(int objective, const double* x, double* out, int count) const = 0;
  virtual void h_xx(int objective, const double* x, double* out, int count) const = 0;

 protected:
  Problem(std::string name, int n, int m, int objectives, double horizon,
          bool time_homogeneous)
      : name_(std::move(name)),
        n_(n),
        m_(m),
        objectives_(objectives),
        horizon_(horizon),
        time_homogeneous_(time_homogeneous),
        player_dims_{m} {}

  void set_probes(std::vector<std::vector<double>> probes) { probes_ = std::move(probes); }
  void set_player_dims(std::vector<int> dims) { player_dims_ = std::move(dims); }

 private:
  std::string name_;
  int n_;
  int m_;
  int objectives_;
  double horizon_;
  bool time_homogeneous_;
  std::vector<int> player_dims_;
  std::vector<std::vector<double>> probes_;
};

using ProblemPtr = std::shared_ptr<const Problem>;
using ParamMap = std::map<std::string, double>;

/// Built-in problem registry. Throws NotFoundError for unknown names and
/// std::invalid_argument for unknown parameter keys.
ProblemPtr registry_get(const std::string& name, const ParamMap& params = {});
std::vector<std::string> registry_names();

/// Per-path, per-step control values in U.
class ControlProcess {
 public:
  ControlProcess(int control_dim, int paths, int steps, double fill = 0.0);

  int control_dim() const { return m_; }
  int paths() const { return paths_; }
  int steps() const { return steps_; }

  double* at(int k) { return values_.data() + static_cast<size_t>(k) * paths_ * m_; }
  const double* at(int k) const {
    return values_.data() + static_cast<size_t>(k) * paths_ * m_;
  }
  double& value(int k, int p, int i = 0) {
    return values_[(static_cast<size_t>(k) * paths_ + p) * m_ + i];
  }
  double value(int k, int p, int i = 0) const {
    return values_[(static_cast<size_t>(k) * paths_ + p) * m_ + i];
  }

  static ControlProcess constant(int control_dim, int paths, int steps,
                                 const std::vector<double>& value);
  /// Deterministic control: per-step values shared by all paths.
  static ControlProcess deterministic(int control_dim, int paths,
                                      const std::vector<std::vector<double>>& per_step);

  /// Exact atom-constancy check in tree mode (discrete adaptedness).
  bool is_adapted(const Filtration& filtration, double tol = 0.0) const;

 private:
  int m_;
  int paths_;
  int steps_;
  std::vector<double> values_;  // [(k * paths + p) * m + i]
};

struct ValidationReport {
  bool passed = true;
  double max_derivative_mismatch = 0.0;   // relative, over all coded partials
  std::string worst_entry;                // which evaluator/probe was worst
  // Max observed magnitudes over the probes (boundedness evidence).
  double max_bx = 0.0, max_sx = 0.0, max_bxx = 0.0, max_sxx = 0.0;
  double max_gxx = 0.0, max_hxx = 0.0;
};

/// Central finite-difference audit of all coded x-derivatives at random
/// probe points in the lower-triangle time domain.
ValidationReport validate_h1_h2(const Problem& problem, const TimeGrid& grid,
                                int probe_count, std::uint64_t seed,
                                double fd_step = 1e-5, double tol = 1e-6);

}  // namespace fsvie
