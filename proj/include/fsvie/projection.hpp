#pragma once

#include <map>
#include <memory>
#include <vector>

#include "fsvie/ensembles.hpp"
#include "fsvie/time_grid.hpp"

namespace fsvie {

/// Conditional expectation engine: projects per-path values onto the
/// information available at a time level, and extracts the discrete
/// martingale-representation integrand via the increment-covariance formula
///   Lambda(k) = E[ v dW_{k+1} | F_k ] / dt,
/// which is exact on the tree.
class ProjectionBackend {
 public:
  virtual ~ProjectionBackend() = default;

  /// E[values | F_{t_level}] per path; `values` holds n_comp entries per path.
  virtual void project(const double* values, int n_comp, int level,
                       double* out) const = 0;
  /// Integrand at level k of values measurable at level >= k+1.
  virtual void integrand(const double* values, int n_comp, int k,
                         double* out) const = 0;

  const NoiseEnsemble& ensemble() const { return *ensemble_; }
  int paths() const { return ensemble_->paths(); }

 protected:
  explicit ProjectionBackend(const NoiseEnsemble& ensemble) : ensemble_(&ensemble) {}
  const NoiseEnsemble* ensemble_;
};

/// Exact backend: conditional expectations are weighted averages over
/// filtration atoms.
class TreeProjection final : public ProjectionBackend {
 public:
  TreeProjection(const NoiseEnsemble& ensemble, const Filtration& filtration)
      : ProjectionBackend(ensemble), filtration_(&filtration) {}

  void project(const double* values, int n_comp, int level, double* out) const override;
  void integrand(const double* values, int n_comp, int k, double* out) const override;

  const Filtration& filtration() const { return *filtration_; }

 private:
  const Filtration* filtration_;
};

struct RegressionConfig {
  int degree = 2;          // total polynomial degree in the state components
  double ridge_rel = 1e-8; // ridge = ridge_rel * trace(Gram)
};

/// Least-squares Monte Carlo backend: projections are ridge-regression fits
/// onto state monomials evaluated at the reference state of the level.
class RegressionProjection final : public ProjectionBackend {
 public:
  RegressionProjection(const NoiseEnsemble& ensemble, const StateEnsemble& ref_state,
                       RegressionConfig config = {});

  void project(const double* values, int n_comp, int level, double* out) const override;
  void integrand(const double* values, int n_comp, int k, double* out) const override;

  int basis_size() const { return static_cast<int>(exponents_.size()); }
  /// Regression coefficients of a fit at `level` (basis_size per component).
  void fit_coefficients(const double* values, int n_comp, int level,
                        double* coeffs) const;
  /// Evaluate a coefficient vector at the level's reference states.
  void eval_coefficients(const double* coeffs, int n_comp, int level,
                         double* out) const;

 private:
  struct LevelCache;
  const LevelCache& level_cache(int level) const;
  void basis_row(int level, int path, double* out) const;

  const StateEnsemble* ref_;
  RegressionConfig config_;
  std::vector<std::vector<int>> exponents_;  // multi-indices, constant first
  mutable std::map<int, std::shared_ptr<LevelCache>> cache_;
};

/// Base values, their projections Pi(r) = E_r[Theta] for r in [lo, hi], and
/// integrands Lambda(r) for r in [lo, hi); reconstruction residual is exact
/// (machine zero) in tree mode.
struct MartingaleRep {
  int n_comp = 1;
  int paths = 0;
  int level_lo = 0;
  int level_hi = 0;
  std::vector<double> pi;      // [(level - lo) * paths * n_comp + ...]
  std::vector<double> lambda;  // same layout, levels lo..hi-1
  double recon_residual = 0.0; // max abs over paths of Theta - reconstruction

  const double* pi_at(int level) const {
    return pi.data() + static_cast<size_t>(level - level_lo) * paths * n_comp;
  }
  const double* lambda_at(int level) const {
    return lambda.data() + static_cast<size_t>(level - level_lo) * paths * n_comp;
  }
};

/// Full projection cascade of F_{t_hi}-measurable values down to level lo.
MartingaleRep project_cascade(const ProjectionBackend& backend, const double* values,
                              int n_comp, int level_hi, int level_lo);

/// Max abs tower-property violation E_q[E_r[theta]] vs E_q[theta] over a pair
/// q <= r (diagnostic; exact on the tree).
double tower_residual(const ProjectionBackend& backend, const double* values,
                      int n_comp, int level_r, int level_q);

}  // namespace fsvie
