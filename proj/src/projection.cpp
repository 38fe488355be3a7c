#include "fsvie/projection.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "fsvie/errors.hpp"

namespace fsvie {

void TreeProjection::project(const double* values, int n_comp, int level,
                             double* out) const {
  const auto& atoms = filtration_->atoms(level);
  const auto& order = filtration_->order();
  const auto& w = ensemble_->weights();
  std::vector<double> acc(static_cast<size_t>(n_comp));
  for (const auto& atom : atoms) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double wsum = 0.0;
    for (int i = atom.begin; i < atom.end; ++i) {
      const int p = order[static_cast<size_t>(i)];
      wsum += w[static_cast<size_t>(p)];
      for (int c = 0; c < n_comp; ++c)
        acc[static_cast<size_t>(c)] += w[static_cast<size_t>(p)] * values[static_cast<size_t>(p) * n_comp + c];
    }
    for (int i = atom.begin; i < atom.end; ++i) {
      const int p = order[static_cast<size_t>(i)];
      for (int c = 0; c < n_comp; ++c)
        out[static_cast<size_t>(p) * n_comp + c] = acc[static_cast<size_t>(c)] / wsum;
    }
  }
}

void TreeProjection::integrand(const double* values, int n_comp, int k,
                               double* out) const {
  const auto& atoms = filtration_->atoms(k);
  const auto& order = filtration_->order();
  const auto& w = ensemble_->weights();
  const double* dw = ensemble_->increments_at(k);
  const double dt = ensemble_->grid().dt();
  std::vector<double> acc(static_cast<size_t>(n_comp));
  for (const auto& atom : atoms) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double wsum = 0.0;
    for (int i = atom.begin; i < atom.end; ++i) {
      const int p = order[static_cast<size_t>(i)];
      wsum += w[static_cast<size_t>(p)];
      for (int c = 0; c < n_comp; ++c)
        acc[static_cast<size_t>(c)] += w[static_cast<size_t>(p)] * values[static_cast<size_t>(p) * n_comp + c] * dw[p];
    }
    for (int i = atom.begin; i < atom.end; ++i) {
      const int p = order[static_cast<size_t>(i)];
      for (int c = 0; c < n_comp; ++c)
        out[static_cast<size_t>(p) * n_comp + c] = acc[static_cast<size_t>(c)] / (wsum * dt);
    }
  }
}

struct RegressionProjection::LevelCache {
  Eigen::LDLT<Eigen::MatrixXd> solver;
  Eigen::MatrixXd gram;
};

RegressionProjection::RegressionProjection(const NoiseEnsemble& ensemble,
                                           const StateEnsemble& ref_state,
                                           RegressionConfig config)
    : ProjectionBackend(ensemble), ref_(&ref_state), config_(config) {
  if (config_.degree < 0) throw std::invalid_argument("RegressionConfig: degree >= 0");
  if (config_.ridge_rel < 0) throw std::invalid_argument("RegressionConfig: ridge >= 0");
  // Enumerate monomial multi-indices of total degree <= degree, constant first.
  const int n = ref_->state_dim();
  std::vector<int> idx(static_cast<size_t>(n), 0);
  std::vector<std::vector<int>> all;
  // Simple recursive enumeration ordered by total degree.
  for (int total = 0; total <= config_.degree; ++total) {
    std::vector<int> stack(static_cast<size_t>(n), 0);
    // iterate compositions of `total` into n parts
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
      if (pos == n - 1) {
        stack[static_cast<size_t>(pos)] = remaining;
        all.push_back(stack);
        return;
      }
      for (int v = 0; v <= remaining; ++v) {
        stack[static_cast<size_t>(pos)] = v;
        rec(pos + 1, remaining - v);
      }
    };
    rec(0, total);
  }
  exponents_ = std::move(all);
}

void RegressionProjection::basis_row(int level, int path, double* out) const {
  const int n = ref_->state_dim();
  const double* x = ref_->at(level) + static_cast<size_t>(path) * n;
  for (size_t b = 0; b < exponents_.size(); ++b) {
    double v = 1.0;
    for (int i = 0; i < n; ++i)
      for (int e = 0; e < exponents_[b][static_cast<size_t>(i)]; ++e) v *= x[i];
    out[b] = v;
  }
}

const RegressionProjection::LevelCache& RegressionProjection::level_cache(int level) const {
  auto it = cache_.find(level);
  if (it != cache_.end()) return *it->second;
  const int q = basis_size();
  const int m = paths();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(q, q);
  std::vector<double> row(static_cast<size_t>(q));
  for (int p = 0; p < m; ++p) {
    basis_row(level, p, row.data());
    const double w = ensemble_->weight(p);
    for (int a = 0; a < q; ++a)
      for (int b = a; b < q; ++b) gram(a, b) += w * row[static_cast<size_t>(a)] * row[static_cast<size_t>(b)];
  }
  for (int a = 0; a < q; ++a)
    for (int b = 0; b < a; ++b) gram(a, b) = gram(b, a);
  if (!gram.allFinite())
    throw IllConditioned("regression Gram matrix is not finite");
  const double ridge = config_.ridge_rel * gram.trace();
  Eigen::MatrixXd reg = gram + ridge * Eigen::MatrixXd::Identity(q, q);
  auto cache = std::make_shared<LevelCache>();
  cache->solver.compute(reg);
  cache->gram = std::move(reg);
  if (cache->solver.info() != Eigen::Success)
    throw IllConditioned("regression normal equations not factorizable");
  auto [pos, inserted] = cache_.emplace(level, std::move(cache));
  return *pos->second;
}

void RegressionProjection::fit_coefficients(const double* values, int n_comp,
                                            int level, double* coeffs) const {
  const int q = basis_size();
  const int m = paths();
  const auto& cache = level_cache(level);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(q, n_comp);
  std::vector<double> row(static_cast<size_t>(q));
  for (int p = 0; p < m; ++p) {
    basis_row(level, p, row.data());
    const double w = ensemble_->weight(p);
    for (int c = 0; c < n_comp; ++c) {
      const double wv = w * values[static_cast<size_t>(p) * n_comp + c];
      for (int a = 0; a < q; ++a) rhs(a, c) += wv * row[static_cast<size_t>(a)];
    }
  }
  Eigen::MatrixXd beta = cache.solver.solve(rhs);
  if (!beta.allFinite()) throw IllConditioned("regression solve produced non-finite coefficients");
  for (int c = 0; c < n_comp; ++c)
    for (int a = 0; a < q; ++a) coeffs[static_cast<size_t>(c) * q + a] = beta(a, c);
}

void RegressionProjection::eval_coefficients(const double* coeffs, int n_comp,
                                             int level, double* out) const {
  const int q = basis_size();
  const int m = paths();
  std::vector<double> row(static_cast<size_t>(q));
  for (int p = 0; p < m; ++p) {
    basis_row(level, p, row.data());
    for (int c = 0; c < n_comp; ++c) {
      double s = 0.0;
      for (int a = 0; a < q; ++a) s += coeffs[static_cast<size_t>(c) * q + a] * row[static_cast<size_t>(a)];
      out[static_cast<size_t>(p) * n_comp + c] = s;
    }
  }
}

void RegressionProjection::project(const double* values, int n_comp, int level,
                                   double* out) const {
  std::vector<double> coeffs(static_cast<size_t>(n_comp) * basis_size());
  fit_coefficients(values, n_comp, level, coeffs.data());
  eval_coefficients(coeffs.data(), n_comp, level, out);
}

void RegressionProjection::integrand(const double* values, int n_comp, int k,
                                     double* out) const {
  const int m = paths();
  const double dt = ensemble_->grid().dt();
  const double* dw = ensemble_->increments_at(k);
  std::vector<double> scaled(static_cast<size_t>(m) * n_comp);
  for (int p = 0; p < m; ++p)
    for (int c = 0; c < n_comp; ++c)
      scaled[static_cast<size_t>(p) * n_comp + c] =
          values[static_cast<size_t>(p) * n_comp + c] * dw[p] / dt;
  project(scaled.data(), n_comp, k, out);
}

MartingaleRep project_cascade(const ProjectionBackend& backend, const double* values,
                              int n_comp, int level_hi, int level_lo) {
  if (level_lo > level_hi) throw std::invalid_argument("project_cascade: lo > hi");
  const int m = backend.paths();
  MartingaleRep rep;
  rep.n_comp = n_comp;
  rep.paths = m;
  rep.level_lo = level_lo;
  rep.level_hi = level_hi;
  const size_t block = static_cast<size_t>(m) * n_comp;
  rep.pi.assign(block * (level_hi - level_lo + 1), 0.0);
  rep.lambda.assign(block * std::max(0, level_hi - level_lo), 0.0);

  // Pi(hi) = Theta itself.
  std::copy(values, values + block, rep.pi.begin() + block * (level_hi - level_lo));
  for (int r = level_hi - 1; r >= level_lo; --r) {
    const double* upper = rep.pi.data() + block * (r + 1 - level_lo);
    backend.project(upper, n_comp, r, rep.pi.data() + block * (r - level_lo));
    backend.integrand(upper, n_comp, r, rep.lambda.data() + block * (r - level_lo));
  }

  // Reconstruction residual of Theta from Pi(lo) and the integrands.
  const auto& noise = backend.ensemble();
  double worst = 0.0;
  for (int p = 0; p < m; ++p)
    for (int c = 0; c < n_comp; ++c) {
      double acc = rep.pi[static_cast<size_t>(p) * n_comp + c];
      for (int k = level_lo; k < level_hi; ++k)
        acc += rep.lambda[block * (k - level_lo) + static_cast<size_t>(p) * n_comp + c] *
               noise.increment(k, p) ;
      worst = std::max(worst, std::abs(acc - values[static_cast<size_t>(p) * n_comp + c]));
    }
  rep.recon_residual = worst;
  return rep;
}

double tower_residual(const ProjectionBackend& backend, const double* values,
                      int n_comp, int level_r, int level_q) {
  const int m = backend.paths();
  const size_t block = static_cast<size_t>(m) * n_comp;
  std::vector<double> at_r(block), two_step(block), direct(block);
  backend.project(values, n_comp, level_r, at_r.data());
  backend.project(at_r.data(), n_comp, level_q, two_step.data());
  backend.project(values, n_comp, level_q, direct.data());
  double worst = 0.0;
  for (size_t i = 0; i < block; ++i)
    worst = std::max(worst, std::abs(two_step[i] - direct[i]));
  return worst;
}

}  // namespace fsvie
