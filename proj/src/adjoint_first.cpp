#include "fsvie/adjoint_first.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "fsvie/errors.hpp"

namespace fsvie {

double beta_norm_time(const NoiseEnsemble& noise, const double* values,
                      int n_comp, int num_levels, double beta) {
  const int paths = noise.paths();
  const double dt = noise.grid().dt();
  double acc = 0.0;
  for (int k = 0; k < num_levels; ++k) {
    const double wt = std::exp(beta * noise.grid().node(k)) * dt;
    const double* lvl = values + static_cast<size_t>(k) * paths * n_comp;
    double lvl_acc = 0.0;
    for (int p = 0; p < paths; ++p) {
      double s = 0.0;
      for (int c = 0; c < n_comp; ++c) {
        const double v = lvl[static_cast<size_t>(p) * n_comp + c];
        s += v * v;
      }
      lvl_acc += noise.weight(p) * s;
    }
    acc += wt * lvl_acc;
  }
  return acc;
}

MartingaleRep solve_eta_zeta(const double* hx_values, int n,
                             const ProjectionBackend& backend) {
  const int steps = backend.ensemble().grid().steps();
  return project_cascade(backend, hx_values, n, steps, 0);
}

void FirstAdjoint::z_lower(int j, int k, double* out) const {
  if (j <= k || j > steps_ - 1)
    throw std::invalid_argument("FirstAdjoint::z_lower: need k < j <= N-1");
  auto it = std::lower_bound(z_cols_.begin(), z_cols_.end(), k);
  if (it == z_cols_.end() || *it != k) {
    // Column not materialized: recompute the direct integrand regression.
    if (reg_ == nullptr)
      throw std::invalid_argument("FirstAdjoint::z_lower: column not stored");
    const auto& noise = reg_->ensemble();
    const double dt = noise.grid().dt();
    const double* dw = noise.increments_at(k);
    std::vector<double> scaled(static_cast<size_t>(paths_) * n_);
    const double* yj = y(j);
    for (int p = 0; p < paths_; ++p)
      for (int i = 0; i < n_; ++i)
        scaled[static_cast<size_t>(p) * n_ + i] = yj[static_cast<size_t>(p) * n_ + i] * dw[p] / dt;
    reg_->project(scaled.data(), n_, k, out);
    return;
  }
  const size_t col = static_cast<size_t>(it - z_cols_.begin());
  const size_t row = static_cast<size_t>(j - k - 1);
  if (!z_val_.empty()) {
    const double* src = z_val_[col].data() + row * paths_ * n_;
    std::memcpy(out, src, sizeof(double) * paths_ * n_);
    return;
  }
  const int q = reg_->basis_size();
  reg_->eval_coefficients(z_coef_[col].data() + row * n_ * q, n_, k, out);
}

bool FirstAdjoint::has_z_column(int k) const {
  return std::binary_search(z_cols_.begin(), z_cols_.end(), k);
}

const double* FirstAdjoint::z_upper(int k, int j) const {
  if (z_upper_.empty())
    throw std::invalid_argument("FirstAdjoint::z_upper: not stored (regression mode)");
  if (j < k || j > steps_ - 1)
    throw std::invalid_argument("FirstAdjoint::z_upper: need k <= j <= N-1");
  const size_t cell = static_cast<size_t>(k) * steps_ + j;
  return z_upper_.data() + cell * paths_ * n_;
}

double FirstAdjoint::m_residual(const NoiseEnsemble& noise) const {
  double worst = 0.0;
  std::vector<double> z(static_cast<size_t>(paths_) * n_);
  for (int j = 1; j < steps_; ++j) {
    if (![&] {
          for (int k = 0; k < j; ++k)
            if (!has_z_column(k)) return false;
          return true;
        }())
      continue;
    std::vector<double> acc(static_cast<size_t>(paths_) * n_, 0.0);
    for (int k = 0; k < j; ++k) {
      z_lower(j, k, z.data());
      const double* dw = noise.increments_at(k);
      for (int p = 0; p < paths_; ++p)
        for (int c = 0; c < n_; ++c)
          acc[static_cast<size_t>(p) * n_ + c] += z[static_cast<size_t>(p) * n_ + c] * dw[p];
    }
    // E[Y(j)] under the ensemble weights.
    std::vector<double> mean(static_cast<size_t>(n_), 0.0);
    const double* yj = y(j);
    for (int p = 0; p < paths_; ++p)
      for (int c = 0; c < n_; ++c)
        mean[static_cast<size_t>(c)] += noise.weight(p) * yj[static_cast<size_t>(p) * n_ + c];
    for (int p = 0; p < paths_; ++p)
      for (int c = 0; c < n_; ++c)
        worst = std::max(worst, std::abs(mean[static_cast<size_t>(c)] +
                                         acc[static_cast<size_t>(p) * n_ + c] -
                                         yj[static_cast<size_t>(p) * n_ + c]));
  }
  return worst;
}

namespace {

// Accumulate out[p*n + i] += scale_p * J_p^T v_p for per-path Jacobians.
void add_jac_t_vec(const double* jac, const double* v, int n, int paths,
                   double scale, double* out) {
  for (int p = 0; p < paths; ++p) {
    const double* J = jac + static_cast<size_t>(p) * n * n;
    const double* vp = v + static_cast<size_t>(p) * n;
    double* o = out + static_cast<size_t>(p) * n;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int l = 0; l < n; ++l) s += J[static_cast<size_t>(l) * n + i] * vp[static_cast<size_t>(l)];
      o[static_cast<size_t>(i)] += scale * s;
    }
  }
}

}  // namespace

FirstAdjoint solve_first_adjoint(const FrozenCoefficients& frozen,
                                 const ProjectionBackend& backend,
                                 const FirstAdjointOptions& options) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const double horizon = frozen.grid().horizon();
  if (backend.paths() != paths)
    throw std::invalid_argument("solve_first_adjoint: backend path mismatch");
  if (options.tol <= 0) throw std::invalid_argument("solve_first_adjoint: tol > 0");

  const auto* tree = dynamic_cast<const TreeProjection*>(&backend);
  const auto* reg = dynamic_cast<const RegressionProjection*>(&backend);

  FirstAdjoint adj;
  adj.n_ = n;
  adj.paths_ = paths;
  adj.steps_ = steps;
  adj.reg_ = reg;

  // eta / zeta: martingale representation of h_x.
  MartingaleRep hx_rep = solve_eta_zeta(frozen.hx(), n, backend);
  const size_t block = static_cast<size_t>(paths) * n;
  adj.eta_.assign(block * (steps + 1), 0.0);
  adj.zeta_.assign(block * steps, 0.0);
  std::copy(hx_rep.pi.begin(), hx_rep.pi.end(), adj.eta_.begin());
  std::copy(hx_rep.lambda.begin(), hx_rep.lambda.end(), adj.zeta_.begin());

  // Z column bookkeeping.
  adj.z_cols_ = options.z_columns;
  if (adj.z_cols_.empty()) {
    adj.z_cols_.resize(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k) adj.z_cols_[static_cast<size_t>(k)] = k;
  }
  std::sort(adj.z_cols_.begin(), adj.z_cols_.end());

  const double max_sx = frozen.max_abs_sigma_x();
  const double max_bx = frozen.max_abs_b_x();
  const bool z_in_kernel = max_sx > 0.0;
  double beta = options.beta;
  if (beta < 0) beta = 2.0 * (8.0 * max_sx * max_sx + 4.0 * max_bx * max_bx * horizon);
  adj.telemetry.beta = beta;

  // Z columns needed during the sweep (kernel) are all of them; otherwise only
  // the requested output columns are materialized after convergence.
  const bool need_kernel_z = z_in_kernel;
  std::vector<std::vector<double>> z_work;  // [k][(j-k-1)*paths*n], kernel use
  if (need_kernel_z) {
    z_work.resize(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k)
      z_work[static_cast<size_t>(k)].assign(static_cast<size_t>(std::max(0, steps - 1 - k)) * block, 0.0);
  }

  adj.y_.assign(block * steps, options.init_fill);
  std::vector<double> y_prev(adj.y_.size());
  std::vector<double> y_old(adj.y_.size());  // Jacobi reads, backward ignores
  std::vector<double> f(block), jac(static_cast<size_t>(paths) * n * n), tmp(block);
  std::vector<double> diff(adj.y_.size());

  const bool store_upper =
      tree != nullptr &&
      static_cast<size_t>(steps) * steps * block <= (size_t(1) << 26);
  if (store_upper) adj.z_upper_.assign(static_cast<size_t>(steps) * steps * block, 0.0);

  // Refresh the lower-triangle kernel columns for row j from the current Y(j).
  auto cascade_row_j = [&](int j, std::vector<std::vector<double>>& store) {
    // Walk the projections of Y(j) down the levels; integrand at level k is
    // Z(j, k). Exact on the tree, iterated fits in regression mode.
    std::vector<double> cur(adj.y_.begin() + block * j, adj.y_.begin() + block * (j + 1));
    std::vector<double> down(block), lam(block);
    for (int k = j - 1; k >= 0; --k) {
      backend.integrand(cur.data(), n, k, lam.data());
      std::copy(lam.begin(), lam.end(),
                store[static_cast<size_t>(k)].begin() + static_cast<size_t>(j - k - 1) * block);
      backend.project(cur.data(), n, k, down.data());
      cur.swap(down);
    }
  };

  int iter = 0;
  bool converged = false;
  double prev_delta = -1.0;
  while (iter < options.max_iter) {
    ++iter;
    y_prev = adj.y_;
    if (options.sweep == SweepOrder::kJacobi) y_old = y_prev;

    for (int k = steps - 1; k >= 0; --k) {
      // Free term: g_x' + b_x(T,k)' h_x' + s_x(T,k)' zeta(k).
      std::copy(frozen.gx(k), frozen.gx(k) + block, f.begin());
      frozen.bx(steps, k, jac.data());
      add_jac_t_vec(jac.data(), frozen.hx(), n, paths, 1.0, f.data());
      frozen.sx(steps, k, jac.data());
      add_jac_t_vec(jac.data(), adj.zeta_.data() + block * k, n, paths, 1.0, f.data());
      // Kernel: sum over j > k of b_x(j,k)' Y(j) + s_x(j,k)' Z(j,k).
      const double* y_src = options.sweep == SweepOrder::kJacobi ? y_old.data() : adj.y_.data();
      for (int j = k + 1; j < steps; ++j) {
        frozen.bx(j, k, jac.data());
        add_jac_t_vec(jac.data(), y_src + block * j, n, paths, dt, f.data());
        if (need_kernel_z) {
          frozen.sx(j, k, jac.data());
          const double* zjk = z_work[static_cast<size_t>(k)].data() + static_cast<size_t>(j - k - 1) * block;
          add_jac_t_vec(jac.data(), zjk, n, paths, dt, f.data());
        }
      }
      if (store_upper) {
        MartingaleRep rep = project_cascade(backend, f.data(), n, steps, k);
        std::copy(rep.pi_at(k), rep.pi_at(k) + block, adj.y_.begin() + block * k);
        for (int j = k; j < steps; ++j) {
          const size_t cell = static_cast<size_t>(k) * steps + j;
          std::copy(rep.lambda_at(j), rep.lambda_at(j) + block,
                    adj.z_upper_.begin() + cell * block);
        }
      } else {
        backend.project(f.data(), n, k, tmp.data());
        std::copy(tmp.begin(), tmp.end(), adj.y_.begin() + block * k);
      }
      // Keep the kernel's Z columns in sync with the fresh Y(k) so later
      // (smaller) k values see the current iterate in backward order.
      if (need_kernel_z && options.sweep == SweepOrder::kBackward && k >= 1)
        cascade_row_j(k, z_work);
    }
    if (need_kernel_z && options.sweep == SweepOrder::kJacobi)
      for (int j = 1; j < steps; ++j) cascade_row_j(j, z_work);

    for (size_t i = 0; i < diff.size(); ++i) diff[i] = adj.y_[i] - y_prev[i];
    const double delta = std::sqrt(beta_norm_time(backend.ensemble(), diff.data(), n, steps, beta));
    adj.telemetry.deltas.push_back(delta);
    if (prev_delta > 0) adj.telemetry.ratios.push_back(delta / prev_delta);
    prev_delta = delta > 0 ? delta : -1.0;
    if (delta < options.tol) {
      converged = true;
      break;
    }
  }
  adj.telemetry.iterations = iter;
  adj.telemetry.converged = converged;
  if (!converged)
    throw NoConvergence("solve_first_adjoint", iter,
                        adj.telemetry.ratios.empty() ? 0.0 : adj.telemetry.ratios.back());

  // Materialize the requested lower-triangle columns from the converged Y.
  if (tree || need_kernel_z) {
    // Per-path values; reuse the kernel columns when they exist.
    adj.z_val_.resize(adj.z_cols_.size());
    for (size_t c = 0; c < adj.z_cols_.size(); ++c) {
      const int k = adj.z_cols_[c];
      adj.z_val_[c].assign(static_cast<size_t>(std::max(0, steps - 1 - k)) * block, 0.0);
    }
    if (need_kernel_z) {
      for (size_t c = 0; c < adj.z_cols_.size(); ++c)
        adj.z_val_[c] = z_work[static_cast<size_t>(adj.z_cols_[c])];
    } else {
      std::vector<std::vector<double>> full(static_cast<size_t>(steps));
      for (int k = 0; k < steps; ++k)
        full[static_cast<size_t>(k)].assign(static_cast<size_t>(std::max(0, steps - 1 - k)) * block, 0.0);
      for (int j = 1; j < steps; ++j) cascade_row_j(j, full);
      for (size_t c = 0; c < adj.z_cols_.size(); ++c)
        adj.z_val_[c] = std::move(full[static_cast<size_t>(adj.z_cols_[c])]);
    }
  } else {
    // Regression backend with a dead diffusion kernel: store fitted
    // coefficients of the direct integrand regressions, column by column.
    const int q = reg->basis_size();
    adj.z_coef_.resize(adj.z_cols_.size());
    std::vector<double> scaled(block);
    for (size_t c = 0; c < adj.z_cols_.size(); ++c) {
      const int k = adj.z_cols_[c];
      adj.z_coef_[c].assign(static_cast<size_t>(std::max(0, steps - 1 - k)) * n * q, 0.0);
      const double* dw = backend.ensemble().increments_at(k);
      for (int j = k + 1; j < steps; ++j) {
        const double* yj = adj.y_.data() + block * j;
        for (int p = 0; p < paths; ++p)
          for (int i = 0; i < n; ++i)
            scaled[static_cast<size_t>(p) * n + i] = yj[static_cast<size_t>(p) * n + i] * dw[p] / dt;
        reg->fit_coefficients(scaled.data(), n, k,
                              adj.z_coef_[c].data() + static_cast<size_t>(j - k - 1) * n * q);
      }
    }
  }
  return adj;
}

}  // namespace fsvie
