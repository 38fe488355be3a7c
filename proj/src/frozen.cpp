#include "fsvie/frozen.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fsvie {

namespace {
enum Row { kBx = 0, kSx, kBxx, kSxx, kDb, kDs, kDbx, kDsx, kRowCount };
}

FrozenCoefficients::FrozenCoefficients(ProblemPtr problem, const TimeGrid& grid,
                                       std::shared_ptr<const StateEnsemble> ref_state,
                                       std::shared_ptr<const ControlProcess> ref_control,
                                       std::vector<double> probe_u, int objective,
                                       bool materialize, size_t budget)
    : problem_(std::move(problem)),
      grid_(grid),
      state_(std::move(ref_state)),
      control_(std::move(ref_control)),
      probe_(std::move(probe_u)),
      objective_(objective) {
  const int n = problem_->state_dim();
  const int m = problem_->control_dim();
  if (state_->state_dim() != n || control_->control_dim() != m)
    throw std::invalid_argument("freeze: dimension mismatch between problem and ensembles");
  if (state_->paths() != control_->paths())
    throw std::invalid_argument("freeze: state and control path counts differ");
  if (state_->steps() != grid_.steps() || control_->steps() != grid_.steps())
    throw std::invalid_argument("freeze: state/control not on the given grid");
  if (static_cast<int>(probe_.size()) != m)
    throw std::invalid_argument("freeze: probe value has wrong control dimension");
  if (objective_ < 0 || objective_ >= problem_->num_objectives())
    throw std::invalid_argument("freeze: objective index out of range");

  const int paths = state_->paths();
  const int num_k = grid_.steps();  // cost rows live at k = 0..N-1
  gx_.resize(static_cast<size_t>(num_k) * paths * n);
  gxx_.resize(static_cast<size_t>(num_k) * paths * n * n);
  for (int k = 0; k < num_k; ++k) {
    problem_->g_x(objective_, grid_.node(k), state_->at(k), control_->at(k),
                  gx_.data() + static_cast<size_t>(k) * paths * n, paths);
    problem_->g_xx(objective_, grid_.node(k), state_->at(k), control_->at(k),
                   gxx_.data() + static_cast<size_t>(k) * paths * n * n, paths);
  }
  hx_.resize(static_cast<size_t>(paths) * n);
  hxx_.resize(static_cast<size_t>(paths) * n * n);
  problem_->h_x(objective_, state_->at(grid_.steps()), hx_.data(), paths);
  problem_->h_xx(objective_, state_->at(grid_.steps()), hxx_.data(), paths);

  // Dense caches when the triangle fits the budget.
  tri_cells_ = static_cast<size_t>(grid_.steps() + 1) * (grid_.steps() + 2) / 2;
  const size_t per_jac = tri_cells_ * paths * n * n;
  const size_t per_hess = tri_cells_ * paths * n * n * n;
  const size_t per_vec = tri_cells_ * paths * n;
  if (materialize && 2 * per_jac + 2 * per_hess + 2 * per_vec + 2 * per_jac <= budget) {
    c_bx_.resize(per_jac);
    c_sx_.resize(per_jac);
    c_bxx_.resize(per_hess);
    c_sxx_.resize(per_hess);
    c_db_.resize(per_vec);
    c_ds_.resize(per_vec);
    c_dbx_.resize(per_jac);
    c_dsx_.resize(per_jac);
    for (int j = 0; j <= grid_.steps(); ++j)
      for (int k = 0; k <= j; ++k) {
        const size_t cell = static_cast<size_t>(j) * (j + 1) / 2 + k;
        eval_row(kBx, j, k, c_bx_.data() + cell * paths * n * n);
        eval_row(kSx, j, k, c_sx_.data() + cell * paths * n * n);
        eval_row(kBxx, j, k, c_bxx_.data() + cell * paths * n * n * n);
        eval_row(kSxx, j, k, c_sxx_.data() + cell * paths * n * n * n);
        eval_row(kDb, j, k, c_db_.data() + cell * paths * n);
        eval_row(kDs, j, k, c_ds_.data() + cell * paths * n);
        eval_row(kDbx, j, k, c_dbx_.data() + cell * paths * n * n);
        eval_row(kDsx, j, k, c_dsx_.data() + cell * paths * n * n);
      }
    materialized_ = true;
  }
}

void FrozenCoefficients::eval_row(int which, int j, int k, double* out) const {
  const int n = problem_->state_dim();
  const int paths = state_->paths();
  const double t = grid_.node(j);
  const double s = grid_.node(k);
  // Reference pairs live at k = 0..N-1; the k = N row (needed only for
  // diagnostics) reuses the last control value.
  const int kc = std::min(k, grid_.steps() - 1);
  const double* x = state_->at(k);
  const double* u = control_->at(kc);
  switch (which) {
    case kBx: problem_->b_x(t, s, x, u, out, paths); return;
    case kSx: problem_->sigma_x(t, s, x, u, out, paths); return;
    case kBxx: problem_->b_xx(t, s, x, u, out, paths); return;
    case kSxx: problem_->sigma_xx(t, s, x, u, out, paths); return;
    default: break;
  }
  // Delta rows: evaluate at the probe minus the reference control.
  std::vector<double> probe_u(static_cast<size_t>(paths) * problem_->control_dim());
  for (int p = 0; p < paths; ++p)
    std::memcpy(probe_u.data() + static_cast<size_t>(p) * probe_.size(), probe_.data(),
                probe_.size() * sizeof(double));
  const int stride = which == kDb || which == kDs ? n : n * n;
  std::vector<double> ref(static_cast<size_t>(paths) * stride);
  switch (which) {
    case kDb:
      problem_->b(t, s, x, probe_u.data(), out, paths);
      problem_->b(t, s, x, u, ref.data(), paths);
      break;
    case kDs:
      problem_->sigma(t, s, x, probe_u.data(), out, paths);
      problem_->sigma(t, s, x, u, ref.data(), paths);
      break;
    case kDbx:
      problem_->b_x(t, s, x, probe_u.data(), out, paths);
      problem_->b_x(t, s, x, u, ref.data(), paths);
      break;
    case kDsx:
      problem_->sigma_x(t, s, x, probe_u.data(), out, paths);
      problem_->sigma_x(t, s, x, u, ref.data(), paths);
      break;
    default:
      throw std::logic_error("FrozenCoefficients::eval_row: bad selector");
  }
  for (size_t i = 0; i < ref.size(); ++i) out[i] -= ref[i];
}

#define FSVIE_FROZEN_ACCESSOR(NAME, SELECTOR, CACHE, STRIDE)                         \
  void FrozenCoefficients::NAME(int j, int k, double* out) const {                  \
    const int n = problem_->state_dim();                                            \
    const int paths = state_->paths();                                              \
    (void)n;                                                                        \
    if (materialized_) {                                                            \
      const size_t cell = static_cast<size_t>(j) * (j + 1) / 2 + k;                 \
      std::memcpy(out, CACHE.data() + cell * paths * (STRIDE),                      \
                  sizeof(double) * paths * (STRIDE));                               \
      return;                                                                       \
    }                                                                               \
    eval_row(SELECTOR, j, k, out);                                                  \
  }

FSVIE_FROZEN_ACCESSOR(bx, kBx, c_bx_, n* n)
FSVIE_FROZEN_ACCESSOR(sx, kSx, c_sx_, n* n)
FSVIE_FROZEN_ACCESSOR(bxx, kBxx, c_bxx_, n* n* n)
FSVIE_FROZEN_ACCESSOR(sxx, kSxx, c_sxx_, n* n* n)
FSVIE_FROZEN_ACCESSOR(db, kDb, c_db_, n)
FSVIE_FROZEN_ACCESSOR(dsigma, kDs, c_ds_, n)
FSVIE_FROZEN_ACCESSOR(dbx, kDbx, c_dbx_, n* n)
FSVIE_FROZEN_ACCESSOR(dsx, kDsx, c_dsx_, n* n)

#undef FSVIE_FROZEN_ACCESSOR

const double* FrozenCoefficients::gx(int k) const {
  return gx_.data() + static_cast<size_t>(k) * state_->paths() * problem_->state_dim();
}
const double* FrozenCoefficients::gxx(int k) const {
  const int n = problem_->state_dim();
  return gxx_.data() + static_cast<size_t>(k) * state_->paths() * n * n;
}
const double* FrozenCoefficients::hx() const { return hx_.data(); }
const double* FrozenCoefficients::hxx() const { return hxx_.data(); }

void FrozenCoefficients::dg(int k, double* out) const {
  const int paths = state_->paths();
  const int L = problem_->num_objectives();
  const int m = problem_->control_dim();
  std::vector<double> probe_u(static_cast<size_t>(paths) * m);
  for (int p = 0; p < paths; ++p)
    std::memcpy(probe_u.data() + static_cast<size_t>(p) * m, probe_.data(),
                static_cast<size_t>(m) * sizeof(double));
  std::vector<double> g_probe(static_cast<size_t>(paths) * L), g_ref(static_cast<size_t>(paths) * L);
  problem_->g(grid_.node(k), state_->at(k), probe_u.data(), g_probe.data(), paths);
  problem_->g(grid_.node(k), state_->at(k), control_->at(k), g_ref.data(), paths);
  for (int p = 0; p < paths; ++p)
    out[p] = g_probe[static_cast<size_t>(p) * L + objective_] -
             g_ref[static_cast<size_t>(p) * L + objective_];
}

double FrozenCoefficients::max_abs_sigma_x() const {
  if (!max_sx_) {
    const int n = problem_->state_dim();
    const int paths = state_->paths();
    std::vector<double> row(static_cast<size_t>(paths) * n * n);
    double mx = 0.0;
    for (int j = 0; j <= grid_.steps(); ++j)
      for (int k = 0; k <= j; ++k) {
        sx(j, k, row.data());
        for (double v : row) mx = std::max(mx, std::abs(v));
      }
    max_sx_ = mx;
  }
  return *max_sx_;
}

double FrozenCoefficients::max_abs_b_x() const {
  if (!max_bx_) {
    const int n = problem_->state_dim();
    const int paths = state_->paths();
    std::vector<double> row(static_cast<size_t>(paths) * n * n);
    double mx = 0.0;
    for (int j = 0; j <= grid_.steps(); ++j)
      for (int k = 0; k <= j; ++k) {
        bx(j, k, row.data());
        for (double v : row) mx = std::max(mx, std::abs(v));
      }
    max_bx_ = mx;
  }
  return *max_bx_;
}

FrozenCoefficients freeze(ProblemPtr problem, const TimeGrid& grid,
                          std::shared_ptr<const StateEnsemble> ref_state,
                          std::shared_ptr<const ControlProcess> ref_control,
                          std::vector<double> probe_u, int objective) {
  return FrozenCoefficients(std::move(problem), grid, std::move(ref_state),
                            std::move(ref_control), std::move(probe_u), objective);
}

}  // namespace fsvie
