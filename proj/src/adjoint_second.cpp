#include "fsvie/adjoint_second.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fsvie/errors.hpp"

namespace fsvie {

namespace {

// out_p += A_p^T B_p for per-path n x n blocks (row-major).
void add_mat_t_mat(const double* a, const double* b, int n, int paths, double scale,
                   double* out) {
  for (int p = 0; p < paths; ++p) {
    const double* A = a + static_cast<size_t>(p) * n * n;
    const double* B = b + static_cast<size_t>(p) * n * n;
    double* O = out + static_cast<size_t>(p) * n * n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l)
          s += A[static_cast<size_t>(l) * n + i] * B[static_cast<size_t>(l) * n + j];
        O[static_cast<size_t>(i) * n + j] += scale * s;
      }
  }
}

// out_p += scale * A_p^T B_p C_p (all n x n, row-major).
void add_mat_t_mat_mat(const double* a, const double* b, const double* c, int n,
                       int paths, double scale, double* out) {
  for (int p = 0; p < paths; ++p) {
    const double* A = a + static_cast<size_t>(p) * n * n;
    const double* B = b + static_cast<size_t>(p) * n * n;
    const double* C = c + static_cast<size_t>(p) * n * n;
    double* O = out + static_cast<size_t>(p) * n * n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) {
          double bc = 0.0;
          for (int q = 0; q < n; ++q)
            bc += B[static_cast<size_t>(l) * n + q] * C[static_cast<size_t>(q) * n + j];
          s += A[static_cast<size_t>(l) * n + i] * bc;
        }
        O[static_cast<size_t>(i) * n + j] += scale * s;
      }
  }
}

double max_abs(const double* v, size_t count) {
  double m = 0.0;
  for (size_t i = 0; i < count; ++i) m = std::max(m, std::abs(v[i]));
  return m;
}

}  // namespace

double beta_norm_square(const NoiseEnsemble& noise,
                        const std::function<void(int, int, double*)>& field,
                        int n_comp, double beta) {
  const int paths = noise.paths();
  const int steps = noise.grid().steps();
  const double dt = noise.grid().dt();
  std::vector<double> buf(static_cast<size_t>(paths) * n_comp);
  double acc = 0.0;
  for (int s = 0; s < steps; ++s)
    for (int r = 0; r < steps; ++r) {
      field(s, r, buf.data());
      const double wt = std::exp(beta * (noise.grid().node(s) + noise.grid().node(r))) * dt * dt;
      double cell = 0.0;
      for (int p = 0; p < paths; ++p) {
        double sq = 0.0;
        for (int c = 0; c < n_comp; ++c) {
          const double v = buf[static_cast<size_t>(p) * n_comp + c];
          sq += v * v;
        }
        cell += noise.weight(p) * sq;
      }
      acc += wt * cell;
    }
  return acc;
}

std::vector<double> hamiltonian_hessian(const FrozenCoefficients& frozen,
                                        const FirstAdjoint& first,
                                        const ProjectionBackend& backend) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const size_t mb = static_cast<size_t>(paths) * n * n;
  std::vector<double> out(static_cast<size_t>(steps) * mb, 0.0);
  std::vector<double> hess(static_cast<size_t>(paths) * n * n * n);
  std::vector<double> acc(mb), z(static_cast<size_t>(paths) * n), proj(mb);

  auto add_weighted_hess = [&](const double* weights, const double* H, double scale,
                               double* dst) {
    // dst_p += scale * sum_i weights_p[i] * H_p[i] (each H_p[i] is n x n).
    for (int p = 0; p < paths; ++p) {
      const double* w = weights + static_cast<size_t>(p) * n;
      const double* Hp = H + static_cast<size_t>(p) * n * n * n;
      double* d = dst + static_cast<size_t>(p) * n * n;
      for (int i = 0; i < n; ++i) {
        const double wi = scale * w[static_cast<size_t>(i)];
        if (wi == 0.0) continue;
        const double* Hi = Hp + static_cast<size_t>(i) * n * n;
        for (int e = 0; e < n * n; ++e) d[e] += wi * Hi[e];
      }
    }
  };

  for (int k = 0; k < steps; ++k) {
    double* dst = out.data() + static_cast<size_t>(k) * mb;
    std::memcpy(dst, frozen.gxx(k), sizeof(double) * mb);
    frozen.bxx(steps, k, hess.data());
    add_weighted_hess(first.eta(k), hess.data(), 1.0, dst);
    frozen.sxx(steps, k, hess.data());
    add_weighted_hess(first.zeta(k), hess.data(), 1.0, dst);

    std::fill(acc.begin(), acc.end(), 0.0);
    bool any = false;
    for (int j = k + 1; j < steps; ++j) {
      frozen.bxx(j, k, hess.data());
      if (max_abs(hess.data(), hess.size()) > 0.0) {
        add_weighted_hess(first.y(j), hess.data(), dt, acc.data());
        any = true;
      }
      frozen.sxx(j, k, hess.data());
      if (max_abs(hess.data(), hess.size()) > 0.0) {
        first.z_lower(j, k, z.data());
        add_weighted_hess(z.data(), hess.data(), dt, acc.data());
        any = true;
      }
    }
    if (any) {
      backend.project(acc.data(), n * n, k, proj.data());
      for (size_t e = 0; e < mb; ++e) dst[e] += proj[e];
    }
  }
  return out;
}

void SecondAdjoint::p3_any(int s, int r, double* out) const {
  if (s == r) throw std::invalid_argument("SecondAdjoint::p3_any: diagonal not defined");
  const size_t mb = static_cast<size_t>(paths_) * n_ * n_;
  if (s > r) {
    std::memcpy(out, p3_stored(s, r), sizeof(double) * mb);
    return;
  }
  const double* src = p3_stored(r, s);
  for (int p = 0; p < paths_; ++p) {
    const double* S = src + static_cast<size_t>(p) * n_ * n_;
    double* O = out + static_cast<size_t>(p) * n_ * n_;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        O[static_cast<size_t>(i) * n_ + j] = S[static_cast<size_t>(j) * n_ + i];
  }
}

void solve_p1_q1(const double* hxx_values, int n, const ProjectionBackend& backend,
                 SecondAdjoint& out) {
  const int steps = backend.ensemble().grid().steps();
  const int paths = backend.paths();
  MartingaleRep rep = project_cascade(backend, hxx_values, n * n, steps, 0);
  out.n_ = n;
  out.paths_ = paths;
  out.steps_ = steps;
  out.p1_ = rep.pi;
  out.q1_ = rep.lambda;
}

void solve_p2_q2(const FrozenCoefficients& frozen, const ProjectionBackend& backend,
                 const SecondAdjointOptions& options, SecondAdjoint& out) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const size_t mb = static_cast<size_t>(paths) * n * n;

  const double max_sx = frozen.max_abs_sigma_x();
  const double max_bx = frozen.max_abs_b_x();
  double beta = options.beta;
  if (beta < 0)
    beta = 2.0 * (8.0 * max_sx * max_sx + 4.0 * max_bx * max_bx * frozen.grid().horizon());
  out.p2_telemetry = {};
  out.p2_telemetry.beta = beta;

  out.p2_.assign(mb * steps, 0.0);
  out.q2_.assign(mb * steps * steps, 0.0);
  const bool z_in_kernel = max_sx > 0.0;

  std::vector<double> p2_prev(out.p2_.size()), p2_old(out.p2_.size());
  std::vector<double> f(mb), jac(static_cast<size_t>(paths) * n * n), diff(out.p2_.size());

  // Lower-triangle Q2 columns from the current P2 rows (M-constraint part).
  auto cascade_row = [&](int s) {
    std::vector<double> cur(out.p2_.begin() + mb * s, out.p2_.begin() + mb * (s + 1));
    std::vector<double> down(mb), lam(mb);
    for (int k = s - 1; k >= 0; --k) {
      backend.integrand(cur.data(), n * n, k, lam.data());
      std::copy(lam.begin(), lam.end(),
                out.q2_.begin() + (static_cast<size_t>(s) * steps + k) * mb);
      backend.project(cur.data(), n * n, k, down.data());
      cur.swap(down);
    }
  };

  int iter = 0;
  bool converged = false;
  double prev_delta = -1.0;
  while (iter < options.max_outer) {
    ++iter;
    p2_prev = out.p2_;
    if (options.sweep == SweepOrder::kJacobi) p2_old = p2_prev;
    for (int s = steps - 1; s >= 0; --s) {
      // Free term bx(N,s)' P1(s) + sx(N,s)' Q1(s).
      std::fill(f.begin(), f.end(), 0.0);
      frozen.bx(steps, s, jac.data());
      add_mat_t_mat(jac.data(), out.p1(s), n, paths, 1.0, f.data());
      frozen.sx(steps, s, jac.data());
      add_mat_t_mat(jac.data(), out.q1(s), n, paths, 1.0, f.data());
      const double* p2_src = options.sweep == SweepOrder::kJacobi ? p2_old.data() : out.p2_.data();
      for (int theta = s + 1; theta < steps; ++theta) {
        frozen.bx(theta, s, jac.data());
        add_mat_t_mat(jac.data(), p2_src + mb * theta, n, paths, dt, f.data());
        if (z_in_kernel) {
          frozen.sx(theta, s, jac.data());
          add_mat_t_mat(jac.data(), out.q2(theta, s), n, paths, dt, f.data());
        }
      }
      // P2(s) = E_s[f]; representation integrands give Q2(s, theta >= s).
      MartingaleRep rep = project_cascade(backend, f.data(), n * n, steps, s);
      std::copy(rep.pi_at(s), rep.pi_at(s) + mb, out.p2_.begin() + mb * s);
      for (int theta = s; theta < steps; ++theta)
        std::copy(rep.lambda_at(theta), rep.lambda_at(theta) + mb,
                  out.q2_.begin() + (static_cast<size_t>(s) * steps + theta) * mb);
      if (options.sweep == SweepOrder::kBackward && s >= 1) cascade_row(s);
    }
    if (options.sweep == SweepOrder::kJacobi)
      for (int s = 1; s < steps; ++s) cascade_row(s);

    for (size_t i = 0; i < diff.size(); ++i) diff[i] = out.p2_[i] - p2_prev[i];
    const double delta =
        std::sqrt(beta_norm_time(backend.ensemble(), diff.data(), n * n, steps, beta));
    out.p2_telemetry.deltas.push_back(delta);
    if (prev_delta > 0) out.p2_telemetry.ratios.push_back(delta / prev_delta);
    prev_delta = delta > 0 ? delta : -1.0;
    if (delta < options.tol) {
      converged = true;
      break;
    }
  }
  out.p2_telemetry.iterations = iter;
  out.p2_telemetry.converged = converged;
  if (!converged)
    throw NoConvergence("solve_p2_q2", iter,
                        out.p2_telemetry.ratios.empty() ? 0.0 : out.p2_telemetry.ratios.back());
}

SecondAdjointSources build_sources(const FrozenCoefficients& frozen,
                                   const FirstAdjoint& first,
                                   const SecondAdjoint& partial,
                                   const ProjectionBackend& backend) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const size_t mb = static_cast<size_t>(paths) * n * n;

  SecondAdjointSources src;
  src.n = n;
  src.paths = paths;
  src.steps = steps;
  src.hxx = hamiltonian_hessian(frozen, first, backend);

  // HH_1(s, r) = bx(N,r)' E_r[P2(s)'] + sx(N,r)' Q2(s,r)', r < s.
  src.h1.assign(SecondAdjointSources::tri_cell(steps, 0) * mb, 0.0);
  std::vector<double> jac(static_cast<size_t>(paths) * n * n);
  std::vector<double> proj(mb), transposed(mb);
  auto transpose_blocks = [&](const double* in, double* outp) {
    for (int p = 0; p < paths; ++p) {
      const double* A = in + static_cast<size_t>(p) * n * n;
      double* O = outp + static_cast<size_t>(p) * n * n;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          O[static_cast<size_t>(i) * n + j] = A[static_cast<size_t>(j) * n + i];
    }
  };
  for (int s = 1; s < steps; ++s) {
    for (int r = 0; r < s; ++r) {
      double* dst = src.h1.data() + SecondAdjointSources::tri_cell(s, r) * mb;
      backend.project(partial.p2(s), n * n, r, proj.data());
      transpose_blocks(proj.data(), transposed.data());
      frozen.bx(steps, r, jac.data());
      add_mat_t_mat(jac.data(), transposed.data(), n, paths, 1.0, dst);
      transpose_blocks(partial.q2(s, r), transposed.data());
      frozen.sx(steps, r, jac.data());
      add_mat_t_mat(jac.data(), transposed.data(), n, paths, 1.0, dst);
    }
  }

  // HH_2(r) = H_xx(r) + sx(N,r)' P1(r) sx(N,r)
  //         + E_r sum_{s>r} [sx(s,r)' P2(s) sx(N,r) + sx(N,r)' P2(s)' sx(s,r)] dt.
  src.h2.assign(static_cast<size_t>(steps) * mb, 0.0);
  std::vector<double> jacN(static_cast<size_t>(paths) * n * n), acc(mb);
  for (int r = 0; r < steps; ++r) {
    double* dst = src.h2.data() + static_cast<size_t>(r) * mb;
    std::memcpy(dst, src.hxx_at(r), sizeof(double) * mb);
    frozen.sx(steps, r, jacN.data());
    add_mat_t_mat_mat(jacN.data(), partial.p1(r), jacN.data(), n, paths, 1.0, dst);
    std::fill(acc.begin(), acc.end(), 0.0);
    bool any = false;
    for (int s = r + 1; s < steps; ++s) {
      frozen.sx(s, r, jac.data());
      if (max_abs(jac.data(), jac.size()) == 0.0 && max_abs(jacN.data(), jacN.size()) == 0.0)
        continue;
      any = true;
      add_mat_t_mat_mat(jac.data(), partial.p2(s), jacN.data(), n, paths, dt, acc.data());
      transpose_blocks(partial.p2(s), transposed.data());
      add_mat_t_mat_mat(jacN.data(), transposed.data(), jac.data(), n, paths, dt, acc.data());
    }
    if (any) {
      backend.project(acc.data(), n * n, r, proj.data());
      for (size_t e = 0; e < mb; ++e) dst[e] += proj[e];
    }
  }
  return src;
}

void solve_p3_p4(const FrozenCoefficients& frozen, const SecondAdjointSources& sources,
                 const ProjectionBackend& backend, const SecondAdjointOptions& options,
                 SecondAdjoint& out) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const size_t mb = static_cast<size_t>(paths) * n * n;

  const double max_sx = frozen.max_abs_sigma_x();
  const double max_bx = frozen.max_abs_b_x();
  double beta = options.beta;
  if (beta < 0)
    beta = 2.0 * (8.0 * max_sx * max_sx + 4.0 * max_bx * max_bx * frozen.grid().horizon());
  out.outer_telemetry = {};
  out.outer_telemetry.beta = beta;

  const size_t tri_pairs = SecondAdjointSources::tri_cell(steps, 0);
  out.p3_.assign(tri_pairs * mb, 0.0);
  out.p4_.assign(static_cast<size_t>(steps) * mb, 0.0);
  out.q4_.assign(tri_pairs * mb, 0.0);

  std::vector<double> p4_prev(out.p4_.size());
  std::vector<double> jac(static_cast<size_t>(paths) * n * n), jac2(jac.size());
  std::vector<double> buf(mb), buf2(mb), lam(mb);

  // Q4(s, r) = integrand at r of P4(s) (valid: P4(s) is F_s measurable, r < s).
  auto refresh_q4 = [&]() {
    for (int s = 1; s < steps; ++s)
      for (int r = 0; r < s; ++r)
        backend.integrand(out.p4_.data() + mb * s, n * n, r,
                          out.q4_.data() + SecondAdjointSources::tri_cell(s, r) * mb);
  };

  // One Gauss-Seidel pass of the P3 system at frozen (p4, q4): columns r in
  // decreasing order only reference pairs with min index > r.
  auto p3_pass = [&](std::vector<double>& p3_field) {
    for (int r = steps - 2; r >= 0; --r) {
      for (int s = r + 1; s < steps; ++s) {
        double* dst = p3_field.data() + SecondAdjointSources::tri_cell(s, r) * mb;
        std::memcpy(dst, sources.h1_at(s, r), sizeof(double) * mb);
        // bx(s,r)' E_r[P4(s)] + sx(s,r)' Q4(s,r).
        frozen.bx(s, r, jac.data());
        backend.project(out.p4_.data() + mb * s, n * n, r, buf.data());
        add_mat_t_mat(jac.data(), buf.data(), n, paths, 1.0, dst);
        frozen.sx(s, r, jac.data());
        add_mat_t_mat(jac.data(), out.q4_.data() + SecondAdjointSources::tri_cell(s, r) * mb,
                      n, paths, 1.0, dst);
        // Kernel over t in (r, N), t != s: bx(t,r)' E_r[P3(s,t)] + sx(t,r)' Q3(s,t,r).
        for (int t = r + 1; t < steps; ++t) {
          if (t == s) continue;
          // P3(s,t) via the stored strict triangle and the swap symmetry.
          const int hi = std::max(s, t), lo = std::min(s, t);
          const double* block = p3_field.data() + SecondAdjointSources::tri_cell(hi, lo) * mb;
          if (s > t) {
            std::memcpy(buf2.data(), block, sizeof(double) * mb);
          } else {
            for (int p = 0; p < paths; ++p) {
              const double* A = block + static_cast<size_t>(p) * n * n;
              double* O = buf2.data() + static_cast<size_t>(p) * n * n;
              for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                  O[static_cast<size_t>(i) * n + j] = A[static_cast<size_t>(j) * n + i];
            }
          }
          frozen.bx(t, r, jac.data());
          backend.project(buf2.data(), n * n, r, buf.data());
          add_mat_t_mat(jac.data(), buf.data(), n, paths, dt, dst);
          frozen.sx(t, r, jac2.data());
          if (max_abs(jac2.data(), jac2.size()) > 0.0) {
            backend.integrand(buf2.data(), n * n, r, lam.data());
            add_mat_t_mat(jac2.data(), lam.data(), n, paths, dt, dst);
          }
        }
      }
    }
  };

  int iter = 0;
  bool converged = false;
  double prev_delta = -1.0;
  while (iter < options.max_outer) {
    ++iter;
    p4_prev = out.p4_;
    refresh_q4();

    // Inner solve of the P3 system at the current (p4, q4). The backward pass
    // closes the system exactly; iterate until the delta confirms it.
    std::vector<double> p3_prev;
    for (int inner = 0; inner < options.max_inner; ++inner) {
      p3_prev = out.p3_;
      p3_pass(out.p3_);
      double num = 0.0;
      for (size_t i = 0; i < out.p3_.size(); ++i) {
        const double d = out.p3_[i] - p3_prev[i];
        num = std::max(num, std::abs(d));
      }
      if (num < options.tol) break;
      if (inner + 1 == options.max_inner)
        throw NoConvergence("solve_p3_p4 (inner)", inner + 1, num);
    }

    // P4 update from its equation, reading the old p4 inside E_r.
    std::vector<double> p4_new(out.p4_.size(), 0.0);
    std::vector<double> sxN(static_cast<size_t>(paths) * n * n);
    for (int r = 0; r < steps; ++r) {
      double* dst = p4_new.data() + mb * r;
      std::memcpy(dst, sources.h2_at(r), sizeof(double) * mb);
      for (int t = r + 1; t < steps; ++t) {
        frozen.sx(t, r, jac.data());
        if (max_abs(jac.data(), jac.size()) == 0.0) continue;
        backend.project(p4_prev.data() + mb * t, n * n, r, buf.data());
        add_mat_t_mat_mat(jac.data(), buf.data(), jac.data(), n, paths, dt, dst);
        for (int s = r + 1; s < steps; ++s) {
          if (s == t) continue;
          frozen.sx(s, r, jac2.data());
          if (max_abs(jac2.data(), jac2.size()) == 0.0) continue;
          const int hi = std::max(s, t), lo = std::min(s, t);
          const double* block = out.p3_.data() + SecondAdjointSources::tri_cell(hi, lo) * mb;
          if (s >= t) {
            // need P3(s,t): stored when s > t
            std::memcpy(buf2.data(), block, sizeof(double) * mb);
          } else {
            for (int p = 0; p < paths; ++p) {
              const double* A = block + static_cast<size_t>(p) * n * n;
              double* O = buf2.data() + static_cast<size_t>(p) * n * n;
              for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                  O[static_cast<size_t>(i) * n + j] = A[static_cast<size_t>(j) * n + i];
            }
          }
          backend.project(buf2.data(), n * n, r, buf.data());
          add_mat_t_mat_mat(jac.data(), buf.data(), jac2.data(), n, paths, dt * dt, dst);
        }
      }
    }
    std::vector<double> diff(out.p4_.size());
    for (size_t i = 0; i < diff.size(); ++i) diff[i] = p4_new[i] - p4_prev[i];
    out.p4_ = std::move(p4_new);
    const double delta =
        std::sqrt(beta_norm_time(backend.ensemble(), diff.data(), n * n, steps, beta));
    out.outer_telemetry.deltas.push_back(delta);
    if (prev_delta > 0) out.outer_telemetry.ratios.push_back(delta / prev_delta);
    prev_delta = delta > 0 ? delta : -1.0;
    if (delta < options.tol) {
      converged = true;
      break;
    }
  }
  out.outer_telemetry.iterations = iter;
  out.outer_telemetry.converged = converged;
  if (!converged)
    throw NoConvergence("solve_p3_p4 (outer)", iter,
                        out.outer_telemetry.ratios.empty() ? 0.0
                                                           : out.outer_telemetry.ratios.back());

  // Re-solve P3 and Q4 against the converged p4 so all pieces are consistent.
  refresh_q4();
  for (int pass = 0; pass < 2; ++pass) p3_pass(out.p3_);

  // Symmetry audit of P4 (its equation has a symmetric right side).
  double asym = 0.0;
  for (int r = 0; r < steps; ++r) {
    const double* P = out.p4(r);
    for (int p = 0; p < paths; ++p)
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          asym = std::max(asym, std::abs(P[static_cast<size_t>(p) * n * n + i * n + j] -
                                         P[static_cast<size_t>(p) * n * n + j * n + i]));
  }
  if (asym > options.symmetry_tol)
    throw InternalConsistencyError("solve_p3_p4: P4 asymmetry " + std::to_string(asym));

  // Final Q3 extraction for v < r < s.
  out.q3_offsets_.assign(tri_pairs, 0);
  size_t cells = 0;
  for (int s = 1; s < steps; ++s)
    for (int r = 0; r < s; ++r) {
      out.q3_offsets_[SecondAdjointSources::tri_cell(s, r)] = cells;
      cells += static_cast<size_t>(r);
    }
  out.q3_.assign(cells * mb, 0.0);
  for (int s = 1; s < steps; ++s)
    for (int r = 1; r < s; ++r) {
      const double* block = out.p3_stored(s, r);
      for (int v = 0; v < r; ++v)
        backend.integrand(block, n * n, v,
                          out.q3_.data() +
                              (out.q3_offsets_[SecondAdjointSources::tri_cell(s, r)] + v) * mb);
    }
}

SecondAdjoint solve_second_adjoint(const FrozenCoefficients& frozen,
                                   const FirstAdjoint& first,
                                   const ProjectionBackend& backend,
                                   const SecondAdjointOptions& options) {
  SecondAdjoint out;
  solve_p1_q1(frozen.hxx(), frozen.state_dim(), backend, out);
  solve_p2_q2(frozen, backend, options, out);
  SecondAdjointSources sources = build_sources(frozen, first, out, backend);
  solve_p3_p4(frozen, sources, backend, options, out);
  return out;
}

double SecondAdjoint::constraint_residual(const NoiseEnsemble& noise) const {
  const size_t mb = static_cast<size_t>(paths_) * n_ * n_;
  double worst = 0.0;
  auto recon = [&](const double* value, auto&& integrand_at, int upto) {
    // value = E[value] + sum_{v < upto} integrand(v) dW_{v+1}, per path.
    std::vector<double> acc(mb, 0.0);
    for (int v = 0; v < upto; ++v) {
      const double* q = integrand_at(v);
      const double* dw = noise.increments_at(v);
      for (int p = 0; p < paths_; ++p)
        for (int c = 0; c < n_ * n_; ++c)
          acc[static_cast<size_t>(p) * n_ * n_ + c] += q[static_cast<size_t>(p) * n_ * n_ + c] * dw[p];
    }
    std::vector<double> mean(static_cast<size_t>(n_) * n_, 0.0);
    for (int p = 0; p < paths_; ++p)
      for (int c = 0; c < n_ * n_; ++c)
        mean[static_cast<size_t>(c)] += noise.weight(p) * value[static_cast<size_t>(p) * n_ * n_ + c];
    for (int p = 0; p < paths_; ++p)
      for (int c = 0; c < n_ * n_; ++c)
        worst = std::max(worst, std::abs(mean[static_cast<size_t>(c)] +
                                         acc[static_cast<size_t>(p) * n_ * n_ + c] -
                                         value[static_cast<size_t>(p) * n_ * n_ + c]));
  };
  for (int s = 1; s < steps_; ++s) {
    recon(p2(s), [&](int v) { return q2(s, v); }, s);
    recon(p4(s), [&](int v) { return q4(s, v); }, s);
    for (int r = 1; r < s; ++r)
      recon(p3_stored(s, r), [&](int v) { return q3(s, r, v); }, r);
  }
  return worst;
}

double SecondAdjoint::symmetry_residual() const {
  double worst = 0.0;
  auto sym = [&](const double* block) {
    for (int p = 0; p < paths_; ++p)
      for (int i = 0; i < n_; ++i)
        for (int j = i + 1; j < n_; ++j)
          worst = std::max(worst, std::abs(block[static_cast<size_t>(p) * n_ * n_ + i * n_ + j] -
                                           block[static_cast<size_t>(p) * n_ * n_ + j * n_ + i]));
  };
  for (int k = 0; k <= steps_; ++k) sym(p1(k));
  for (int k = 0; k < steps_; ++k) sym(p4(k));
  // P3 swap symmetry is structural (the lower triangle is served as the
  // transpose of the stored one), so only the storage has to be audited for
  // finiteness; nothing to add here.
  return worst;
}

double quadratic_form_adjoint(const SecondAdjoint& second,
                              const FrozenCoefficients& frozen,
                              const SpikeWindow& window,
                              const NoiseEnsemble& noise) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  if (window.width == 0) return 0.0;

  std::vector<double> dsN(static_cast<size_t>(paths) * n);
  std::vector<double> dsa(static_cast<size_t>(paths) * n), dsb(static_cast<size_t>(paths) * n);
  std::vector<double> p3buf(static_cast<size_t>(paths) * n * n);
  std::vector<double> per_path(static_cast<size_t>(paths), 0.0);

  auto quad = [&](const double* left, const double* M, const double* right, int p) {
    const double* L = left + static_cast<size_t>(p) * n;
    const double* R = right + static_cast<size_t>(p) * n;
    const double* A = M + static_cast<size_t>(p) * n * n;
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        s += L[i] * A[static_cast<size_t>(i) * n + j] * R[j];
    return s;
  };

  for (int r = window.tau_index; r < window.tau_index + window.width; ++r) {
    frozen.dsigma(steps, r, dsN.data());
    for (int p = 0; p < paths; ++p)
      per_path[static_cast<size_t>(p)] += dt * quad(dsN.data(), second.p1(r), dsN.data(), p);
    for (int theta = r + 1; theta < steps; ++theta) {
      frozen.dsigma(theta, r, dsa.data());
      for (int p = 0; p < paths; ++p) {
        per_path[static_cast<size_t>(p)] +=
            dt * dt * quad(dsa.data(), second.p4(theta), dsa.data(), p);
        // ds(T,r)' P2' ds(th,r) and its transpose are the same scalar.
        per_path[static_cast<size_t>(p)] +=
            dt * dt * 2.0 * quad(dsa.data(), second.p2(theta), dsN.data(), p);
      }
      for (int thetap = r + 1; thetap < steps; ++thetap) {
        if (thetap == theta) continue;
        second.p3_any(theta, thetap, p3buf.data());
        frozen.dsigma(thetap, r, dsb.data());
        for (int p = 0; p < paths; ++p)
          per_path[static_cast<size_t>(p)] +=
              dt * dt * dt * quad(dsa.data(), p3buf.data(), dsb.data(), p);
      }
    }
  }
  double acc = 0.0;
  for (int p = 0; p < paths; ++p) acc += noise.weight(p) * per_path[static_cast<size_t>(p)];
  return acc;
}

}  // namespace fsvie
