#include "fsvie/hamiltonian.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fsvie {

namespace {

// Per-path <w_p, v_p> accumulation into out (scalars per path).
void add_dot(const double* w, const double* v, int n, int paths, double scale,
             double* out) {
  for (int p = 0; p < paths; ++p) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      s += w[static_cast<size_t>(p) * n + i] * v[static_cast<size_t>(p) * n + i];
    out[p] += scale * s;
  }
}

std::vector<double> constant_control(const std::vector<double>& u, int paths) {
  std::vector<double> out(static_cast<size_t>(paths) * u.size());
  for (int p = 0; p < paths; ++p)
    std::memcpy(out.data() + static_cast<size_t>(p) * u.size(), u.data(),
                u.size() * sizeof(double));
  return out;
}

}  // namespace

std::vector<double> eval_H(const HamiltonianContext& ctx, int k,
                           const std::vector<double>& u) {
  const auto& frozen = *ctx.frozen;
  const auto& problem = frozen.problem();
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  if (static_cast<int>(u.size()) != problem.control_dim())
    throw std::invalid_argument("eval_H: control probe has wrong dimension");

  const std::vector<double> uu = constant_control(u, paths);
  std::vector<double> out(static_cast<size_t>(paths), 0.0);
  std::vector<double> buf(static_cast<size_t>(paths) * n);
  std::vector<double> cost(static_cast<size_t>(paths) * problem.num_objectives());

  // <eta(k), b(T, t_k, x, u)> + <zeta(k), sigma(T, t_k, x, u)> + g(t_k, x, u).
  problem.b(frozen.grid().horizon(), frozen.grid().node(k), frozen.ref_state().at(k),
            uu.data(), buf.data(), paths);
  add_dot(ctx.first->eta(k), buf.data(), n, paths, 1.0, out.data());
  problem.sigma(frozen.grid().horizon(), frozen.grid().node(k), frozen.ref_state().at(k),
                uu.data(), buf.data(), paths);
  add_dot(ctx.first->zeta(k), buf.data(), n, paths, 1.0, out.data());
  problem.g(frozen.grid().node(k), frozen.ref_state().at(k), uu.data(), cost.data(), paths);
  for (int p = 0; p < paths; ++p)
    out[static_cast<size_t>(p)] +=
        cost[static_cast<size_t>(p) * problem.num_objectives() + frozen.objective()];

  // E_k of the interior tail sum_{j>k} <Y(j), b(j,k)> + <Z(j,k), sigma(j,k)>.
  std::vector<double> tail(static_cast<size_t>(paths), 0.0);
  std::vector<double> z(static_cast<size_t>(paths) * n);
  for (int j = k + 1; j < steps; ++j) {
    problem.b(frozen.grid().node(j), frozen.grid().node(k), frozen.ref_state().at(k),
              uu.data(), buf.data(), paths);
    add_dot(ctx.first->y(j), buf.data(), n, paths, dt, tail.data());
    problem.sigma(frozen.grid().node(j), frozen.grid().node(k), frozen.ref_state().at(k),
                  uu.data(), buf.data(), paths);
    ctx.first->z_lower(j, k, z.data());
    add_dot(z.data(), buf.data(), n, paths, dt, tail.data());
  }
  std::vector<double> proj(tail.size());
  ctx.backend->project(tail.data(), 1, k, proj.data());
  for (int p = 0; p < paths; ++p) out[static_cast<size_t>(p)] += proj[static_cast<size_t>(p)];
  return out;
}

namespace {

// Shared body for the delta-Hamiltonian: fills the per-path integrand and
// optionally projects the tail onto F_k.
std::vector<double> dh_impl(const HamiltonianContext& ctx, int k, bool project_tail) {
  const auto& frozen = *ctx.frozen;
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();

  std::vector<double> out(static_cast<size_t>(paths), 0.0);
  std::vector<double> buf(static_cast<size_t>(paths) * n);
  frozen.dg(k, out.data());
  frozen.db(steps, k, buf.data());
  add_dot(ctx.first->eta(k), buf.data(), n, paths, 1.0, out.data());
  frozen.dsigma(steps, k, buf.data());
  add_dot(ctx.first->zeta(k), buf.data(), n, paths, 1.0, out.data());

  std::vector<double> tail(static_cast<size_t>(paths), 0.0);
  std::vector<double> z(static_cast<size_t>(paths) * n);
  for (int j = k + 1; j < steps; ++j) {
    frozen.db(j, k, buf.data());
    add_dot(ctx.first->y(j), buf.data(), n, paths, dt, tail.data());
    frozen.dsigma(j, k, buf.data());
    bool nonzero = false;
    for (double v : buf)
      if (v != 0.0) { nonzero = true; break; }
    if (nonzero) {
      ctx.first->z_lower(j, k, z.data());
      add_dot(z.data(), buf.data(), n, paths, dt, tail.data());
    }
  }
  if (project_tail) {
    std::vector<double> proj(tail.size());
    ctx.backend->project(tail.data(), 1, k, proj.data());
    tail.swap(proj);
  }
  for (int p = 0; p < paths; ++p) out[static_cast<size_t>(p)] += tail[static_cast<size_t>(p)];
  return out;
}

}  // namespace

std::vector<double> eval_dH(const HamiltonianContext& ctx, int k) {
  return dh_impl(ctx, k, true);
}

double expected_dH(const HamiltonianContext& ctx, int k) {
  const std::vector<double> per_path = dh_impl(ctx, k, false);
  return ctx.backend->ensemble().mean(per_path.data());
}

SdeReduction build_sde_reduction(const FrozenCoefficients& frozen,
                                 const FirstAdjoint& first,
                                 const SecondAdjoint& second,
                                 const ProjectionBackend& backend) {
  if (!frozen.problem().time_homogeneous())
    throw std::invalid_argument("build_sde_reduction: problem has t-dependent kernels");
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const size_t vb = static_cast<size_t>(paths) * n;
  const size_t mb = static_cast<size_t>(paths) * n * n;

  SdeReduction red;
  red.n = n;
  red.paths = paths;
  red.steps = steps;
  red.mcal.assign(vb * steps, 0.0);
  red.ncal.assign(vb * steps, 0.0);
  red.mbb.assign(mb * steps, 0.0);
  red.nbb.assign(mb * steps, 0.0);

  std::vector<double> acc(vb), proj(vb), z(vb);
  for (int k = 0; k < steps; ++k) {
    // Mcal(k) = eta(k) + E_k sum_{j>k} Y(j) dt.
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int j = k + 1; j < steps; ++j)
      for (size_t e = 0; e < vb; ++e) acc[e] += dt * first.y(j)[e];
    backend.project(acc.data(), n, k, proj.data());
    double* mc = red.mcal.data() + red.vblock(k);
    std::memcpy(mc, first.eta(k), sizeof(double) * vb);
    for (size_t e = 0; e < vb; ++e) mc[e] += proj[e];
    // Ncal(k) = zeta(k) + sum_{j>k} Z(j,k) dt.
    double* nc = red.ncal.data() + red.vblock(k);
    std::memcpy(nc, first.zeta(k), sizeof(double) * vb);
    for (int j = k + 1; j < steps; ++j) {
      first.z_lower(j, k, z.data());
      for (size_t e = 0; e < vb; ++e) nc[e] += dt * z[e];
    }
  }

  // Mbb(k) = E_k[ h_xx + sum_{s>k}(P2 + P2')dt + sum_{s!=t>k} P3 dt^2
  //              + sum_{s>k} P4 dt ].
  std::vector<double> g_acc(mb), g_proj(mb), p3buf(mb);
  for (int k = 0; k < steps; ++k) {
    std::memcpy(g_acc.data(), frozen.hxx(), sizeof(double) * mb);
    for (int s = k + 1; s < steps; ++s) {
      const double* p2 = second.p2(s);
      const double* p4 = second.p4(s);
      for (int p = 0; p < paths; ++p)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const size_t ij = static_cast<size_t>(p) * n * n + static_cast<size_t>(i) * n + j;
            const size_t ji = static_cast<size_t>(p) * n * n + static_cast<size_t>(j) * n + i;
            g_acc[ij] += dt * (p2[ij] + p2[ji]) + dt * p4[ij];
          }
      for (int t = k + 1; t < steps; ++t) {
        if (t == s) continue;
        second.p3_any(s, t, p3buf.data());
        for (size_t e = 0; e < mb; ++e) g_acc[e] += dt * dt * p3buf[e];
      }
    }
    backend.project(g_acc.data(), n * n, k, red.mbb.data() + red.mblock(k));

    // Nbb(k) = Q1(k) + sum_{s>k}(Q2(s,k) + Q2(s,k)')dt + sum_{s>k} Q4(s,k) dt
    //          + sum_{s!=t>k} Q3 dt^2 (swap-transposed for t > s).
    double* nb = red.nbb.data() + red.mblock(k);
    std::memcpy(nb, second.q1(k), sizeof(double) * mb);
    for (int s = k + 1; s < steps; ++s) {
      const double* q2 = second.q2(s, k);
      const double* q4 = second.q4(s, k);
      for (int p = 0; p < paths; ++p)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const size_t ij = static_cast<size_t>(p) * n * n + static_cast<size_t>(i) * n + j;
            const size_t ji = static_cast<size_t>(p) * n * n + static_cast<size_t>(j) * n + i;
            nb[ij] += dt * (q2[ij] + q2[ji]) + dt * q4[ij];
          }
      for (int t = k + 1; t < s; ++t) {
        // Pairs (s,t) and (t,s): Q3(s,t,k) + its swap transpose.
        const double* q3 = second.q3(s, t, k);
        for (int p = 0; p < paths; ++p)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
              const size_t ij = static_cast<size_t>(p) * n * n + static_cast<size_t>(i) * n + j;
              const size_t ji = static_cast<size_t>(p) * n * n + static_cast<size_t>(j) * n + i;
              nb[ij] += dt * dt * (q3[ij] + q3[ji]);
            }
      }
    }
  }
  return red;
}

double sde_reduction_bsde_residual(const FrozenCoefficients& frozen,
                                   const FirstAdjoint& first,
                                   const SdeReduction& reduction,
                                   const ProjectionBackend& backend) {
  const int n = reduction.n;
  const int paths = reduction.paths;
  const int steps = reduction.steps;
  const double dt = frozen.grid().dt();
  const auto& noise = backend.ensemble();
  const size_t vb = static_cast<size_t>(paths) * n;
  double worst = 0.0;
  for (int k = 0; k + 1 < steps; ++k) {
    const double* mk = reduction.mcal_at(k);
    const double* mk1 = reduction.mcal_at(k + 1);
    const double* nk = reduction.ncal_at(k);
    const double* yk1 = first.y(k + 1);
    const double* dw = noise.increments_at(k);
    for (int p = 0; p < paths; ++p)
      for (int i = 0; i < n; ++i) {
        const size_t e = static_cast<size_t>(p) * n + i;
        const double res = mk[e] - (mk1[e] + yk1[e] * dt - nk[e] * dw[p]);
        worst = std::max(worst, std::abs(res));
      }
  }
  // Terminal: Mcal(N-1) = eta(N-1) = E_{N-1}[h_x'].
  std::vector<double> proj(vb);
  backend.project(frozen.hx(), n, steps - 1, proj.data());
  const double* mN = reduction.mcal_at(steps - 1);
  for (size_t e = 0; e < vb; ++e) worst = std::max(worst, std::abs(mN[e] - proj[e]));
  return worst;
}

std::vector<double> eval_game_H(const HamiltonianContext& ctx, int player, int k,
                                const std::vector<double>& deviation) {
  const auto& problem = ctx.frozen->problem();
  const auto& dims = problem.player_dims();
  if (player < 0 || player >= static_cast<int>(dims.size()))
    throw std::invalid_argument("eval_game_H: player index out of range");
  if (static_cast<int>(deviation.size()) != dims[static_cast<size_t>(player)])
    throw std::invalid_argument("eval_game_H: deviation has wrong dimension");
  int offset = 0;
  for (int l = 0; l < player; ++l) offset += dims[static_cast<size_t>(l)];
  // Reference tuple with the player's slot replaced; reference controls in the
  // scan candidates are deterministic, so path 0 carries the tuple.
  std::vector<double> u(static_cast<size_t>(problem.control_dim()));
  for (int i = 0; i < problem.control_dim(); ++i)
    u[static_cast<size_t>(i)] = ctx.frozen->ref_control().value(k, 0, i);
  for (int i = 0; i < dims[static_cast<size_t>(player)]; ++i)
    u[static_cast<size_t>(offset + i)] = deviation[static_cast<size_t>(i)];
  return eval_H(ctx, k, u);
}

}  // namespace fsvie
