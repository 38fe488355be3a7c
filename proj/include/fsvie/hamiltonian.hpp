#pragma once

#include <vector>

#include "fsvie/adjoint_first.hpp"
#include "fsvie/adjoint_second.hpp"
#include "fsvie/frozen.hpp"
#include "fsvie/projection.hpp"

namespace fsvie {

/// Everything needed to evaluate the Hamiltonian along one reference pair.
/// For games the frozen coefficients and adjoints belong to one player.
struct HamiltonianContext {
  const FrozenCoefficients* frozen = nullptr;
  const FirstAdjoint* first = nullptr;
  const ProjectionBackend* backend = nullptr;
};

/// Per-path H(t_k, Xbar(t_k), u, eta, zeta, Y, Z): running cost plus the
/// adjoint-weighted generator values, with the tail sum projected onto F_k.
std::vector<double> eval_H(const HamiltonianContext& ctx, int k,
                           const std::vector<double>& u);

/// Per-path Delta H(t_k) = H(t_k, probe) - H(t_k, reference), evaluated from
/// the frozen spike deltas (probe = ctx.frozen->probe()), projected onto F_k.
std::vector<double> eval_dH(const HamiltonianContext& ctx, int k);

/// E[Delta H(t_k)] without the intermediate projection (same expectation).
double expected_dH(const HamiltonianContext& ctx, int k);

/// First- and second-order aggregates of the SDE reduction (kernels constant
/// in the outer time). Layouts: mcal/ncal are n-vectors per path per level,
/// mbb/nbb are n*n blocks per path per level, k = 0..N-1.
struct SdeReduction {
  int n = 0, paths = 0, steps = 0;
  std::vector<double> mcal, ncal;
  std::vector<double> mbb, nbb;

  const double* mcal_at(int k) const { return mcal.data() + vblock(k); }
  const double* ncal_at(int k) const { return ncal.data() + vblock(k); }
  const double* mbb_at(int k) const { return mbb.data() + mblock(k); }
  const double* nbb_at(int k) const { return nbb.data() + mblock(k); }
  size_t vblock(int k) const { return static_cast<size_t>(k) * paths * n; }
  size_t mblock(int k) const { return static_cast<size_t>(k) * paths * n * n; }
};

/// Mcal(k) = eta(k) + E_k sum_{j>k} Y(j) dt, Ncal(k) = zeta(k) + sum Z(j,k) dt;
/// Mbb(k) = E_k[G(k)] with G the P-aggregate, Nbb(k) its integrand aggregate.
/// Throws std::invalid_argument on problems with t-dependent kernels.
SdeReduction build_sde_reduction(const FrozenCoefficients& frozen,
                                 const FirstAdjoint& first,
                                 const SecondAdjoint& second,
                                 const ProjectionBackend& backend);

/// Max abs pathwise residual of the exact discrete first-order BSDE
///   Mcal(k) = Mcal(k+1) + Y(k+1) dt - Ncal(k) dW_{k+1},   k = 0..N-2,
/// plus the terminal mismatch Mcal(N-1) - E_{N-1}[h_x'].
double sde_reduction_bsde_residual(const FrozenCoefficients& frozen,
                                   const FirstAdjoint& first,
                                   const SdeReduction& reduction,
                                   const ProjectionBackend& backend);

/// Per-path H^l with player `player`'s control slot replaced by `deviation`
/// while the other players keep the reference tuple. ctx must be built from
/// player `player`'s adjoints.
std::vector<double> eval_game_H(const HamiltonianContext& ctx, int player, int k,
                                const std::vector<double>& deviation);

}  // namespace fsvie
