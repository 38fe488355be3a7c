#pragma once

#include <functional>
#include <vector>

#include "fsvie/adjoint_first.hpp"
#include "fsvie/forward.hpp"
#include "fsvie/frozen.hpp"
#include "fsvie/projection.hpp"

namespace fsvie {

/// Discrete analogue of E int int e^{beta(s+r)} |F(s,r)|^2 dr ds over the full
/// square of left-point cells; `field(s, r, out)` fills paths()*n_comp values.
double beta_norm_square(const NoiseEnsemble& noise,
                        const std::function<void(int, int, double*)>& field,
                        int n_comp, double beta);

/// x-Hessian of the Hamiltonian along the reference pair:
///   H_xx(k) = g_xx(k) + sum_i eta_i bxx^i(N,k) + sum_i zeta_i sxx^i(N,k)
///           + E_k sum_{j=k+1}^{N-1} sum_i (Y_i(j) bxx^i(j,k) + Z_i(j,k) sxx^i(j,k)) dt.
/// Returns a time field [(k*paths+p)*n*n], k = 0..N-1.
std::vector<double> hamiltonian_hessian(const FrozenCoefficients& frozen,
                                        const FirstAdjoint& first,
                                        const ProjectionBackend& backend);

/// Source fields of the reduced (P3, P4) system.
struct SecondAdjointSources {
  int n = 0, paths = 0, steps = 0;
  std::vector<double> hxx;  // H_xx(k), time field of n*n blocks
  std::vector<double> h2;   // HH_2(r), time field of n*n blocks
  std::vector<double> h1;   // HH_1(s,r) for r < s, triangle of n*n blocks

  const double* hxx_at(int k) const { return hxx.data() + tblock(k); }
  const double* h2_at(int k) const { return h2.data() + tblock(k); }
  const double* h1_at(int s, int r) const {
    return h1.data() + tri_cell(s, r) * static_cast<size_t>(paths) * n * n;
  }
  size_t tblock(int k) const { return static_cast<size_t>(k) * paths * n * n; }
  static size_t tri_cell(int s, int r) {
    return static_cast<size_t>(s) * (s - 1) / 2 + r;  // pairs (s, r), r < s
  }
};

struct SecondAdjointOptions {
  double tol = 1e-10;
  int max_outer = 200;
  int max_inner = 200;
  double beta = -1.0;  // < 0: auto = 2 * (8 |sx|^2 + 4 |bx|^2 T)
  SweepOrder sweep = SweepOrder::kBackward;
  double symmetry_tol = 1e-8;
};

/// Second-order adjoint system (P1..P4, Q1..Q4). P3 is stored on the strict
/// upper pair set (s > r) and mirrored through P3(s,r) = P3(r,s)^T; Q3 is kept
/// for levels v < r < s. All Q's are the tree/regression representation
/// integrands of their P, so the M-constraints hold by construction.
class SecondAdjoint {
 public:
  int state_dim() const { return n_; }
  int paths() const { return paths_; }
  int steps() const { return steps_; }

  const double* p1(int k) const { return p1_.data() + mblock(k); }
  const double* q1(int k) const { return q1_.data() + mblock(k); }
  const double* p2(int k) const { return p2_.data() + mblock(k); }
  /// Q2(s, theta): representation integrand (theta >= s) or M-constraint
  /// integrand (theta < s) of P2.
  const double* q2(int s, int theta) const {
    return q2_.data() + (static_cast<size_t>(s) * steps_ + theta) * paths_ * n_ * n_;
  }
  /// Stored block for s > r.
  const double* p3_stored(int s, int r) const {
    return p3_.data() + SecondAdjointSources::tri_cell(s, r) * static_cast<size_t>(paths_) * n_ * n_;
  }
  /// P3 at any off-diagonal pair, applying the swap transpose when s < r.
  void p3_any(int s, int r, double* out) const;
  const double* p4(int k) const { return p4_.data() + mblock(k); }
  /// Q4(s, r), r < s.
  const double* q4(int s, int r) const {
    return q4_.data() + SecondAdjointSources::tri_cell(s, r) * static_cast<size_t>(paths_) * n_ * n_;
  }
  /// Q3(s, r, v), v < r < s.
  const double* q3(int s, int r, int v) const {
    return q3_.data() + (q3_offsets_[SecondAdjointSources::tri_cell(s, r)] + v) *
                            static_cast<size_t>(paths_) * n_ * n_;
  }

  /// Max abs violation of the (4.29)-type reconstructions from level 0.
  double constraint_residual(const NoiseEnsemble& noise) const;
  /// Max abs asymmetry of P1, P4 and of the P3 swap relation.
  double symmetry_residual() const;

  SolveTelemetry outer_telemetry;
  SolveTelemetry p2_telemetry;

 private:
  friend SecondAdjoint solve_second_adjoint(const FrozenCoefficients&,
                                            const FirstAdjoint&,
                                            const ProjectionBackend&,
                                            const SecondAdjointOptions&);
  friend void solve_p1_q1(const double*, int, const ProjectionBackend&, SecondAdjoint&);
  friend void solve_p2_q2(const FrozenCoefficients&, const ProjectionBackend&,
                          const SecondAdjointOptions&, SecondAdjoint&);
  friend SecondAdjointSources build_sources(const FrozenCoefficients&,
                                            const FirstAdjoint&, const SecondAdjoint&,
                                            const ProjectionBackend&);
  friend void solve_p3_p4(const FrozenCoefficients&, const SecondAdjointSources&,
                          const ProjectionBackend&, const SecondAdjointOptions&,
                          SecondAdjoint&);

  size_t mblock(int k) const { return static_cast<size_t>(k) * paths_ * n_ * n_; }

  int n_ = 0, paths_ = 0, steps_ = 0;
  std::vector<double> p1_, q1_;
  std::vector<double> p2_, q2_;
  std::vector<double> p3_, q3_, p4_, q4_;
  std::vector<size_t> q3_offsets_;  // per (s,r) pair: starting v-cell index
};

/// P1 = E_.[h_xx] with Q1 its representation integrand (entrywise projection).
void solve_p1_q1(const double* hxx_values, int n, const ProjectionBackend& backend,
                 SecondAdjoint& out);

/// Type-II BSVIE for (P2, Q2) with free term bx(N,s)' P1(s) + sx(N,s)' Q1(s).
void solve_p2_q2(const FrozenCoefficients& frozen, const ProjectionBackend& backend,
                 const SecondAdjointOptions& options, SecondAdjoint& out);

/// Assemble HH_1, HH_2 and H_xx from the first adjoint and (P1, Q1, P2, Q2).
SecondAdjointSources build_sources(const FrozenCoefficients& frozen,
                                   const FirstAdjoint& first,
                                   const SecondAdjoint& partial,
                                   const ProjectionBackend& backend);

/// Square-domain (P3, Q3) + (P4, Q4) solve: outer Picard on p4, inner sweep
/// of the P3 system at frozen (p4, q4), both per the beta-norm contraction.
void solve_p3_p4(const FrozenCoefficients& frozen, const SecondAdjointSources& sources,
                 const ProjectionBackend& backend, const SecondAdjointOptions& options,
                 SecondAdjoint& out);

/// Full pipeline P1 -> P2 -> sources -> (P3, P4).
SecondAdjoint solve_second_adjoint(const FrozenCoefficients& frozen,
                                   const FirstAdjoint& first,
                                   const ProjectionBackend& backend,
                                   const SecondAdjointOptions& options = {});

/// Discrete evaluation of the quadratic-form representation: the P1 diagonal
/// term, P2 cross terms, symmetrized P3 double integral and P4 single
/// integral against the frozen spike deltas on the window.
double quadratic_form_adjoint(const SecondAdjoint& second,
                              const FrozenCoefficients& frozen,
                              const SpikeWindow& window,
                              const NoiseEnsemble& noise);

}  // namespace fsvie
