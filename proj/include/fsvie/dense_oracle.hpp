#pragma once

#include <vector>

#include "fsvie/adjoint_second.hpp"
#include "fsvie/frozen.hpp"
#include "fsvie/projection.hpp"

namespace fsvie {

/// Direct (non-iterative) solves of the discrete backward systems on small
/// tree instances: the affine fixed-point equations are assembled over all
/// (level, atom) unknowns by probing and solved with a dense LU. Used as the
/// independent oracle against the Picard solvers.

/// Y field [(k*paths+p)*n], k = 0..N-1, solving the first-order BSVIE.
std::vector<double> dense_solve_y(const FrozenCoefficients& frozen,
                                  const TreeProjection& backend);

/// P2 field [(k*paths+p)*n*n] solving the second-order Type-II BSVIE, given
/// (P1, Q1) already stored in `partial`.
std::vector<double> dense_solve_p2(const FrozenCoefficients& frozen,
                                   const TreeProjection& backend,
                                   const SecondAdjoint& partial);

struct DenseP3P4 {
  std::vector<double> p3;  // triangle pairs s > r, [(tri(s,r)*paths+p)*n*n]
  std::vector<double> p4;  // [(k*paths+p)*n*n]
};

/// Joint direct solve of the square-domain (P3, P4) system given the sources.
DenseP3P4 dense_solve_p3_p4(const FrozenCoefficients& frozen,
                            const SecondAdjointSources& sources,
                            const TreeProjection& backend);

}  // namespace fsvie
