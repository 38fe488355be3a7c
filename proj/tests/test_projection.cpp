#include <doctest.h>

#include <cmath>
#include <memory>

#include "fsvie/errors.hpp"
#include "fsvie/forward.hpp"
#include "fsvie/projection.hpp"

using namespace fsvie;

namespace {

struct TreeFixture {
  TimeGrid grid;
  NoiseEnsemble noise;
  Filtration filtration;
  TreeProjection backend;
  explicit TreeFixture(int steps)
      : grid(make_grid(1.0, steps)),
        noise(sample_noise(grid, 1 << steps, NoiseMode::kTree, 0)),
        filtration(noise),
        backend(noise, filtration) {}
};

}  // namespace

TEST_CASE("constants are their own projection") {
  TreeFixture fx(4);
  const int m = fx.noise.paths();
  std::vector<double> theta(static_cast<size_t>(m), 3.25);
  MartingaleRep rep = project_cascade(fx.backend, theta.data(), 1, 4, 0);
  for (int r = 0; r <= 4; ++r)
    for (int p = 0; p < m; ++p) CHECK(rep.pi_at(r)[p] == doctest::Approx(3.25));
  for (int r = 0; r < 4; ++r)
    for (int p = 0; p < m; ++p) CHECK(rep.lambda_at(r)[p] == doctest::Approx(0.0));
  CHECK(rep.recon_residual <= 1e-15);
}

TEST_CASE("Brownian terminal value projects to the running path with unit integrand") {
  TreeFixture fx(6);
  const int m = fx.noise.paths();
  std::vector<double> w_T(static_cast<size_t>(m), 0.0);
  for (int p = 0; p < m; ++p)
    for (int k = 0; k < 6; ++k) w_T[static_cast<size_t>(p)] += fx.noise.increment(k, p);
  MartingaleRep rep = project_cascade(fx.backend, w_T.data(), 1, 6, 0);
  for (int r = 0; r <= 6; ++r)
    for (int p = 0; p < m; ++p) {
      double w_r = 0.0;
      for (int k = 0; k < r; ++k) w_r += fx.noise.increment(k, p);
      CHECK(rep.pi_at(r)[p] == doctest::Approx(w_r).epsilon(1e-13));
    }
  for (int r = 0; r < 6; ++r)
    for (int p = 0; p < m; ++p) CHECK(rep.lambda_at(r)[p] == doctest::Approx(1.0));
}

TEST_CASE("reconstruction of a state functional is exact on the tree") {
  TreeFixture fx(8);
  ProblemPtr problem = registry_get("linear_scalar");
  ControlProcess u = ControlProcess::constant(1, fx.noise.paths(), 8, {0.2});
  StateEnsemble x = solve_fsvie(*problem, fx.grid, fx.noise, u);
  const int m = fx.noise.paths();
  std::vector<double> theta(static_cast<size_t>(m));
  for (int p = 0; p < m; ++p) theta[static_cast<size_t>(p)] = x.value(8, p) * x.value(8, p);
  MartingaleRep rep = project_cascade(fx.backend, theta.data(), 1, 8, 0);
  CHECK(rep.recon_residual <= 1e-12);

  // Tower property through the backend.
  CHECK(tower_residual(fx.backend, theta.data(), 1, 5, 2) <= 1e-12);
}

TEST_CASE("projection linearity (tree and regression share the design)") {
  TreeFixture fx(6);
  const int m = fx.noise.paths();
  std::uint64_t rng = 21;
  std::vector<double> a(static_cast<size_t>(m)), b(static_cast<size_t>(m)),
      combo(static_cast<size_t>(m));
  for (int p = 0; p < m; ++p) {
    a[static_cast<size_t>(p)] = uniform01(rng);
    b[static_cast<size_t>(p)] = uniform01(rng);
    combo[static_cast<size_t>(p)] = 2.0 * a[static_cast<size_t>(p)] - 3.0 * b[static_cast<size_t>(p)];
  }
  std::vector<double> pa(m), pb(m), pc(m);
  fx.backend.project(a.data(), 1, 3, pa.data());
  fx.backend.project(b.data(), 1, 3, pb.data());
  fx.backend.project(combo.data(), 1, 3, pc.data());
  for (int p = 0; p < m; ++p)
    CHECK(pc[p] == doctest::Approx(2.0 * pa[p] - 3.0 * pb[p]).epsilon(1e-13));

  ProblemPtr problem = registry_get("linear_scalar");
  ControlProcess u = ControlProcess::constant(1, m, 6, {0.2});
  StateEnsemble x = solve_fsvie(*problem, fx.grid, fx.noise, u);
  RegressionProjection reg(fx.noise, x, {});
  reg.project(a.data(), 1, 3, pa.data());
  reg.project(b.data(), 1, 3, pb.data());
  reg.project(combo.data(), 1, 3, pc.data());
  for (int p = 0; p < m; ++p)
    CHECK(pc[p] == doctest::Approx(2.0 * pa[p] - 3.0 * pb[p]).epsilon(1e-10));
}

TEST_CASE("matrix-valued projection preserves symmetry entrywise") {
  TreeFixture fx(5);
  const int m = fx.noise.paths();
  std::uint64_t rng = 4;
  std::vector<double> theta(static_cast<size_t>(m) * 4);
  for (int p = 0; p < m; ++p) {
    const double a = uniform01(rng), b = uniform01(rng), c = uniform01(rng);
    theta[static_cast<size_t>(p) * 4 + 0] = a;
    theta[static_cast<size_t>(p) * 4 + 1] = b;
    theta[static_cast<size_t>(p) * 4 + 2] = b;
    theta[static_cast<size_t>(p) * 4 + 3] = c;
  }
  std::vector<double> out(theta.size());
  fx.backend.project(theta.data(), 4, 2, out.data());
  for (int p = 0; p < m; ++p)
    CHECK(out[static_cast<size_t>(p) * 4 + 1] == doctest::Approx(out[static_cast<size_t>(p) * 4 + 2]));
}

TEST_CASE("regression backend approximates tree projections of state functionals") {
  // X(T)^2 for linear_scalar: conditional expectations are smooth functions
  // of the current state, so a quadratic basis fits well; the tree value at
  // matching seeds converges within a few standard errors.
  const int steps = 8;
  TimeGrid grid = make_grid(1.0, steps);
  // Tree reference.
  TreeFixture fx(steps);
  ProblemPtr problem = registry_get("linear_scalar");
  ControlProcess u_tree = ControlProcess::constant(1, fx.noise.paths(), steps, {0.2});
  StateEnsemble x_tree = solve_fsvie(*problem, grid, fx.noise, u_tree);

  const int m = 20000;
  NoiseEnsemble mc = sample_noise(grid, m, NoiseMode::kGaussian, 91);
  ControlProcess u_mc = ControlProcess::constant(1, m, steps, {0.2});
  StateEnsemble x_mc = solve_fsvie(*problem, grid, mc, u_mc);
  RegressionProjection reg(mc, x_mc, {});

  std::vector<double> theta(static_cast<size_t>(m));
  for (int p = 0; p < m; ++p) theta[static_cast<size_t>(p)] = x_mc.value(steps, p) * x_mc.value(steps, p);
  std::vector<double> fit(static_cast<size_t>(m));
  reg.project(theta.data(), 1, 0, fit.data());  // unconditional fit at level 0
  const double mc_mean = mc.mean(fit.data());

  std::vector<double> theta_tree(static_cast<size_t>(fx.noise.paths()));
  for (int p = 0; p < fx.noise.paths(); ++p)
    theta_tree[static_cast<size_t>(p)] = x_tree.value(steps, p) * x_tree.value(steps, p);
  const double tree_mean = fx.noise.mean(theta_tree.data());

  // Standard error of the MC estimate of E[X(T)^2].
  double var = 0.0;
  for (int p = 0; p < m; ++p) {
    const double d = theta[static_cast<size_t>(p)] - mc_mean;
    var += d * d;
  }
  const double se = std::sqrt(var / (m - 1)) / std::sqrt(static_cast<double>(m));
  INFO("tree " << tree_mean << " mc " << mc_mean << " se " << se);
  // Tree-vs-MC discrepancy: sampling error (3 se) plus the weak-order-1 bias
  // of the Rademacher tree at this resolution.
  CHECK(std::abs(mc_mean - tree_mean) <= 3.0 * se + 0.02);
}

TEST_CASE("regression integrand recovers a known martingale integrand") {
  // Theta = W(T): Lambda(k) should fit ~1 at every level.
  const int steps = 6;
  TimeGrid grid = make_grid(1.0, steps);
  const int m = 20000;
  NoiseEnsemble mc = sample_noise(grid, m, NoiseMode::kGaussian, 5);
  ProblemPtr problem = registry_get("linear_scalar");
  ControlProcess u = ControlProcess::constant(1, m, steps, {0.2});
  StateEnsemble x = solve_fsvie(*problem, grid, mc, u);
  RegressionProjection reg(mc, x, {});
  std::vector<double> w_next(static_cast<size_t>(m), 0.0);
  for (int p = 0; p < m; ++p)
    for (int k = 0; k <= 2; ++k) w_next[static_cast<size_t>(p)] += mc.increment(k, p);
  std::vector<double> lam(static_cast<size_t>(m));
  reg.integrand(w_next.data(), 1, 2, lam.data());
  double mean = mc.mean(lam.data());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("non-finite regression inputs raise ill-conditioned") {
  const int steps = 3;
  TimeGrid grid = make_grid(1.0, steps);
  const int m = 64;
  NoiseEnsemble mc = sample_noise(grid, m, NoiseMode::kGaussian, 5);
  StateEnsemble bad(1, m, steps);
  for (int p = 0; p < m; ++p) bad.value(1, p) = std::nan("");
  RegressionProjection reg(mc, bad, {});
  std::vector<double> v(static_cast<size_t>(m), 1.0), out(static_cast<size_t>(m));
  CHECK_THROWS_AS(reg.project(v.data(), 1, 1, out.data()), IllConditioned);
}
