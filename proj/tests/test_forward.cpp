#include <doctest.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <set>
#include <stdexcept>

#include "fsvie/errors.hpp"
#include "fsvie/forward.hpp"
#include "fsvie/stats.hpp"

using namespace fsvie;

namespace {

// Constant-coefficient dynamics with phi(t) = 1 + slope t and h(x) = hx x.
class DriftFreeProblem : public Problem {
 public:
  DriftFreeProblem(double b_const, double s_const, double phi_slope)
      : Problem("drift_free", 1, 1, 1, 1.0, true),
        b_(b_const),
        s_(s_const),
        slope_(phi_slope) {}
  void phi(double t, double* out) const override { out[0] = 1.0 + slope_ * t; }
  void b(double, double, const double*, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = b_;
  }
  void sigma(double, double, const double*, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = s_;
  }
  void b_x(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma_x(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void b_xx(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma_xx(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void g(double, const double*, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = g_;
  }
  void g_x(int, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void g_xx(int, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void h(const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = hx_ * x[p];
  }
  void h_x(int, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = hx_;
  }
  void h_xx(int, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  double g_ = 0.0;
  double hx_ = 1.0;

 private:
  double b_, s_, slope_;
};

std::shared_ptr<ControlProcess> const_control(int paths, int steps, double v) {
  return std::make_shared<ControlProcess>(ControlProcess::constant(1, paths, steps, {v}));
}

}  // namespace

TEST_CASE("degenerate dynamics reproduce the free term") {
  TimeGrid grid = make_grid(1.0, 4);
  NoiseEnsemble noise = sample_noise(grid, 16, NoiseMode::kTree, 0);
  DriftFreeProblem p(0.0, 0.0, 0.5);
  ControlProcess u = ControlProcess::constant(1, 16, 4, {0.0});
  StateEnsemble x = solve_fsvie(p, grid, noise, u);
  for (int k = 0; k <= 4; ++k)
    for (int path = 0; path < 16; ++path)
      CHECK(x.value(k, path) == doctest::Approx(1.0 + 0.5 * grid.node(k)));
}

TEST_CASE("pure random walk on the tree") {
  TimeGrid grid = make_grid(1.0, 2);
  NoiseEnsemble noise = sample_noise(grid, 4, NoiseMode::kTree, 0);
  DriftFreeProblem p(0.0, 1.0, 0.0);
  ControlProcess u = ControlProcess::constant(1, 4, 2, {0.0});
  StateEnsemble x = solve_fsvie(p, grid, noise, u);
  const double s = std::sqrt(0.5);
  std::multiset<double> values;
  for (int path = 0; path < 4; ++path) values.insert(x.value(2, path));
  std::multiset<double> expect = {1 + 2 * s, 1.0, 1.0, 1 - 2 * s};
  auto it = expect.begin();
  for (double v : values) CHECK(v == doctest::Approx(*it++));
}

TEST_CASE("strong self-convergence against a fine-grid reference") {
  // Common Brownian path: sample at the fine level and aggregate increments.
  ProblemPtr p = registry_get("linear_scalar");
  const int fine_steps = 1024;
  const int paths = 256;
  TimeGrid fine = make_grid(1.0, fine_steps);
  NoiseEnsemble fine_noise = sample_noise(fine, paths, NoiseMode::kGaussian, 11);
  ControlProcess fine_u = ControlProcess::constant(1, paths, fine_steps, {0.3});
  StateEnsemble ref = solve_fsvie(*p, fine, fine_noise, fine_u);

  std::vector<double> hs, errs;
  for (int coarse_steps : {16, 32, 64, 128}) {
    TimeGrid coarse = make_grid(1.0, coarse_steps);
    // Aggregated increments live in a gaussian-mode ensemble shell.
    NoiseEnsemble shell = sample_noise(coarse, paths, NoiseMode::kGaussian, 11);
    std::vector<double> agg(static_cast<size_t>(coarse_steps) * paths, 0.0);
    const int ratio = fine_steps / coarse_steps;
    for (int k = 0; k < coarse_steps; ++k)
      for (int f = 0; f < ratio; ++f)
        for (int q = 0; q < paths; ++q)
          agg[static_cast<size_t>(k) * paths + q] += fine_noise.increment(k * ratio + f, q);
    // Rebuild a noise ensemble with the aggregated increments via memcpy on
    // the shell (same layout).
    std::memcpy(const_cast<double*>(shell.increments_at(0)), agg.data(),
                agg.size() * sizeof(double));
    ControlProcess u = ControlProcess::constant(1, paths, coarse_steps, {0.3});
    StateEnsemble x = solve_fsvie(*p, coarse, shell, u);
    double err = 0.0;
    for (int q = 0; q < paths; ++q) {
      const double d = x.value(coarse_steps, q) - ref.value(fine_steps, q);
      err += d * d;
    }
    errs.push_back(std::sqrt(err / paths));
    hs.push_back(1.0 / coarse_steps);
  }
  SlopeFit fit = fit_loglog(hs, errs);
  INFO("strong rate " << fit.slope);
  CHECK(fit.slope >= 0.4);
}

TEST_CASE("cost_eval closed forms") {
  TimeGrid grid = make_grid(1.0, 4);
  NoiseEnsemble noise = sample_noise(grid, 16, NoiseMode::kTree, 0);
  ControlProcess u = ControlProcess::constant(1, 16, 4, {0.0});

  DriftFreeProblem unit(0.0, 0.0, 0.0);  // phi = 1, h(x) = x, g = 0
  StateEnsemble x = solve_fsvie(unit, grid, noise, u);
  CostValue j = cost_eval(unit, grid, noise, x, u);
  CHECK(j.value == doctest::Approx(1.0));
  CHECK(j.std_error == 0.0);

  DriftFreeProblem running(0.0, 0.0, 0.0);
  running.g_ = 1.0;
  running.hx_ = 0.0;
  StateEnsemble x2 = solve_fsvie(running, grid, noise, u);
  CHECK(cost_eval(running, grid, noise, x2, u).value == doctest::Approx(1.0));

  ProblemPtr proj = registry_get("projection_cost", {{"c", 0.3}});
  ControlProcess uc = ControlProcess::constant(1, 16, 4, {0.3});
  StateEnsemble xp = solve_fsvie(*proj, grid, noise, uc);
  CHECK(cost_eval(*proj, grid, noise, xp, uc).value == doctest::Approx(0.0));
}

TEST_CASE("x1: zero forcing and closed form without kernels") {
  TimeGrid grid = make_grid(1.0, 6);
  NoiseEnsemble noise = sample_noise(grid, 64, NoiseMode::kTree, 0);
  const SpikeWindow window{2, 2};

  // Control-free diffusion: delta sigma = 0 so X1 vanishes identically.
  {
    ProblemPtr p = registry_get("control_free_diffusion");
    auto u = const_control(64, 6, 0.1);
    auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, *u));
    FrozenCoefficients fz(p, grid, xbar, u, {0.9});
    StateEnsemble x1 = solve_x1(fz, noise, window);
    for (int k = 0; k <= 6; ++k)
      for (int q = 0; q < 64; ++q) CHECK(x1.value(k, q) == 0.0);
  }

  // Kernel-free: b_x = sigma_x = 0 gives X1(t_j) = sum_window dsigma dW.
  {
    ProblemPtr p = registry_get("linear_scalar", {{"a", 0.0}, {"gamma", 0.0}});
    auto u = const_control(64, 6, 0.1);
    auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, *u));
    FrozenCoefficients fz(p, grid, xbar, u, {0.9});
    StateEnsemble x1 = solve_x1(fz, noise, window);
    std::vector<double> ds(64);
    for (int j = 1; j <= 6; ++j) {
      std::vector<double> expect(64, 0.0);
      for (int k = window.tau_index; k < std::min(j, window.tau_index + window.width); ++k) {
        fz.dsigma(j, k, ds.data());
        for (int q = 0; q < 64; ++q) expect[q] += ds[q] * noise.increment(k, q);
      }
      for (int q = 0; q < 64; ++q) CHECK(x1.value(j, q) == doctest::Approx(expect[q]));
    }
  }

  // Empty window is invalid.
  {
    ProblemPtr p = registry_get("linear_scalar");
    auto u = const_control(64, 6, 0.1);
    auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, *u));
    FrozenCoefficients fz(p, grid, xbar, u, {0.9});
    CHECK_THROWS_AS(solve_x1(fz, noise, SpikeWindow{2, 0}), std::invalid_argument);
  }
}

TEST_CASE("x1 second moment: recursion vs exhaustive window expansion (tree oracle)") {
  // linear_scalar on the tree: E|X1(t_j)|^2 computed (a) from the recursion
  // and (b) by brute-force expansion of the window-driven linear recursion,
  // which here propagates deterministic coefficients.
  TimeGrid grid = make_grid(1.0, 8);
  NoiseEnsemble noise = sample_noise(grid, 256, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("linear_scalar");
  auto u = const_control(256, 8, 0.2);
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, *u));
  FrozenCoefficients fz(p, grid, xbar, u, {1.0});
  const SpikeWindow window{2, 2};
  StateEnsemble x1 = solve_x1(fz, noise, window);

  // With constant reference control the frozen rows are deterministic:
  // brute-force the propagation matrix B(j,k) of a unit shock at step k.
  const int steps = 8;
  const double dt = grid.dt();
  std::vector<double> bx(256), sx(256), ds(256);
  auto bx_det = [&](int j, int k) {
    fz.bx(j, k, bx.data());
    return bx[0];
  };
  auto ds_det = [&](int j, int k) {
    fz.dsigma(j, k, ds.data());
    return ds[0];
  };
  // impulse[j][k]: coefficient of dW_{k+1} in X1(t_j).
  std::vector<std::vector<double>> impulse(steps + 1, std::vector<double>(steps, 0.0));
  for (int j = 1; j <= steps; ++j)
    for (int k = 0; k < steps; ++k) {
      double v = window.contains(k) && k < j ? ds_det(j, k) : 0.0;
      for (int l = k + 1; l < j; ++l) v += dt * bx_det(j, l) * impulse[l][k];
      impulse[j][k] = v;
    }
  for (int j = 0; j <= steps; ++j) {
    double expect = 0.0;
    for (int k = 0; k < steps; ++k) expect += impulse[j][k] * impulse[j][k] * dt;
    std::vector<double> sq(256);
    for (int q = 0; q < 256; ++q) sq[q] = x1.value(j, q) * x1.value(j, q);
    const double got = noise.mean(sq.data());
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("x1 linearity in the diffusion forcing") {
  // Scale sigma1 (hence dsigma) by 2 via a scaled problem: X1 doubles exactly.
  TimeGrid grid = make_grid(1.0, 6);
  NoiseEnsemble noise = sample_noise(grid, 64, NoiseMode::kTree, 0);
  auto u = const_control(64, 6, 0.1);
  ProblemPtr p1 = registry_get("linear_scalar", {{"sigma1", 0.4}, {"sigma0", 0.2}});
  ProblemPtr p2 = registry_get("linear_scalar", {{"sigma1", 0.8}, {"sigma0", 0.4}});
  auto x1bar = std::make_shared<StateEnsemble>(solve_fsvie(*p1, grid, noise, *u));
  FrozenCoefficients f1(p1, grid, x1bar, u, {0.9});
  // Same reference state for both so the frozen rows match exactly.
  FrozenCoefficients f2(p2, grid, x1bar, u, {0.9});
  const SpikeWindow window{1, 3};
  StateEnsemble a = solve_x1(f1, noise, window);
  StateEnsemble b = solve_x1(f2, noise, window);
  for (int k = 0; k <= 6; ++k)
    for (int q = 0; q < 64; ++q)
      CHECK(b.value(k, q) == doctest::Approx(2.0 * a.value(k, q)).epsilon(1e-12));
}

TEST_CASE("x2 trivial cases") {
  TimeGrid grid = make_grid(1.0, 6);
  NoiseEnsemble noise = sample_noise(grid, 64, NoiseMode::kTree, 0);
  const SpikeWindow window{2, 2};

  // Probe equal to the reference: no drift delta, no dsigma_x, no Hessians.
  ProblemPtr p = registry_get("linear_scalar");
  auto u = const_control(64, 6, 0.1);
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, *u));
  FrozenCoefficients fz(p, grid, xbar, u, {0.1});
  StateEnsemble x1 = solve_x1(fz, noise, window);
  StateEnsemble x2 = solve_x2(fz, noise, window, x1);
  for (int k = 0; k <= 6; ++k)
    for (int q = 0; q < 64; ++q) CHECK(x2.value(k, q) == 0.0);
}

TEST_CASE("x2 second moment scales as eps^2 on the tree") {
  TimeGrid grid = make_grid(1.0, 8);
  NoiseEnsemble noise = sample_noise(grid, 256, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("lq_control");
  auto u = const_control(256, 8, 0.1);
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, *u));
  FrozenCoefficients fz(p, grid, xbar, u, {0.9});

  std::vector<double> eps, sup;
  for (int w : {2, 4, 8}) {
    const SpikeWindow window{0, w};
    StateEnsemble x1 = solve_x1(fz, noise, window);
    StateEnsemble x2 = solve_x2(fz, noise, window, x1);
    double worst = 0.0;
    std::vector<double> sq(256);
    for (int j = 0; j <= 8; ++j) {
      for (int q = 0; q < 256; ++q) sq[q] = x2.value(j, q) * x2.value(j, q);
      worst = std::max(worst, noise.mean(sq.data()));
    }
    eps.push_back(w * grid.dt());
    sup.push_back(worst);
  }
  SlopeFit fit = fit_loglog(eps, sup);
  INFO("x2 slope " << fit.slope);
  CHECK(fit.slope >= 1.7);
  CHECK(fit.slope <= 2.3);
}

TEST_CASE("aux two-parameter process: diagonal identity and boundary") {
  TimeGrid grid = make_grid(1.0, 6);
  NoiseEnsemble noise = sample_noise(grid, 64, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("control_free_diffusion");
  auto u = const_control(64, 6, 0.1);
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, *u));
  // Use a drift probe so db != 0; dsigma = 0 but sigma_x != 0 makes the
  // kernel part of the aux process nontrivial through X1... X1 = 0 here, so
  // use linear_scalar instead for a driven X1.
  ProblemPtr lp = registry_get("linear_scalar");
  auto lxbar = std::make_shared<StateEnsemble>(solve_fsvie(*lp, grid, noise, *u));
  FrozenCoefficients fz(lp, grid, lxbar, u, {0.9});
  const SpikeWindow window{1, 2};
  StateEnsemble x1 = solve_x1(fz, noise, window);
  TwoParamEnsemble aux = solve_aux_x1(fz, noise, window, x1);

  // Diagonal consistency, exact under the shared Euler convention.
  for (int j = 0; j <= 6; ++j)
    for (int q = 0; q < 64; ++q)
      CHECK(aux.value(j, j, q) == doctest::Approx(x1.value(j, q)).epsilon(1e-14));
  // r = 0 column vanishes (empty sums).
  for (int j = 0; j <= 6; ++j)
    for (int q = 0; q < 64; ++q) CHECK(aux.value(j, 0, q) == 0.0);
}

TEST_CASE("spike locality: histories agree before the window") {
  TimeGrid grid = make_grid(1.0, 8);
  NoiseEnsemble noise = sample_noise(grid, 256, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("linear_scalar");
  ControlProcess uref = ControlProcess::constant(1, 256, 8, {0.1});
  ControlProcess uspk = uref;
  for (int k = 4; k < 6; ++k)
    for (int q = 0; q < 256; ++q) uspk.value(k, q) = 0.9;
  StateEnsemble a = solve_fsvie(*p, grid, noise, uref);
  StateEnsemble b = solve_fsvie(*p, grid, noise, uspk);
  for (int k = 0; k <= 4; ++k)
    for (int q = 0; q < 256; ++q) CHECK(a.value(k, q) == b.value(k, q));
  bool differs = false;
  for (int q = 0; q < 256; ++q) differs = differs || a.value(8, q) != b.value(8, q);
  CHECK(differs);
}

TEST_CASE("adaptedness of produced ensembles (atom constancy)") {
  TimeGrid grid = make_grid(1.0, 5);
  NoiseEnsemble noise = sample_noise(grid, 32, NoiseMode::kTree, 0);
  Filtration f(noise);
  ProblemPtr p = registry_get("control_free_diffusion");
  ControlProcess u = ControlProcess::constant(1, 32, 5, {0.2});
  StateEnsemble x = solve_fsvie(*p, grid, noise, u);
  for (int k = 0; k <= 5; ++k) CHECK(f.is_adapted(k, x.at(k), 1, 0.0));
}

TEST_CASE("numerical blowup carries the failing location") {
  TimeGrid grid = make_grid(1.0, 4);
  NoiseEnsemble noise = sample_noise(grid, 4, NoiseMode::kGaussian, 1);
  // Drive a NaN through the free term.
  struct NanProblem final : DriftFreeProblem {
    NanProblem() : DriftFreeProblem(0, 0, 0) {}
    void phi(double t, double* out) const override {
      out[0] = t > 0.5 ? std::nan("") : 1.0;
    }
  } nan_problem;
  ControlProcess u = ControlProcess::constant(1, 4, 4, {0.0});
  CHECK_THROWS_AS(solve_fsvie(nan_problem, grid, noise, u), NumericalBlowup);
}
