#include <doctest.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "fsvie/errors.hpp"
#include "fsvie/forward.hpp"
#include "fsvie/frozen.hpp"
#include "fsvie/problem.hpp"

using namespace fsvie;

namespace {

// Problem with a deliberately wrong coded b_x, for the audit fault test.
class BrokenDerivative final : public Problem {
 public:
  BrokenDerivative() : Problem("broken", 1, 1, 1, 1.0, true) {}
  void phi(double, double* out) const override { out[0] = 0.0; }
  void b(double, double, const double* x, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = 0.7 * x[p];
  }
  void sigma(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void b_x(double, double, const double*, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = 0.9;  // should be 0.7
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
    std::memset(out, 0, sizeof(double) * count);
  }
  void g_x(int, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void g_xx(int, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void h(const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void h_x(int, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void h_xx(int, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
};

}  // namespace

TEST_CASE("registry lookups") {
  ProblemPtr p = registry_get("linear_scalar", {{"a", 0.5}, {"kernel_decay", 1.0}});
  CHECK(p->state_dim() == 1);
  CHECK(p->control_dim() == 1);
  CHECK_FALSE(p->time_homogeneous());

  ProblemPtr pc = registry_get("projection_cost", {{"c", 0.3}});
  double x = 0.0, u = 0.3, g1 = -1.0;
  pc->g(0.1, &x, &u, &g1, 1);
  CHECK(g1 == doctest::Approx(0.0));
  u = 0.8;
  pc->g(0.1, &x, &u, &g1, 1);
  CHECK(g1 == doctest::Approx(0.25));

  CHECK_THROWS_AS(registry_get("bogus", {}), NotFoundError);
  CHECK_THROWS_AS(registry_get("linear_scalar", {{"nope", 1.0}}), std::invalid_argument);
}

TEST_CASE("validate_h1_h2 over every registry problem") {
  TimeGrid grid = make_grid(1.0, 8);
  for (const auto& name : registry_names()) {
    ProblemPtr p = registry_get(name);
    ValidationReport rep = validate_h1_h2(*p, grid, 25, 1234);
    INFO(name << " worst=" << rep.worst_entry << " err=" << rep.max_derivative_mismatch);
    CHECK(rep.passed);
    CHECK(rep.max_derivative_mismatch <= 1e-6);
  }
}

TEST_CASE("validate_h1_h2 flags an injected derivative fault") {
  TimeGrid grid = make_grid(1.0, 4);
  BrokenDerivative broken;
  ValidationReport rep = validate_h1_h2(broken, grid, 10, 5);
  CHECK_FALSE(rep.passed);
  CHECK(rep.worst_entry == "b_x");
  CHECK_THROWS_AS(validate_h1_h2(broken, grid, 0, 5), std::invalid_argument);
}

TEST_CASE("registry second derivatives are symmetric at probe points") {
  std::uint64_t rng = 7;
  for (const auto& name : registry_names()) {
    ProblemPtr p = registry_get(name);
    const int n = p->state_dim();
    const int m = p->control_dim();
    std::vector<double> x(n), u(m), hess(n * n * n), gxx(n * n), hxx(n * n);
    for (int probe = 0; probe < 10; ++probe) {
      const double t = uniform01(rng), s = t * uniform01(rng);
      for (auto& v : x) v = 2 * uniform01(rng) - 1;
      for (auto& v : u) v = 2 * uniform01(rng) - 1;
      p->b_xx(t, s, x.data(), u.data(), hess.data(), 1);
      for (int i = 0; i < n; ++i)
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b)
            CHECK(hess[i * n * n + a * n + b] == doctest::Approx(hess[i * n * n + b * n + a]));
      for (int l = 0; l < p->num_objectives(); ++l) {
        p->g_xx(l, s, x.data(), u.data(), gxx.data(), 1);
        p->h_xx(l, x.data(), hxx.data(), 1);
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) {
            CHECK(gxx[a * n + b] == doctest::Approx(gxx[b * n + a]));
            CHECK(hxx[a * n + b] == doctest::Approx(hxx[b * n + a]));
          }
      }
    }
  }
}

TEST_CASE("control adaptedness is atom constancy in tree mode") {
  TimeGrid grid = make_grid(1.0, 3);
  NoiseEnsemble noise = sample_noise(grid, 8, NoiseMode::kTree, 0);
  Filtration f(noise);

  ControlProcess constant = ControlProcess::constant(1, 8, 3, {0.4});
  CHECK(constant.is_adapted(f));

  // Adapted: value at step k > 0 depends on the sign of the first increment.
  ControlProcess adapted(1, 8, 3);
  for (int k = 0; k < 3; ++k)
    for (int p = 0; p < 8; ++p)
      adapted.value(k, p) = k == 0 ? 0.0 : (noise.increment(0, p) > 0 ? 1.0 : -1.0);
  CHECK(adapted.is_adapted(f));

  // Not adapted: value at step 0 already peeks at the first increment.
  ControlProcess peeking(1, 8, 3);
  for (int p = 0; p < 8; ++p) peeking.value(0, p) = noise.increment(0, p) > 0 ? 1.0 : -1.0;
  CHECK_FALSE(peeking.is_adapted(f));
}

TEST_CASE("freeze: delta arrays vanish at the reference control") {
  TimeGrid grid = make_grid(1.0, 4);
  NoiseEnsemble noise = sample_noise(grid, 16, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("linear_scalar");
  ControlProcess u = ControlProcess::constant(1, 16, 4, {0.25});
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, u));
  auto uref = std::make_shared<ControlProcess>(u);

  FrozenCoefficients fz = freeze(p, grid, xbar, uref, {0.25});
  CHECK(fz.materialized());
  std::vector<double> row(16);
  for (int j = 0; j <= 4; ++j)
    for (int k = 0; k <= j; ++k) {
      fz.db(j, k, row.data());
      for (double v : row) CHECK(v == 0.0);
      fz.dsigma(j, k, row.data());
      for (double v : row) CHECK(v == 0.0);
      fz.dbx(j, k, row.data());
      for (double v : row) CHECK(v == 0.0);
      fz.dsx(j, k, row.data());
      for (double v : row) CHECK(v == 0.0);
    }
}

TEST_CASE("freeze: control-free diffusion has zero sigma deltas") {
  TimeGrid grid = make_grid(1.0, 4);
  NoiseEnsemble noise = sample_noise(grid, 16, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("control_free_diffusion");
  ControlProcess u = ControlProcess::constant(1, 16, 4, {0.1});
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, u));
  auto uref = std::make_shared<ControlProcess>(u);

  FrozenCoefficients fz = freeze(p, grid, xbar, uref, {0.8});
  std::vector<double> row(16);
  for (int j = 0; j <= 4; ++j)
    for (int k = 0; k <= j; ++k) {
      fz.dsigma(j, k, row.data());
      for (double v : row) CHECK(v == 0.0);
      fz.dsx(j, k, row.data());
      for (double v : row) CHECK(v == 0.0);
    }
  // Drift deltas are nonzero away from the reference.
  fz.db(4, 2, row.data());
  bool any = false;
  for (double v : row) any = any || v != 0.0;
  CHECK(any);
}

TEST_CASE("freeze entries equal direct closure evaluation (re-evaluation oracle)") {
  TimeGrid grid = make_grid(1.0, 4);
  NoiseEnsemble noise = sample_noise(grid, 16, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("linear_scalar");
  ControlProcess u = ControlProcess::constant(1, 16, 4, {0.3});
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, u));
  auto uref = std::make_shared<ControlProcess>(u);
  FrozenCoefficients fz = freeze(p, grid, xbar, uref, {0.9});
  REQUIRE(fz.materialized());

  std::vector<double> row(16), direct(16), ref(16);
  for (int j = 1; j <= 4; ++j)
    for (int k = 0; k < j; ++k) {
      fz.bx(j, k, row.data());
      p->b_x(grid.node(j), grid.node(k), xbar->at(k), u.at(k), direct.data(), 16);
      for (int i = 0; i < 16; ++i) CHECK(row[i] == direct[i]);

      fz.db(j, k, row.data());
      std::vector<double> probe_vals(16, 0.9);
      p->b(grid.node(j), grid.node(k), xbar->at(k), probe_vals.data(), direct.data(), 16);
      p->b(grid.node(j), grid.node(k), xbar->at(k), u.at(k), ref.data(), 16);
      for (int i = 0; i < 16; ++i) CHECK(row[i] == direct[i] - ref[i]);
    }
}

TEST_CASE("freeze is pure: repeated calls give identical arrays") {
  TimeGrid grid = make_grid(1.0, 3);
  NoiseEnsemble noise = sample_noise(grid, 8, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("lq_control");
  ControlProcess u = ControlProcess::constant(1, 8, 3, {0.2});
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, u));
  auto uref = std::make_shared<ControlProcess>(u);
  FrozenCoefficients a = freeze(p, grid, xbar, uref, {0.7});
  FrozenCoefficients b = freeze(p, grid, xbar, uref, {0.7});
  std::vector<double> ra(8), rb(8);
  for (int j = 0; j <= 3; ++j)
    for (int k = 0; k <= j; ++k) {
      a.dsigma(j, k, ra.data());
      b.dsigma(j, k, rb.data());
      for (int i = 0; i < 8; ++i) CHECK(ra[i] == rb[i]);
    }
}

TEST_CASE("freeze dimension mismatch raises") {
  TimeGrid grid = make_grid(1.0, 3);
  NoiseEnsemble noise = sample_noise(grid, 8, NoiseMode::kTree, 0);
  ProblemPtr p = registry_get("linear_scalar");
  ControlProcess u = ControlProcess::constant(1, 8, 3, {0.0});
  auto xbar = std::make_shared<StateEnsemble>(solve_fsvie(*p, grid, noise, u));
  auto uref = std::make_shared<ControlProcess>(u);
  CHECK_THROWS_AS(freeze(p, grid, xbar, uref, {0.0, 1.0}), std::invalid_argument);
  auto wrong_state = std::make_shared<StateEnsemble>(2, 8, 3);
  CHECK_THROWS_AS(freeze(p, grid, wrong_state, uref, {0.0}), std::invalid_argument);
}
