#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "fsvie/time_grid.hpp"

using namespace fsvie;

TEST_CASE("make_grid basic nodes") {
  TimeGrid g = make_grid(1.0, 4);
  CHECK(g.dt() == doctest::Approx(0.25));
  CHECK(g.node(0) == 0.0);
  CHECK(g.node(1) == doctest::Approx(0.25));
  CHECK(g.node(4) == 1.0);

  TimeGrid g1 = make_grid(2.0, 1);
  CHECK(g1.node(0) == 0.0);
  CHECK(g1.node(1) == 2.0);

  CHECK_THROWS_AS(make_grid(1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_grid(-1.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_grid(0.0, 4), std::invalid_argument);
}

TEST_CASE("tree noise enumerates all sign sequences") {
  TimeGrid g = make_grid(1.0, 2);
  NoiseEnsemble noise = sample_noise(g, 4, NoiseMode::kTree, 0);
  const double s = std::sqrt(0.5);
  // Lexicographic, '+' first.
  CHECK(noise.increment(0, 0) == doctest::Approx(s));
  CHECK(noise.increment(1, 0) == doctest::Approx(s));
  CHECK(noise.increment(1, 1) == doctest::Approx(-s));
  CHECK(noise.increment(0, 2) == doctest::Approx(-s));
  CHECK(noise.increment(1, 3) == doctest::Approx(-s));
  std::set<std::pair<double, double>> seqs;
  for (int p = 0; p < 4; ++p) seqs.insert({noise.increment(0, p), noise.increment(1, p)});
  CHECK(seqs.size() == 4);
  for (int p = 0; p < 4; ++p) CHECK(noise.weight(p) == doctest::Approx(0.25));

  CHECK_THROWS_AS(sample_noise(make_grid(1.0, 3), 4, NoiseMode::kTree, 0),
                  std::invalid_argument);
}

TEST_CASE("gaussian noise moments and determinism") {
  TimeGrid g = make_grid(1.0, 10);
  const int m = 10000;
  NoiseEnsemble noise = sample_noise(g, m, NoiseMode::kGaussian, 7);
  const double dt = g.dt();
  for (int k = 0; k < 10; ++k) {
    double mean = 0.0, var = 0.0;
    for (int p = 0; p < m; ++p) mean += noise.increment(k, p);
    mean /= m;
    for (int p = 0; p < m; ++p) {
      const double d = noise.increment(k, p) - mean;
      var += d * d;
    }
    var /= (m - 1);
    CHECK(std::abs(mean) <= 5.0 * std::sqrt(dt / m));
    CHECK(std::abs(var - dt) <= 5.0 / std::sqrt(static_cast<double>(m)));
  }

  NoiseEnsemble again = sample_noise(g, m, NoiseMode::kGaussian, 7);
  bool identical = true;
  for (int k = 0; k < 10 && identical; ++k)
    for (int p = 0; p < m; ++p)
      if (noise.increment(k, p) != again.increment(k, p)) {
        identical = false;
        break;
      }
  CHECK(identical);

  NoiseEnsemble other = sample_noise(g, m, NoiseMode::kGaussian, 8);
  CHECK(other.increment(0, 0) != noise.increment(0, 0));
}

TEST_CASE("filtration atoms: counts, refinement, tower exactness") {
  TimeGrid g = make_grid(1.0, 3);
  NoiseEnsemble noise = sample_noise(g, 8, NoiseMode::kTree, 0);
  Filtration f(noise);

  CHECK(f.atoms(0).size() == 1);
  CHECK(f.atoms(1).size() == 2);
  CHECK(f.atoms(2).size() == 4);
  CHECK(f.atoms(3).size() == 8);
  for (const auto& atom : f.atoms(3)) CHECK(atom.end - atom.begin == 1);
  for (const auto& atom : f.atoms(1)) CHECK(atom.end - atom.begin == 4);

  // Refinement: every atom at level k sits inside one atom at level k-1.
  for (int level = 1; level <= 3; ++level)
    for (const auto& atom : f.atoms(level)) {
      const int parent = f.atom_of(level - 1, f.order()[atom.begin]);
      for (int i = atom.begin; i < atom.end; ++i)
        CHECK(f.atom_of(level - 1, f.order()[i]) == parent);
    }

  // Tower property, exact: average over atoms at k then at j equals direct
  // averaging at j.
  std::uint64_t rng = 99;
  std::vector<double> v(8);
  for (auto& x : v) x = uniform01(rng);
  auto atom_avg = [&](int level, const std::vector<double>& in) {
    std::vector<double> out(in.size());
    for (const auto& atom : f.atoms(level)) {
      double acc = 0.0;
      for (int i = atom.begin; i < atom.end; ++i) acc += in[f.order()[i]];
      acc /= (atom.end - atom.begin);
      for (int i = atom.begin; i < atom.end; ++i) out[f.order()[i]] = acc;
    }
    return out;
  };
  const auto at2 = atom_avg(2, v);
  const auto at1_via_2 = atom_avg(1, at2);
  const auto at1 = atom_avg(1, v);
  for (int p = 0; p < 8; ++p) CHECK(at1_via_2[p] == doctest::Approx(at1[p]).epsilon(1e-15));
}

TEST_CASE("gaussian filtration is trivial at level 0 and singletons later") {
  TimeGrid g = make_grid(1.0, 2);
  NoiseEnsemble noise = sample_noise(g, 16, NoiseMode::kGaussian, 3);
  Filtration f(noise);
  CHECK(f.atoms(0).size() == 1);
  CHECK(f.atoms(1).size() == 16);  // continuous draws collide with prob. 0
}
