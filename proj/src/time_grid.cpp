#include "fsvie/time_grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace fsvie {

TimeGrid::TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
  if (!(horizon > 0.0)) throw std::invalid_argument("TimeGrid: horizon must be positive");
  if (steps < 1) throw std::invalid_argument("TimeGrid: steps must be >= 1");
  dt_ = horizon / steps;
  nodes_.resize(static_cast<size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) nodes_[static_cast<size_t>(k)] = horizon * k / steps;
  nodes_.front() = 0.0;
  nodes_.back() = horizon;
}

TimeGrid make_grid(double horizon, int steps) { return TimeGrid(horizon, steps); }

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(std::uint64_t& state) {
  // 53-bit mantissa in (0, 1]; never returns 0 so log() below is safe.
  return (static_cast<double>(splitmix64(state) >> 11) + 1.0) * 0x1.0p-53;
}

NoiseEnsemble sample_noise(const TimeGrid& grid, int paths, NoiseMode mode,
                           std::uint64_t seed) {
  if (paths < 1) throw std::invalid_argument("sample_noise: paths must be >= 1");
  const int n = grid.steps();
  if (mode == NoiseMode::kTree) {
    if (n >= 63 || paths != (1LL << n))
      throw std::invalid_argument("sample_noise: tree mode requires paths = 2^steps");
  }
  NoiseEnsemble out(grid, paths, mode, seed);
  out.increments_.resize(static_cast<size_t>(n) * paths);
  out.weights_.assign(static_cast<size_t>(paths), 1.0 / paths);
  const double sdt = std::sqrt(grid.dt());
  if (mode == NoiseMode::kTree) {
    // Path p enumerates the sign sequence given by the bits of p, most
    // significant bit first, with 0 -> +sqrt(dt). This is the lexicographic
    // order with '+' before '-'.
    for (int k = 0; k < n; ++k) {
      double* row = out.increments_.data() + static_cast<size_t>(k) * paths;
      for (int p = 0; p < paths; ++p) {
        const bool minus = (p >> (n - 1 - k)) & 1;
        row[p] = minus ? -sdt : sdt;
      }
    }
  } else {
    // Counter-based substream per path: generation order independent.
    for (int p = 0; p < paths; ++p) {
      std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(p) + 1));
      splitmix64(s);  // decorrelate nearby seeds
      for (int k = 0; k < n; ++k) {
        // Box-Muller; one normal per draw keeps the stream layout simple.
        const double u1 = uniform01(s);
        const double u2 = uniform01(s);
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
        out.increments_[static_cast<size_t>(k) * paths + p] = sdt * z;
      }
    }
  }
  return out;
}

double NoiseEnsemble::mean(const double* per_path) const {
  double acc = 0.0;
  for (int p = 0; p < paths_; ++p) acc += weights_[static_cast<size_t>(p)] * per_path[p];
  return acc;
}

Filtration::Filtration(const NoiseEnsemble& ensemble) {
  const int n = ensemble.grid().steps();
  const int m = ensemble.paths();
  order_.resize(static_cast<size_t>(m));
  for (int p = 0; p < m; ++p) order_[static_cast<size_t>(p)] = p;
  atoms_.resize(static_cast<size_t>(n) + 1);
  atom_id_.assign(static_cast<size_t>(n) + 1, std::vector<int>(static_cast<size_t>(m), 0));

  atoms_[0].push_back({0, m});
  for (int level = 1; level <= n; ++level) {
    const double* inc = ensemble.increments_at(level - 1);
    auto& prev = atoms_[static_cast<size_t>(level - 1)];
    auto& cur = atoms_[static_cast<size_t>(level)];
    std::vector<int> next_order;
    next_order.reserve(static_cast<size_t>(m));
    for (const Atom& a : prev) {
      // Split the parent atom by the new increment, larger values first so
      // the tree enumeration keeps the identity order.
      std::map<double, std::vector<int>, std::greater<double>> groups;
      for (int i = a.begin; i < a.end; ++i) groups[inc[order_[static_cast<size_t>(i)]]].push_back(order_[static_cast<size_t>(i)]);
      for (auto& [value, members] : groups) {
        (void)value;
        const int begin = static_cast<int>(next_order.size());
        for (int p : members) next_order.push_back(p);
        cur.push_back({begin, static_cast<int>(next_order.size())});
      }
    }
    order_ = std::move(next_order);
    for (int a = 0; a < static_cast<int>(cur.size()); ++a)
      for (int i = cur[static_cast<size_t>(a)].begin; i < cur[static_cast<size_t>(a)].end; ++i)
        atom_id_[static_cast<size_t>(level)][static_cast<size_t>(order_[static_cast<size_t>(i)])] = a;
  }
  // Each refinement permutes paths only inside their parent atom and fills
  // the parent's range contiguously, so earlier levels' ranges and id tables
  // stay valid against the final order.
}

bool Filtration::is_adapted(int level, const double* values, int n_comp,
                            double tol) const {
  for (const Atom& a : atoms(level)) {
    const int p0 = order_[static_cast<size_t>(a.begin)];
    for (int i = a.begin + 1; i < a.end; ++i) {
      const int p = order_[static_cast<size_t>(i)];
      for (int c = 0; c < n_comp; ++c) {
        const double d = values[static_cast<size_t>(p) * n_comp + c] -
                         values[static_cast<size_t>(p0) * n_comp + c];
        if (std::abs(d) > tol) return false;
      }
    }
  }
  return true;
}

}  // namespace fsvie
