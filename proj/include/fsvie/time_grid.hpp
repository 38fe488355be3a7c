#pragma once

#include <cstdint>
#include <vector>

namespace fsvie {

/// Uniform partition of [0, T] into `steps` cells.
class TimeGrid {
 public:
  TimeGrid(double horizon, int steps);

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  double dt() const { return dt_; }
  /// Node t_k = k * T / N, k = 0..N.
  double node(int k) const { return nodes_[static_cast<size_t>(k)]; }
  const std::vector<double>& nodes() const { return nodes_; }

 private:
  double horizon_;
  int steps_;
  double dt_;
  std::vector<double> nodes_;
};

enum class NoiseMode { kGaussian, kTree };

/// Per-path Brownian increments on a grid, either sampled (gaussian) or the
/// exhaustive +-sqrt(dt) enumeration (tree). Immutable once built.
class NoiseEnsemble {
 public:
  const TimeGrid& grid() const { return grid_; }
  int paths() const { return paths_; }
  NoiseMode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }

  /// Increment dW_{k+1} of path p over [t_k, t_{k+1}], k in [0, N).
  double increment(int k, int p) const {
    return increments_[static_cast<size_t>(k) * paths_ + p];
  }
  /// Contiguous increments over all paths for step k.
  const double* increments_at(int k) const {
    return increments_.data() + static_cast<size_t>(k) * paths_;
  }
  double weight(int p) const { return weights_[static_cast<size_t>(p)]; }
  const std::vector<double>& weights() const { return weights_; }

  /// Weighted average of a per-path scalar array.
  double mean(const double* per_path) const;

  friend NoiseEnsemble sample_noise(const TimeGrid& grid, int paths,
                                    NoiseMode mode, std::uint64_t seed);

 private:
  NoiseEnsemble(TimeGrid grid, int paths, NoiseMode mode, std::uint64_t seed)
      : grid_(grid), paths_(paths), mode_(mode), seed_(seed) {}

  TimeGrid grid_;
  int paths_;
  NoiseMode mode_;
  std::uint64_t seed_;
  std::vector<double> increments_;  // [k * paths + p]
  std::vector<double> weights_;     // [p]
};

/// Atom partitions of the path set per time level. Paths in one atom share
/// all increments up to that level, so conditioning on F_{t_k} is an exact
/// weighted average over the atom.
class Filtration {
 public:
  explicit Filtration(const NoiseEnsemble& ensemble);

  struct Atom {
    int begin;  // offsets into order()
    int end;
  };

  int levels() const { return static_cast<int>(atoms_.size()); }
  const std::vector<Atom>& atoms(int level) const {
    return atoms_[static_cast<size_t>(level)];
  }
  /// Path indices arranged so that every atom is a contiguous range.
  const std::vector<int>& order() const { return order_; }
  /// Atom index of a path at a level (for adaptedness checks).
  int atom_of(int level, int path) const {
    return atom_id_[static_cast<size_t>(level)][static_cast<size_t>(path)];
  }

  /// True if the per-path values (n_comp components each) are constant on
  /// every atom of `level` up to `tol`.
  bool is_adapted(int level, const double* values, int n_comp,
                  double tol = 0.0) const;

 private:
  std::vector<int> order_;
  std::vector<std::vector<Atom>> atoms_;    // [level][atom]
  std::vector<std::vector<int>> atom_id_;   // [level][path]
};

TimeGrid make_grid(double horizon, int steps);

NoiseEnsemble sample_noise(const TimeGrid& grid, int paths, NoiseMode mode,
                           std::uint64_t seed);

/// Deterministic counter-based RNG helpers (stable across platforms).
std::uint64_t splitmix64(std::uint64_t& state);
double uniform01(std::uint64_t& state);

}  // namespace fsvie
