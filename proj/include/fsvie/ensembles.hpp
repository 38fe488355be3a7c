#pragma once

#include <string>
#include <vector>

namespace fsvie {

/// State values X(t_k) in R^n per path per node, k = 0..N.
class StateEnsemble {
 public:
  StateEnsemble(int state_dim, int paths, int steps)
      : n_(state_dim),
        paths_(paths),
        steps_(steps),
        values_(static_cast<size_t>(steps + 1) * paths * state_dim, 0.0) {}

  int state_dim() const { return n_; }
  int paths() const { return paths_; }
  int steps() const { return steps_; }

  double* at(int k) { return values_.data() + static_cast<size_t>(k) * paths_ * n_; }
  const double* at(int k) const {
    return values_.data() + static_cast<size_t>(k) * paths_ * n_;
  }
  double& value(int k, int p, int i = 0) {
    return values_[(static_cast<size_t>(k) * paths_ + p) * n_ + i];
  }
  double value(int k, int p, int i = 0) const {
    return values_[(static_cast<size_t>(k) * paths_ + p) * n_ + i];
  }

  std::string provenance;

 private:
  int n_;
  int paths_;
  int steps_;
  std::vector<double> values_;  // [(k * paths + p) * n + i]
};

/// Lower-triangular two-parameter values F(t_j, t_r), r <= j, per path.
/// Memory is O(paths * N^2 * n / 2).
class TwoParamEnsemble {
 public:
  TwoParamEnsemble(int state_dim, int paths, int steps)
      : n_(state_dim), paths_(paths), steps_(steps) {
    values_.assign(tri_size(steps) * paths * n_, 0.0);
  }

  int state_dim() const { return n_; }
  int paths() const { return paths_; }
  int steps() const { return steps_; }

  /// Entry block for (j, r) with r <= j; contiguous over paths.
  double* at(int j, int r) { return values_.data() + offset(j, r); }
  const double* at(int j, int r) const { return values_.data() + offset(j, r); }
  double value(int j, int r, int p, int i = 0) const {
    return values_[offset(j, r) + static_cast<size_t>(p) * n_ + i];
  }

 private:
  static size_t tri_size(int steps) {
    // (j, r) with 0 <= r <= j <= steps
    return static_cast<size_t>(steps + 1) * (steps + 2) / 2;
  }
  size_t offset(int j, int r) const {
    const size_t cell = static_cast<size_t>(j) * (j + 1) / 2 + r;
    return cell * paths_ * n_;
  }

  int n_;
  int paths_;
  int steps_;
  std::vector<double> values_;
};

}  // namespace fsvie
