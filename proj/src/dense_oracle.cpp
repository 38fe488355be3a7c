#include "fsvie/dense_oracle.hpp"

#include <Eigen/Dense>
#include <cstring>
#include <functional>
#include <stdexcept>

namespace fsvie {

namespace {

// Index map between (level, atom, component) unknowns and per-path fields.
class AdaptedBasis {
 public:
  AdaptedBasis(const Filtration& filtration, const std::vector<int>& levels, int n_comp)
      : filtration_(&filtration), levels_(levels), n_comp_(n_comp) {
    for (size_t li = 0; li < levels_.size(); ++li) {
      starts_.push_back(total_);
      total_ += static_cast<int>(filtration.atoms(levels_[li]).size()) * n_comp_;
    }
  }

  int size() const { return total_; }

  /// Scatter the coefficient vector into per-path fields (one block per level
  /// in the order of `levels`).
  void scatter(const Eigen::VectorXd& x, int paths, std::vector<double>& field) const {
    field.assign(static_cast<size_t>(levels_.size()) * paths * n_comp_, 0.0);
    for (size_t li = 0; li < levels_.size(); ++li) {
      const auto& atoms = filtration_->atoms(levels_[li]);
      const auto& order = filtration_->order();
      for (size_t a = 0; a < atoms.size(); ++a)
        for (int c = 0; c < n_comp_; ++c) {
          const double v = x[starts_[li] + static_cast<int>(a) * n_comp_ + c];
          for (int i = atoms[a].begin; i < atoms[a].end; ++i) {
            const int p = order[static_cast<size_t>(i)];
            field[(li * paths + p) * n_comp_ + c] = v;
          }
        }
    }
  }

  /// Gather per-path fields into coefficients (first path of each atom).
  void gather(const std::vector<double>& field, int paths, Eigen::VectorXd& x) const {
    x.resize(total_);
    for (size_t li = 0; li < levels_.size(); ++li) {
      const auto& atoms = filtration_->atoms(levels_[li]);
      const auto& order = filtration_->order();
      for (size_t a = 0; a < atoms.size(); ++a) {
        const int p = order[static_cast<size_t>(atoms[a].begin)];
        for (int c = 0; c < n_comp_; ++c)
          x[starts_[li] + static_cast<int>(a) * n_comp_ + c] =
              field[(li * paths + p) * n_comp_ + c];
      }
    }
  }

 private:
  const Filtration* filtration_;
  std::vector<int> levels_;
  int n_comp_;
  std::vector<int> starts_;
  int total_ = 0;
};

// Solve x = map(x) for an affine map by probing: (I - A) x = map(0).
Eigen::VectorXd solve_affine_fixed_point(
    int dim, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& map) {
  const Eigen::VectorXd c = map(Eigen::VectorXd::Zero(dim));
  Eigen::MatrixXd A(dim, dim);
  for (int i = 0; i < dim; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim);
    e[i] = 1.0;
    A.col(i) = map(e) - c;
  }
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(dim, dim) - A;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
  if (!lu.isInvertible())
    throw std::runtime_error("dense oracle: fixed-point system is singular");
  return lu.solve(c);
}

// out_p += scale * J_p^T v_p (vector case).
void acc_jac_t_vec(const double* jac, const double* v, int n, int paths, double scale,
                   double* out) {
  for (int p = 0; p < paths; ++p)
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int l = 0; l < n; ++l)
        s += jac[(static_cast<size_t>(p) * n + l) * n + i] * v[static_cast<size_t>(p) * n + l];
      out[static_cast<size_t>(p) * n + i] += scale * s;
    }
}

// out_p += scale * J_p^T M_p (matrix case).
void acc_jac_t_mat(const double* jac, const double* m, int n, int paths, double scale,
                   double* out) {
  for (int p = 0; p < paths; ++p)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l)
          s += jac[(static_cast<size_t>(p) * n + l) * n + i] *
               m[(static_cast<size_t>(p) * n + l) * n + j];
        out[(static_cast<size_t>(p) * n + i) * n + j] += scale * s;
      }
}

}  // namespace

std::vector<double> dense_solve_y(const FrozenCoefficients& frozen,
                                  const TreeProjection& backend) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const size_t block = static_cast<size_t>(paths) * n;

  std::vector<int> levels(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) levels[static_cast<size_t>(k)] = k;
  AdaptedBasis basis(backend.filtration(), levels, n);

  // eta/zeta of h_x are data, not unknowns.
  MartingaleRep hx_rep = project_cascade(backend, frozen.hx(), n, steps, 0);

  std::vector<double> jac(static_cast<size_t>(paths) * n * n);
  auto map = [&](const Eigen::VectorXd& x) {
    std::vector<double> y;
    basis.scatter(x, paths, y);
    // Lower-triangle integrands of the candidate Y rows.
    std::vector<std::vector<double>> zcols(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k)
      zcols[static_cast<size_t>(k)].assign(static_cast<size_t>(std::max(0, steps - 1 - k)) * block, 0.0);
    std::vector<double> cur(block), down(block), lam(block);
    for (int j = 1; j < steps; ++j) {
      std::copy(y.begin() + block * j, y.begin() + block * (j + 1), cur.begin());
      for (int k = j - 1; k >= 0; --k) {
        backend.integrand(cur.data(), n, k, lam.data());
        std::copy(lam.begin(), lam.end(),
                  zcols[static_cast<size_t>(k)].begin() + static_cast<size_t>(j - k - 1) * block);
        backend.project(cur.data(), n, k, down.data());
        cur.swap(down);
      }
    }
    std::vector<double> out(y.size());
    std::vector<double> f(block), proj(block);
    for (int k = 0; k < steps; ++k) {
      std::copy(frozen.gx(k), frozen.gx(k) + block, f.begin());
      frozen.bx(steps, k, jac.data());
      acc_jac_t_vec(jac.data(), frozen.hx(), n, paths, 1.0, f.data());
      frozen.sx(steps, k, jac.data());
      acc_jac_t_vec(jac.data(), hx_rep.lambda_at(k), n, paths, 1.0, f.data());
      for (int j = k + 1; j < steps; ++j) {
        frozen.bx(j, k, jac.data());
        acc_jac_t_vec(jac.data(), y.data() + block * j, n, paths, dt, f.data());
        frozen.sx(j, k, jac.data());
        acc_jac_t_vec(jac.data(),
                      zcols[static_cast<size_t>(k)].data() + static_cast<size_t>(j - k - 1) * block,
                      n, paths, dt, f.data());
      }
      backend.project(f.data(), n, k, proj.data());
      std::copy(proj.begin(), proj.end(), out.begin() + block * k);
    }
    Eigen::VectorXd gathered;
    basis.gather(out, paths, gathered);
    return gathered;
  };

  Eigen::VectorXd solution = solve_affine_fixed_point(basis.size(), map);
  std::vector<double> field;
  basis.scatter(solution, paths, field);
  return field;
}

std::vector<double> dense_solve_p2(const FrozenCoefficients& frozen,
                                   const TreeProjection& backend,
                                   const SecondAdjoint& partial) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const size_t mb = static_cast<size_t>(paths) * n * n;

  std::vector<int> levels(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) levels[static_cast<size_t>(k)] = k;
  AdaptedBasis basis(backend.filtration(), levels, n * n);

  std::vector<double> jac(static_cast<size_t>(paths) * n * n);
  auto map = [&](const Eigen::VectorXd& x) {
    std::vector<double> p2;
    basis.scatter(x, paths, p2);
    std::vector<std::vector<double>> qcols(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k)
      qcols[static_cast<size_t>(k)].assign(static_cast<size_t>(std::max(0, steps - 1 - k)) * mb, 0.0);
    std::vector<double> cur(mb), down(mb), lam(mb);
    for (int j = 1; j < steps; ++j) {
      std::copy(p2.begin() + mb * j, p2.begin() + mb * (j + 1), cur.begin());
      for (int k = j - 1; k >= 0; --k) {
        backend.integrand(cur.data(), n * n, k, lam.data());
        std::copy(lam.begin(), lam.end(),
                  qcols[static_cast<size_t>(k)].begin() + static_cast<size_t>(j - k - 1) * mb);
        backend.project(cur.data(), n * n, k, down.data());
        cur.swap(down);
      }
    }
    std::vector<double> out(p2.size());
    std::vector<double> f(mb), proj(mb);
    for (int s = 0; s < steps; ++s) {
      std::fill(f.begin(), f.end(), 0.0);
      frozen.bx(steps, s, jac.data());
      acc_jac_t_mat(jac.data(), partial.p1(s), n, paths, 1.0, f.data());
      frozen.sx(steps, s, jac.data());
      acc_jac_t_mat(jac.data(), partial.q1(s), n, paths, 1.0, f.data());
      for (int theta = s + 1; theta < steps; ++theta) {
        frozen.bx(theta, s, jac.data());
        acc_jac_t_mat(jac.data(), p2.data() + mb * theta, n, paths, dt, f.data());
        frozen.sx(theta, s, jac.data());
        acc_jac_t_mat(jac.data(),
                      qcols[static_cast<size_t>(s)].data() + static_cast<size_t>(theta - s - 1) * mb,
                      n, paths, dt, f.data());
      }
      backend.project(f.data(), n * n, s, proj.data());
      std::copy(proj.begin(), proj.end(), out.begin() + mb * s);
    }
    Eigen::VectorXd gathered;
    basis.gather(out, paths, gathered);
    return gathered;
  };

  Eigen::VectorXd solution = solve_affine_fixed_point(basis.size(), map);
  std::vector<double> field;
  basis.scatter(solution, paths, field);
  return field;
}

DenseP3P4 dense_solve_p3_p4(const FrozenCoefficients& frozen,
                            const SecondAdjointSources& sources,
                            const TreeProjection& backend) {
  const int n = frozen.state_dim();
  const int paths = frozen.paths();
  const int steps = frozen.grid().steps();
  const double dt = frozen.grid().dt();
  const size_t mb = static_cast<size_t>(paths) * n * n;

  // Unknowns: P4(r) at level r for r = 0..N-1, then P3(s,r) at level r for
  // each pair s > r.
  std::vector<int> levels;
  for (int r = 0; r < steps; ++r) levels.push_back(r);
  std::vector<std::pair<int, int>> pairs;
  for (int s = 1; s < steps; ++s)
    for (int r = 0; r < s; ++r) {
      pairs.emplace_back(s, r);
      levels.push_back(r);
    }
  AdaptedBasis basis(backend.filtration(), levels, n * n);

  const size_t p4_fields = static_cast<size_t>(steps);
  auto p3_block = [&](std::vector<double>& field, int s, int r) {
    size_t idx = 0;
    for (size_t i = 0; i < pairs.size(); ++i)
      if (pairs[i] == std::make_pair(s, r)) { idx = p4_fields + i; break; }
    return field.data() + idx * mb;
  };

  std::vector<double> jac(static_cast<size_t>(paths) * n * n), jac2(jac.size());
  std::vector<double> buf(mb), buf2(mb), lam(mb);

  auto transpose_into = [&](const double* src, double* dst) {
    for (int p = 0; p < paths; ++p)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          dst[(static_cast<size_t>(p) * n + i) * n + j] = src[(static_cast<size_t>(p) * n + j) * n + i];
  };

  auto map = [&](const Eigen::VectorXd& x) {
    std::vector<double> field;
    basis.scatter(x, paths, field);
    std::vector<double> out(field.size(), 0.0);
    // P4 rows.
    for (int r = 0; r < steps; ++r) {
      double* dst = out.data() + static_cast<size_t>(r) * mb;
      std::memcpy(dst, sources.h2_at(r), sizeof(double) * mb);
      for (int t = r + 1; t < steps; ++t) {
        frozen.sx(t, r, jac.data());
        backend.project(field.data() + static_cast<size_t>(t) * mb, n * n, r, buf.data());
        // sx(t,r)' E_r[P4(t)] sx(t,r)
        for (int p = 0; p < paths; ++p)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
              double s = 0.0;
              for (int l = 0; l < n; ++l)
                for (int q = 0; q < n; ++q)
                  s += jac[(static_cast<size_t>(p) * n + l) * n + i] *
                       buf[(static_cast<size_t>(p) * n + l) * n + q] *
                       jac[(static_cast<size_t>(p) * n + q) * n + j];
              dst[(static_cast<size_t>(p) * n + i) * n + j] += dt * s;
            }
        for (int s2 = r + 1; s2 < steps; ++s2) {
          if (s2 == t) continue;
          frozen.sx(s2, r, jac2.data());
          const int hi = std::max(s2, t), lo = std::min(s2, t);
          const double* blockp = p3_block(field, hi, lo);
          if (s2 > t) {
            std::memcpy(buf2.data(), blockp, sizeof(double) * mb);
          } else {
            transpose_into(blockp, buf2.data());
          }
          backend.project(buf2.data(), n * n, r, buf.data());
          // sx(t,r)' E_r[P3(s2,t)] sx(s2,r)
          for (int p = 0; p < paths; ++p)
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int l = 0; l < n; ++l)
                  for (int q = 0; q < n; ++q)
                    s += jac[(static_cast<size_t>(p) * n + l) * n + i] *
                         buf[(static_cast<size_t>(p) * n + l) * n + q] *
                         jac2[(static_cast<size_t>(p) * n + q) * n + j];
                dst[(static_cast<size_t>(p) * n + i) * n + j] += dt * dt * s;
              }
        }
      }
    }
    // P3 rows.
    for (size_t pi = 0; pi < pairs.size(); ++pi) {
      const int s = pairs[pi].first, r = pairs[pi].second;
      double* dst = out.data() + (p4_fields + pi) * mb;
      std::memcpy(dst, sources.h1_at(s, r), sizeof(double) * mb);
      frozen.bx(s, r, jac.data());
      backend.project(field.data() + static_cast<size_t>(s) * mb, n * n, r, buf.data());
      acc_jac_t_mat(jac.data(), buf.data(), n, paths, 1.0, dst);
      frozen.sx(s, r, jac.data());
      backend.integrand(field.data() + static_cast<size_t>(s) * mb, n * n, r, lam.data());
      acc_jac_t_mat(jac.data(), lam.data(), n, paths, 1.0, dst);
      for (int t = r + 1; t < steps; ++t) {
        if (t == s) continue;
        const int hi = std::max(s, t), lo = std::min(s, t);
        const double* blockp = p3_block(field, hi, lo);
        if (s > t) std::memcpy(buf2.data(), blockp, sizeof(double) * mb);
        else transpose_into(blockp, buf2.data());
        frozen.bx(t, r, jac.data());
        backend.project(buf2.data(), n * n, r, buf.data());
        acc_jac_t_mat(jac.data(), buf.data(), n, paths, dt, dst);
        frozen.sx(t, r, jac.data());
        backend.integrand(buf2.data(), n * n, r, lam.data());
        acc_jac_t_mat(jac.data(), lam.data(), n, paths, dt, dst);
      }
    }
    Eigen::VectorXd gathered;
    basis.gather(out, paths, gathered);
    return gathered;
  };

  Eigen::VectorXd solution = solve_affine_fixed_point(basis.size(), map);
  std::vector<double> field;
  basis.scatter(solution, paths, field);

  DenseP3P4 result;
  result.p4.assign(field.begin(), field.begin() + p4_fields * mb);
  result.p3.assign(field.begin() + p4_fields * mb, field.end());
  return result;
}

}  // namespace fsvie
