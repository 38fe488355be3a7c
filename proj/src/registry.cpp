#include <cmath>
#include <cstring>
#include <stdexcept>

#include "fsvie/errors.hpp"
#include "fsvie/problem.hpp"

namespace fsvie {

namespace {

// Merge user params into defaults; unknown keys are an error.
ParamMap resolve(const ParamMap& defaults, const ParamMap& user) {
  ParamMap out = defaults;
  for (const auto& [key, value] : user) {
    auto it = out.find(key);
    if (it == out.end())
      throw std::invalid_argument("unknown parameter '" + key + "'");
    it->second = value;
  }
  return out;
}

std::vector<std::vector<double>> scalar_probes(double lo, double hi, int count) {
  std::vector<std::vector<double>> out;
  for (int i = 0; i < count; ++i)
    out.push_back({lo + (hi - lo) * i / (count - 1)});
  return out;
}

// b = exp(-kappa (t-s)) (a x + c u + gamma x u), sigma = sigma0 + sigma1 u.
// The x*u drift coupling keeps the third-order spike remainder nonzero while
// the diffusion stays state-free (sigma_x = 0).
class LinearScalar final : public Problem {
 public:
  explicit LinearScalar(const ParamMap& p)
      : Problem("linear_scalar", 1, 1, 1, p.at("horizon"), p.at("kernel_decay") == 0.0),
        a_(p.at("a")),
        kappa_(p.at("kernel_decay")),
        c_(p.at("c")),
        gamma_(p.at("gamma")),
        s0_(p.at("sigma0")),
        s1_(p.at("sigma1")),
        q_(p.at("q")),
        r_(p.at("r")),
        qt_(p.at("q_T")),
        x0_(p.at("x0")),
        phi_slope_(p.at("phi_slope")) {
    set_probes(scalar_probes(-1.0, 1.0, 5));
  }

  void phi(double t, double* out) const override { out[0] = x0_ + phi_slope_ * t; }

  void b(double t, double s, const double* x, const double* u, double* out,
         int count) const override {
    const double k = std::exp(-kappa_ * (t - s));
    for (int p = 0; p < count; ++p)
      out[p] = k * (a_ * x[p] + c_ * u[p] + gamma_ * x[p] * u[p]);
  }
  void sigma(double, double, const double*, const double* u, double* out,
             int count) const override {
    for (int p = 0; p < count; ++p) out[p] = s0_ + s1_ * u[p];
  }
  void b_x(double t, double s, const double*, const double* u, double* out,
           int count) const override {
    const double k = std::exp(-kappa_ * (t - s));
    for (int p = 0; p < count; ++p) out[p] = k * (a_ + gamma_ * u[p]);
  }
  void sigma_x(double, double, const double*, const double*, double* out,
               int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void b_xx(double, double, const double*, const double*, double* out,
            int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma_xx(double, double, const double*, const double*, double* out,
                int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void g(double, const double* x, const double* u, double* out, int count) const override {
    for (int p = 0; p < count; ++p)
      out[p] = 0.5 * (q_ * x[p] * x[p] + r_ * u[p] * u[p]);
  }
  void g_x(int, double, const double* x, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = q_ * x[p];
  }
  void g_xx(int, double, const double*, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = q_;
  }
  void h(const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = 0.5 * qt_ * x[p] * x[p];
  }
  void h_x(int, const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = qt_ * x[p];
  }
  void h_xx(int, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = qt_;
  }

 private:
  double a_, kappa_, c_, gamma_, s0_, s1_, q_, r_, qt_, x0_, phi_slope_;
};

// b = exp(-kappa (t-s)) (a sin(x) + c u), sigma = exp(-nu (t-s)) (s0 + s2 sin(x)).
// Diffusion is control free (delta sigma = 0) but genuinely state dependent,
// which exercises the Z-coupled kernels and the Hessian terms.
class ControlFreeDiffusion final : public Problem {
 public:
  explicit ControlFreeDiffusion(const ParamMap& p)
      : Problem("control_free_diffusion", 1, 1, 1, p.at("horizon"), false),
        a_(p.at("a")),
        c_(p.at("c")),
        kappa_(p.at("kernel_decay")),
        nu_(p.at("nu")),
        s0_(p.at("sigma0")),
        s2_(p.at("sigma2")),
        q_(p.at("q")),
        r_(p.at("r")),
        qt_(p.at("q_T")),
        x0_(p.at("x0")) {
    set_probes(scalar_probes(-1.0, 1.0, 5));
  }

  void phi(double, double* out) const override { out[0] = x0_; }

  void b(double t, double s, const double* x, const double* u, double* out,
         int count) const override {
    const double k = std::exp(-kappa_ * (t - s));
    for (int p = 0; p < count; ++p) out[p] = k * (a_ * std::sin(x[p]) + c_ * u[p]);
  }
  void sigma(double t, double s, const double* x, const double*, double* out,
             int count) const override {
    const double k = std::exp(-nu_ * (t - s));
    for (int p = 0; p < count; ++p) out[p] = k * (s0_ + s2_ * std::sin(x[p]));
  }
  void b_x(double t, double s, const double* x, const double*, double* out,
           int count) const override {
    const double k = std::exp(-kappa_ * (t - s));
    for (int p = 0; p < count; ++p) out[p] = k * a_ * std::cos(x[p]);
  }
  void sigma_x(double t, double s, const double* x, const double*, double* out,
               int count) const override {
    const double k = std::exp(-nu_ * (t - s));
    for (int p = 0; p < count; ++p) out[p] = k * s2_ * std::cos(x[p]);
  }
  void b_xx(double t, double s, const double* x, const double*, double* out,
            int count) const override {
    const double k = std::exp(-kappa_ * (t - s));
    for (int p = 0; p < count; ++p) out[p] = -k * a_ * std::sin(x[p]);
  }
  void sigma_xx(double t, double s, const double* x, const double*, double* out,
                int count) const override {
    const double k = std::exp(-nu_ * (t - s));
    for (int p = 0; p < count; ++p) out[p] = -k * s2_ * std::sin(x[p]);
  }
  void g(double, const double* x, const double* u, double* out, int count) const override {
    for (int p = 0; p < count; ++p)
      out[p] = 0.5 * (q_ * x[p] * x[p] + r_ * u[p] * u[p]);
  }
  void g_x(int, double, const double* x, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = q_ * x[p];
  }
  void g_xx(int, double, const double*, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = q_;
  }
  void h(const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = 0.5 * qt_ * x[p] * x[p];
  }
  void h_x(int, const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = qt_ * x[p];
  }
  void h_xx(int, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = qt_;
  }

 private:
  double a_, c_, kappa_, nu_, s0_, s2_, q_, r_, qt_, x0_;
};

// Time-homogeneous benchmark: b = a x + c u + gamma x u, sigma = s0 + s1 u,
// quadratic costs. With c = gamma = 0 the optimal control is the pointwise
// minimizer of r u^2 / 2 + W_k (s0 + s1 u)^2, which direct search recovers.
class LqControl final : public Problem {
 public:
  explicit LqControl(const ParamMap& p)
      : Problem("lq_control", 1, 1, 1, p.at("horizon"), true),
        a_(p.at("a")),
        c_(p.at("c")),
        gamma_(p.at("gamma")),
        s0_(p.at("sigma0")),
        s1_(p.at("sigma1")),
        q_(p.at("q")),
        r_(p.at("r")),
        qt_(p.at("q_T")),
        x0_(p.at("x0")) {
    set_probes(scalar_probes(-1.0, 1.0, 9));
  }

  void phi(double, double* out) const override { out[0] = x0_; }

  void b(double, double, const double* x, const double* u, double* out,
         int count) const override {
    for (int p = 0; p < count; ++p)
      out[p] = a_ * x[p] + c_ * u[p] + gamma_ * x[p] * u[p];
  }
  void sigma(double, double, const double*, const double* u, double* out,
             int count) const override {
    for (int p = 0; p < count; ++p) out[p] = s0_ + s1_ * u[p];
  }
  void b_x(double, double, const double*, const double* u, double* out,
           int count) const override {
    for (int p = 0; p < count; ++p) out[p] = a_ + gamma_ * u[p];
  }
  void sigma_x(double, double, const double*, const double*, double* out,
               int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void b_xx(double, double, const double*, const double*, double* out,
            int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma_xx(double, double, const double*, const double*, double* out,
                int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void g(double, const double* x, const double* u, double* out, int count) const override {
    for (int p = 0; p < count; ++p)
      out[p] = 0.5 * (q_ * x[p] * x[p] + r_ * u[p] * u[p]);
  }
  void g_x(int, double, const double* x, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = q_ * x[p];
  }
  void g_xx(int, double, const double*, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = q_;
  }
  void h(const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = 0.5 * qt_ * x[p] * x[p];
  }
  void h_x(int, const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = qt_ * x[p];
  }
  void h_xx(int, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = qt_;
  }

 private:
  double a_, c_, gamma_, s0_, s1_, q_, r_, qt_, x0_;
};

// b = 0, sigma = sigma0 (control free), g = (u - c)^2, h = 0. The reference
// u == c is exactly optimal, which makes maximum principle verdicts crisp.
class ProjectionCost final : public Problem {
 public:
  explicit ProjectionCost(const ParamMap& p)
      : Problem("projection_cost", 1, 1, 1, p.at("horizon"), true),
        c_(p.at("c")),
        s0_(p.at("sigma0")),
        x0_(p.at("x0")) {
    set_probes(scalar_probes(-1.0, 1.0, 9));
  }

  void phi(double, double* out) const override { out[0] = x0_; }

  void b(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma(double, double, const double*, const double*, double* out,
             int count) const override {
    for (int p = 0; p < count; ++p) out[p] = s0_;
  }
  void b_x(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma_x(double, double, const double*, const double*, double* out,
               int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void b_xx(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma_xx(double, double, const double*, const double*, double* out,
                int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void g(double, const double*, const double* u, double* out, int count) const override {
    for (int p = 0; p < count; ++p) out[p] = (u[p] - c_) * (u[p] - c_);
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

 private:
  double c_, s0_, x0_;
};

// Two fully decoupled scalar players: state i is driven only by u_i and
// player i is charged only for (x_i, u_i). Nash checks then factor into two
// independent single-player checks.
class TwoPlayerDecoupled final : public Problem {
 public:
  explicit TwoPlayerDecoupled(const ParamMap& p)
      : Problem("two_player_decoupled", 2, 2, 2, p.at("horizon"), true),
        a_(p.at("a")),
        s0_(p.at("sigma0")),
        s1_(p.at("sigma1")),
        q_(p.at("q")),
        r_(p.at("r")),
        qt_(p.at("q_T")),
        x0_(p.at("x0")) {
    std::vector<std::vector<double>> joint;
    for (double v1 : {-0.8, -0.4, 0.0, 0.4, 0.8})
      for (double v2 : {-0.8, -0.4, 0.0, 0.4, 0.8}) joint.push_back({v1, v2});
    set_probes(std::move(joint));
    set_player_dims({1, 1});
  }

  void phi(double, double* out) const override {
    out[0] = x0_;
    out[1] = 0.6 * x0_;
  }

  void b(double, double, const double* x, const double*, double* out,
         int count) const override {
    for (int p = 0; p < count; ++p) {
      out[2 * p] = a_ * x[2 * p];
      out[2 * p + 1] = a_ * x[2 * p + 1];
    }
  }
  void sigma(double, double, const double*, const double* u, double* out,
             int count) const override {
    for (int p = 0; p < count; ++p) {
      out[2 * p] = s0_ + s1_ * u[2 * p];
      out[2 * p + 1] = s0_ + s1_ * u[2 * p + 1];
    }
  }
  void b_x(double, double, const double*, const double*, double* out,
           int count) const override {
    for (int p = 0; p < count; ++p) {
      double* j = out + 4 * p;
      j[0] = a_; j[1] = 0.0; j[2] = 0.0; j[3] = a_;
    }
  }
  void sigma_x(double, double, const double*, const double*, double* out,
               int count) const override {
    std::memset(out, 0, sizeof(double) * 4 * count);
  }
  void b_xx(double, double, const double*, const double*, double* out,
            int count) const override {
    std::memset(out, 0, sizeof(double) * 8 * count);
  }
  void sigma_xx(double, double, const double*, const double*, double* out,
                int count) const override {
    std::memset(out, 0, sizeof(double) * 8 * count);
  }
  void g(double, const double* x, const double* u, double* out, int count) const override {
    for (int p = 0; p < count; ++p)
      for (int l = 0; l < 2; ++l)
        out[2 * p + l] = 0.5 * (q_ * x[2 * p + l] * x[2 * p + l] +
                                r_ * u[2 * p + l] * u[2 * p + l]);
  }
  void g_x(int l, double, const double* x, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) {
      out[2 * p] = l == 0 ? q_ * x[2 * p] : 0.0;
      out[2 * p + 1] = l == 1 ? q_ * x[2 * p + 1] : 0.0;
    }
  }
  void g_xx(int l, double, const double*, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) {
      double* hm = out + 4 * p;
      hm[0] = l == 0 ? q_ : 0.0; hm[1] = 0.0; hm[2] = 0.0; hm[3] = l == 1 ? q_ : 0.0;
    }
  }
  void h(const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p)
      for (int l = 0; l < 2; ++l)
        out[2 * p + l] = 0.5 * qt_ * x[2 * p + l] * x[2 * p + l];
  }
  void h_x(int l, const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) {
      out[2 * p] = l == 0 ? qt_ * x[2 * p] : 0.0;
      out[2 * p + 1] = l == 1 ? qt_ * x[2 * p + 1] : 0.0;
    }
  }
  void h_xx(int l, const double*, double* out, int count) const override {
    for (int p = 0; p < count; ++p) {
      double* hm = out + 4 * p;
      hm[0] = l == 0 ? qt_ : 0.0; hm[1] = 0.0; hm[2] = 0.0; hm[3] = l == 1 ? qt_ : 0.0;
    }
  }

 private:
  double a_, s0_, s1_, q_, r_, qt_, x0_;
};

// Scalar zero-sum game: b = 0, sigma = s0 + d1 u1 + d2 u2,
// g1 = a1 u1^2/2 - a2 u2^2/2 + lambda u1 u2, h1 = q_T x^2 / 2, (g2, h2) = -(g1, h1).
// With the default parameters the pointwise saddle sits on the probe grid.
class ZeroSumBilinear final : public Problem {
 public:
  explicit ZeroSumBilinear(const ParamMap& p)
      : Problem("zero_sum_bilinear", 1, 2, 2, p.at("horizon"), true),
        s0_(p.at("sigma0")),
        d1_(p.at("d1")),
        d2_(p.at("d2")),
        a1_(p.at("a1")),
        a2_(p.at("a2")),
        lambda_(p.at("lambda")),
        qt_(p.at("q_T")),
        x0_(p.at("x0")) {
    std::vector<std::vector<double>> joint;
    for (int i = -5; i <= 5; ++i)
      for (int j = -5; j <= 5; ++j)
        joint.push_back({0.2 * i, 0.2 * j});
    set_probes(std::move(joint));
    set_player_dims({1, 1});
  }

  void phi(double, double* out) const override { out[0] = x0_; }

  void b(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma(double, double, const double*, const double* u, double* out,
             int count) const override {
    for (int p = 0; p < count; ++p) out[p] = s0_ + d1_ * u[2 * p] + d2_ * u[2 * p + 1];
  }
  void b_x(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma_x(double, double, const double*, const double*, double* out,
               int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void b_xx(double, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void sigma_xx(double, double, const double*, const double*, double* out,
                int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void g(double, const double*, const double* u, double* out, int count) const override {
    for (int p = 0; p < count; ++p) {
      const double u1 = u[2 * p], u2 = u[2 * p + 1];
      const double g1 = 0.5 * a1_ * u1 * u1 - 0.5 * a2_ * u2 * u2 + lambda_ * u1 * u2;
      out[2 * p] = g1;
      out[2 * p + 1] = -g1;
    }
  }
  void g_x(int, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void g_xx(int, double, const double*, const double*, double* out, int count) const override {
    std::memset(out, 0, sizeof(double) * count);
  }
  void h(const double* x, double* out, int count) const override {
    for (int p = 0; p < count; ++p) {
      const double h1 = 0.5 * qt_ * x[p] * x[p];
      out[2 * p] = h1;
      out[2 * p + 1] = -h1;
    }
  }
  void h_x(int l, const double* x, double* out, int count) const override {
    const double sign = l == 0 ? 1.0 : -1.0;
    for (int p = 0; p < count; ++p) out[p] = sign * qt_ * x[p];
  }
  void h_xx(int l, const double*, double* out, int count) const override {
    const double sign = l == 0 ? 1.0 : -1.0;
    for (int p = 0; p < count; ++p) out[p] = sign * qt_;
  }

 private:
  double s0_, d1_, d2_, a1_, a2_, lambda_, qt_, x0_;
};

}  // namespace

ProblemPtr registry_get(const std::string& name, const ParamMap& params) {
  if (name == "linear_scalar") {
    const ParamMap defaults = {
        {"a", 0.5},      {"kernel_decay", 1.0}, {"c", 1.0},   {"gamma", 0.4},
        {"sigma0", 0.3}, {"sigma1", 0.8},       {"q", 1.0},   {"r", 0.5},
        {"q_T", 1.0},    {"x0", 1.0},           {"phi_slope", 0.2}, {"horizon", 1.0}};
    return std::make_shared<LinearScalar>(resolve(defaults, params));
  }
  if (name == "control_free_diffusion") {
    const ParamMap defaults = {
        {"a", 0.8},   {"c", 1.0},      {"kernel_decay", 0.5}, {"nu", 0.7},
        {"sigma0", 0.4}, {"sigma2", 0.5}, {"q", 1.0},         {"r", 0.5},
        {"q_T", 1.0}, {"x0", 0.5},     {"horizon", 1.0}};
    return std::make_shared<ControlFreeDiffusion>(resolve(defaults, params));
  }
  if (name == "lq_control") {
    const ParamMap defaults = {{"a", 0.4},      {"c", 1.0},   {"gamma", 0.3},
                               {"sigma0", 0.3}, {"sigma1", 0.8}, {"q", 1.0},
                               {"r", 0.5},      {"q_T", 1.0}, {"x0", 1.0},
                               {"horizon", 1.0}};
    return std::make_shared<LqControl>(resolve(defaults, params));
  }
  if (name == "projection_cost") {
    const ParamMap defaults = {
        {"c", 0.3}, {"sigma0", 0.5}, {"x0", 0.0}, {"horizon", 1.0}};
    return std::make_shared<ProjectionCost>(resolve(defaults, params));
  }
  if (name == "two_player_decoupled") {
    const ParamMap defaults = {{"a", 0.4},      {"sigma0", 0.3}, {"sigma1", 0.7},
                               {"q", 1.0},      {"r", 0.6},      {"q_T", 1.0},
                               {"x0", 0.8},     {"horizon", 1.0}};
    return std::make_shared<TwoPlayerDecoupled>(resolve(defaults, params));
  }
  if (name == "zero_sum_bilinear") {
    const ParamMap defaults = {{"sigma0", 0.9}, {"d1", 1.0}, {"d2", 0.0},
                               {"a1", 1.0},     {"a2", 1.0}, {"lambda", 0.5},
                               {"q_T", 1.0},    {"x0", 0.3}, {"horizon", 1.0}};
    return std::make_shared<ZeroSumBilinear>(resolve(defaults, params));
  }
  throw NotFoundError("registry_get: unknown problem '" + name + "'");
}

std::vector<std::string> registry_names() {
  return {"linear_scalar",  "control_free_diffusion", "lq_control",
          "projection_cost", "two_player_decoupled",   "zero_sum_bilinear"};
}

}  // namespace fsvie
