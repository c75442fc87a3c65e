#pragma once

// Two-arm example with a safe arm (known reward c) and a risky arm with reward
// alpha * v + eps, v ~ Uniform(0,1), eps = sum_k beta_k v^k + eta. A greedy OLS
// learner's limit belief a solves
//
//   a = alpha + Cov[v, eps | v > c/a] / Var[v | v > c/a],
//
// which for cubic noise is a cubic in a. Prescribing its three roots yields the
// betas; simulating the greedy learner shows beliefs settling on different roots.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "ivbandit/errors.hpp"
#include "ivbandit/rng.hpp"
#include "ivbandit/stats.hpp"

namespace ivbandit::selfbias {

struct TwoArmExample {
  double c = 1.0;                       // safe-arm reward
  double alpha = 15.0;                  // risky-arm slope
  std::array<double, 4> betas{};        // beta_0..beta_3
  double eta_sd = 1.0;

  double noise_mean(double v) const { return betas[0] + v * (betas[1] + v * (betas[2] + v * betas[3])); }
};

/// Truncated moments of v ~ Uniform(0,1) given v > b.
inline double var_v_above(double b) { return (1.0 - b) * (1.0 - b) / 12.0; }
inline double cov_v_v2_above(double b) { return (1.0 - b) * (1.0 - b) * (1.0 + b) / 12.0; }
inline double cov_v_v3_above(double b) { return (1.0 - b) * (1.0 - b) * (3.0 * b * b + 4.0 * b + 3.0) / 40.0; }

/// Cov[v, eps | v > b] / Var[v | v > b].
inline double conditional_moment_ratio(const TwoArmExample& ex, double b) {
  if (!(b >= 0.0 && b < 1.0)) throw UsageError("conditional_moment_ratio: b must lie in [0,1)");
  const auto& beta = ex.betas;
  return beta[1] + beta[2] * (1.0 + b) + 0.3 * beta[3] * (3.0 * b * b + 4.0 * b + 3.0);
}

/// Probability limit of OLS under uniform assignment (cutoff 0).
inline double ols_limit(const TwoArmExample& ex) {
  return ex.alpha + ex.betas[1] + ex.betas[2] + 0.9 * ex.betas[3];
}

/// Noise coefficients that make r1, r2, r3 the fixed points; beta_0 centers eps.
inline TwoArmExample betas_from_roots(double r1, double r2, double r3, double c, double alpha) {
  for (double r : {r1, r2, r3}) {
    const double b = c / r;
    if (!(b > 0.0 && b < 1.0))
      throw RootOutsideBeliefRange("root " + std::to_string(r) + " gives c/r = " + std::to_string(b) +
                                   " outside (0,1)");
  }
  TwoArmExample ex;
  ex.c = c;
  ex.alpha = alpha;
  const double b3 = 10.0 * r1 * r2 * r3 / (9.0 * c * c);
  const double b2 = -(r1 * r2 + r1 * r3 + r2 * r3) / c - 1.2 * b3;
  const double b1 = (r1 + r2 + r3) - (alpha + b2 + 0.9 * b3);
  const double b0 = -(b1 / 2.0 + b2 / 3.0 + b3 / 4.0);
  ex.betas = {b0, b1, b2, b3};
  return ex;
}

/// Monic cubic a^3 + k2 a^2 + k1 a + k0 whose roots are the fixed points.
inline std::array<double, 3> fixed_point_cubic(const TwoArmExample& ex) {
  const auto& beta = ex.betas;
  return {-0.9 * ex.c * ex.c * beta[3], -ex.c * (beta[2] + 1.2 * beta[3]), -ols_limit(ex)};
}

inline double cubic_residual(const std::array<double, 3>& k, double a) { return ((a + k[2]) * a + k[1]) * a + k[0]; }

struct FixedPointSet {
  std::vector<double> roots;              // admissible: c/root in (0,1), ascending
  std::vector<double> inadmissible_roots; // real, but c/root outside (0,1)
  int complex_roots = 0;
  double ols_limit = 0.0;
};

/**
 * Real roots of the fixed-point cubic from the eigenvalues of its companion
 * matrix, each polished by one Newton step.
 */
inline FixedPointSet fixed_points(const TwoArmExample& ex) {
  const auto k = fixed_point_cubic(ex);
  Eigen::Matrix3d companion = Eigen::Matrix3d::Zero();
  companion(0, 0) = -k[2];
  companion(0, 1) = -k[1];
  companion(0, 2) = -k[0];
  companion(1, 0) = 1.0;
  companion(2, 1) = 1.0;
  Eigen::EigenSolver<Eigen::Matrix3d> solver(companion, false);

  FixedPointSet out;
  out.ols_limit = ols_limit(ex);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const std::complex<double> z = solver.eigenvalues()(i);
    if (std::abs(z.imag()) > 1e-8 * std::max(1.0, std::abs(z))) {
      ++out.complex_roots;
      continue;
    }
    double a = z.real();
    const double slope = (3.0 * a + 2.0 * k[2]) * a + k[1];
    if (slope != 0.0) a -= cubic_residual(k, a) / slope;
    const double b = ex.c / a;
    if (b > 0.0 && b < 1.0) {
      out.roots.push_back(a);
    } else {
      out.inadmissible_roots.push_back(a);
    }
  }
  std::sort(out.roots.begin(), out.roots.end());
  std::sort(out.inadmissible_roots.begin(), out.inadmissible_roots.end());
  return out;
}

struct GreedyPathOptions {
  int n_paths = 500;
  int horizon = 10000;
  int warmup = 10;         // periods in which the risky arm is pulled unconditionally
  int record_stride = 0;   // >0 keeps every stride-th estimate per path
  std::uint64_t seed = 1;
};

struct GreedyPaths {
  std::vector<double> terminal;
  std::vector<bool> stalled;  // no risky pull after warmup
  std::vector<int> record_t;
  std::vector<std::vector<double>> trajectories;
};

namespace detail {

// Slope of a running simple regression (with intercept), updated in
// centered form.
class RunningSlope {
 public:
  void add(double x, double y) {
    ++n_;
    const double dx = x - mean_x_;
    mean_x_ += dx / static_cast<double>(n_);
    mean_y_ += (y - mean_y_) / static_cast<double>(n_);
    sxx_ += dx * (x - mean_x_);
    sxy_ += dx * (y - mean_y_);
  }
  long count() const { return n_; }
  double slope() const { return sxy_ / sxx_; }
  bool ready() const { return n_ >= 2 && sxx_ > 0.0; }

 private:
  long n_ = 0;
  double mean_x_ = 0.0;
  double mean_y_ = 0.0;
  double sxx_ = 0.0;
  double sxy_ = 0.0;
};

// One uniform per draw, also when eta is switched off.
inline double draw_eta(const TwoArmExample& ex, RngStream& rng) {
  const double u = rng.uniform();
  return ex.eta_sd > 0.0 ? ex.eta_sd * normal_quantile(u) : 0.0;
}

}  // namespace detail

/**
 * Greedy learning paths. Each period draws v and eps; the risky arm is pulled
 * for the first `warmup` periods and afterwards iff v * estimate > c. The
 * estimate is the OLS slope of R on (1, v) over risky-arm periods.
 */
inline GreedyPaths simulate_greedy_paths(const TwoArmExample& ex, const GreedyPathOptions& options) {
  if (options.warmup < 2) throw ConfigError("greedy paths: warmup must be >= 2");
  if (options.n_paths < 1 || options.horizon < options.warmup)
    throw ConfigError("greedy paths: need n_paths >= 1 and horizon >= warmup");
  GreedyPaths out;
  out.terminal.resize(static_cast<std::size_t>(options.n_paths));
  out.stalled.assign(static_cast<std::size_t>(options.n_paths), false);
  if (options.record_stride > 0) {
    for (int t = options.record_stride; t <= options.horizon; t += options.record_stride) out.record_t.push_back(t);
    out.trajectories.resize(static_cast<std::size_t>(options.n_paths));
  }

  for (int path = 0; path < options.n_paths; ++path) {
    RngStream rng = RngStream::derive(options.seed, {static_cast<std::uint64_t>(path)});
    detail::RunningSlope fit;
    double estimate = 0.0;
    long risky_after_warmup = 0;
    for (int t = 1; t <= options.horizon; ++t) {
      const double v = rng.uniform();
      const double eta = detail::draw_eta(ex, rng);
      const bool risky = t <= options.warmup || v * estimate > ex.c;
      if (risky) {
        fit.add(v, ex.alpha * v + ex.noise_mean(v) + eta);
        if (fit.ready()) estimate = fit.slope();
        if (t > options.warmup) ++risky_after_warmup;
      }
      if (options.record_stride > 0 && t % options.record_stride == 0)
        out.trajectories[static_cast<std::size_t>(path)].push_back(estimate);
    }
    out.terminal[static_cast<std::size_t>(path)] = estimate;
    out.stalled[static_cast<std::size_t>(path)] = risky_after_warmup == 0;
  }
  return out;
}

enum class Assignment { Greedy, Random };

/**
 * Sample covariance between the risky-arm indicator and eps along one path.
 * Under greedy assignment the indicator depends on v and hence on eps; under
 * random assignment it does not.
 */
inline double action_noise_covariance(const TwoArmExample& ex, int horizon, int warmup, Assignment assignment,
                                      std::uint64_t seed) {
  RngStream rng(seed);
  detail::RunningSlope fit;
  double estimate = 0.0;
  double mean_a = 0.0, mean_e = 0.0, cross = 0.0;
  for (int t = 1; t <= horizon; ++t) {
    const double v = rng.uniform();
    const double eta = detail::draw_eta(ex, rng);
    const double coin = rng.uniform();
    const double eps = ex.noise_mean(v) + eta;
    bool risky;
    if (assignment == Assignment::Random) {
      risky = coin < 0.5;
    } else {
      risky = t <= warmup || v * estimate > ex.c;
    }
    if (risky) {
      fit.add(v, ex.alpha * v + eps);
      if (fit.ready()) estimate = fit.slope();
    }
    const double a = risky ? 1.0 : 0.0;
    const double n = static_cast<double>(t);
    const double da = a - mean_a;
    mean_a += da / n;
    mean_e += (eps - mean_e) / n;
    cross += da * (eps - mean_e);
  }
  return cross / static_cast<double>(horizon);
}

/// (v, eps) pairs from the joint law of the example.
inline std::vector<std::array<double, 2>> sample_joint(const TwoArmExample& ex, int n, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<std::array<double, 2>> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    const double v = rng.uniform();
    const double eta = detail::draw_eta(ex, rng);
    out.push_back({v, ex.noise_mean(v) + eta});
  }
  return out;
}

}  // namespace ivbandit::selfbias
