#pragma once

// Data-generating processes for linear contextual bandits with endogenous
// covariates.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "ivbandit/errors.hpp"
#include "ivbandit/rng.hpp"
#include "ivbandit/stats.hpp"

namespace ivbandit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TruncNormSpec {
  double mean = 0.0;
  double variance = 1.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  void validate() const {
    if (!(variance > 0.0) || !std::isfinite(variance))
      throw ConfigError("truncated normal: variance must be positive, got " + std::to_string(variance));
    if (!(lower < upper)) throw ConfigError("truncated normal: lower bound must be below upper bound");
  }
};

/**
 * Inverse-CDF sampler for a normal law restricted to (lower, upper).
 *
 * Exactly one uniform is consumed per sample. When the whole interval sits
 * above the mean the survival function is inverted instead of the CDF so that
 * right-tail intervals keep full relative precision.
 */
class TruncatedNormal {
 public:
  explicit TruncatedNormal(const TruncNormSpec& spec) : spec_(spec) {
    spec_.validate();
    sd_ = std::sqrt(spec_.variance);
    const double a = (spec_.lower - spec_.mean) / sd_;
    const double b = (spec_.upper - spec_.mean) / sd_;
    upper_tail_ = a > 0.0;
    if (upper_tail_) {
      lo_ = normal_cdf(-a);  // survival at the lower bound
      hi_ = normal_cdf(-b);
    } else {
      lo_ = normal_cdf(a);
      hi_ = normal_cdf(b);
    }
    if (!(std::abs(hi_ - lo_) > 0.0))
      throw ConfigError("truncated normal: interval carries no probability mass");
  }

  const TruncNormSpec& spec() const { return spec_; }

  double operator()(RngStream& rng) const { return from_uniform(rng.uniform()); }

  double from_uniform(double u) const {
    static const boost::math::normal_distribution<double> standard;
    const double p = lo_ + u * (hi_ - lo_);
    double z;
    if (upper_tail_) {
      z = boost::math::quantile(boost::math::complement(standard, p));
    } else {
      z = boost::math::quantile(standard, p);
    }
    const double x = spec_.mean + sd_ * z;
    // Rounding at the interval ends can land exactly on a bound.
    return std::clamp(x, std::nextafter(spec_.lower, spec_.upper), std::nextafter(spec_.upper, spec_.lower));
  }

 private:
  TruncNormSpec spec_;
  double sd_ = 1.0;
  double lo_ = 0.0;
  double hi_ = 1.0;
  bool upper_tail_ = false;
};

inline double sample_trunc_norm(const TruncNormSpec& spec, RngStream& rng) {
  return TruncatedNormal(spec)(rng);
}

struct ContextDraw {
  VectorXd v;    // covariates
  VectorXd z;    // instruments
  double eps = 0.0;
};

/**
 * Structural form of the endogenous environment:
 *
 *   x ~ TruncNorm, zc ~ TruncNorm, eta ~ TruncNorm, e ~ N(0, idiosyncratic_variance)
 *   d = sqrt(x) + rho_z * zc + rho_eta * eta,   eps = e + eta_in_noise * eta
 *   v = (1, x, d)
 *   z = (1, x, zc, then 1(x >= k), 1(x >= k) zc for each exogenous threshold k,
 *        then 1(zc >= k), 1(zc >= k) zc for each instrument threshold k)
 *
 * `d` is endogenous through the shared confounder `eta`; `zc` moves `d` but is
 * independent of `eps`.
 */
struct EndogenousCovariates {
  TruncNormSpec exogenous{0.0, 1.0, 0.0, 10.0};
  TruncNormSpec instrument{0.0, 4.0, 0.0, 10.0};
  TruncNormSpec confounder{0.0, 0.25, -5.0, 5.0};
  double idiosyncratic_variance = 0.25;  // zero allowed: noise-free rewards
  double rho_z = 0.5;
  double rho_eta = 1.5;
  double eta_in_noise = 2.0;
  std::vector<double> exogenous_thresholds{1.0, 1.5};
  std::vector<double> instrument_thresholds{2.0};

  int covariate_dim() const { return 3; }
  int iv_dim() const {
    return 3 + 2 * static_cast<int>(exogenous_thresholds.size() + instrument_thresholds.size());
  }

  void validate() const {
    exogenous.validate();
    instrument.validate();
    confounder.validate();
    if (idiosyncratic_variance < 0.0) throw ConfigError("idiosyncratic noise variance must be >= 0");
  }

  ContextDraw compose(double x, double zc, double eta, double idiosyncratic) const {
    ContextDraw draw;
    const double d = std::sqrt(std::max(x, 0.0)) + rho_z * zc + rho_eta * eta;
    draw.v = VectorXd(3);
    draw.v << 1.0, x, d;
    draw.z = VectorXd(iv_dim());
    draw.z(0) = 1.0;
    draw.z(1) = x;
    draw.z(2) = zc;
    Eigen::Index k = 3;
    for (double threshold : exogenous_thresholds) {
      const double on = x >= threshold ? 1.0 : 0.0;
      draw.z(k++) = on;
      draw.z(k++) = on * zc;
    }
    for (double threshold : instrument_thresholds) {
      const double on = zc >= threshold ? 1.0 : 0.0;
      draw.z(k++) = on;
      draw.z(k++) = on * zc;
    }
    draw.eps = idiosyncratic + eta_in_noise * eta;
    return draw;
  }
};

using DrawFunction = std::function<ContextDraw(RngStream&)>;

/**
 * Full environment: arm count, stacked true coefficients
 * alpha = (alpha_1', ..., alpha_M')' and how contexts are generated.
 *
 * By default contexts follow `structure`. Any other DGP can be plugged in
 * through `custom_draw` together with its dimensions.
 */
struct EnvSpec {
  int arms = 2;
  VectorXd alpha;
  EndogenousCovariates structure;
  DrawFunction custom_draw;
  int custom_covariate_dim = 0;
  int custom_iv_dim = 0;

  static EnvSpec benchmark() {
    EnvSpec env;
    env.arms = 2;
    env.alpha = VectorXd(6);
    env.alpha << 1.0, 4.0, 4.0, 8.0, 2.0, 2.0;
    return env;
  }

  int covariate_dim() const { return custom_draw ? custom_covariate_dim : structure.covariate_dim(); }
  int iv_dim() const { return custom_draw ? custom_iv_dim : structure.iv_dim(); }
  int coefficient_dim() const { return arms * covariate_dim(); }

  auto arm_coefficients(int arm) const { return alpha.segment(static_cast<Eigen::Index>(arm) * covariate_dim(), covariate_dim()); }

  void validate() const {
    if (arms < 1) throw ConfigError("environment needs at least one arm");
    if (custom_draw && (custom_covariate_dim < 1 || custom_iv_dim < 1))
      throw ConfigError("custom DGP must declare its covariate and IV dimensions");
    if (alpha.size() != coefficient_dim())
      throw ConfigError("alpha has length " + std::to_string(alpha.size()) + ", expected arms * p = " +
                        std::to_string(coefficient_dim()));
    if (!custom_draw) structure.validate();
  }
};

/// Samplers for one environment, built once and reused every period.
class ContextSampler {
 public:
  explicit ContextSampler(const EnvSpec& env)
      : env_(&env),
        exogenous_(env.structure.exogenous),
        instrument_(env.structure.instrument),
        confounder_(env.structure.confounder),
        idiosyncratic_sd_(std::sqrt(env.structure.idiosyncratic_variance)) {}

  ContextDraw operator()(RngStream& rng) const {
    if (env_->custom_draw) return env_->custom_draw(rng);
    // Fixed consumption order: x, zc, eta, idiosyncratic noise.
    const double x = exogenous_(rng);
    const double zc = instrument_(rng);
    const double eta = confounder_(rng);
    const double u = rng.uniform();
    const double e = idiosyncratic_sd_ > 0.0 ? idiosyncratic_sd_ * normal_quantile(u) : 0.0;
    return env_->structure.compose(x, zc, eta, e);
  }

 private:
  const EnvSpec* env_;
  TruncatedNormal exogenous_;
  TruncatedNormal instrument_;
  TruncatedNormal confounder_;
  double idiosyncratic_sd_;
};

inline ContextDraw draw_context(const EnvSpec& env, RngStream& rng) { return ContextSampler(env)(rng); }

inline double mean_reward(const EnvSpec& env, const VectorXd& v, int arm) {
  if (arm < 0 || arm >= env.arms)
    throw UsageError("arm " + std::to_string(arm) + " out of range [0, " + std::to_string(env.arms) + ")");
  if (v.size() != env.covariate_dim()) throw UsageError("covariate vector has wrong length");
  return v.dot(env.arm_coefficients(arm));
}

inline double realize_reward(const EnvSpec& env, const ContextDraw& draw, int arm) {
  return mean_reward(env, draw.v, arm) + draw.eps;
}

/// Lowest index attaining max_i v'alpha_i.
inline int oracle_arm(const EnvSpec& env, const VectorXd& v) {
  int best = 0;
  double best_value = mean_reward(env, v, 0);
  for (int i = 1; i < env.arms; ++i) {
    const double value = mean_reward(env, v, i);
    if (value > best_value) {
      best = i;
      best_value = value;
    }
  }
  return best;
}

struct ArmOutcome {
  int arm = 0;
  double reward = 0.0;
  int oracle_arm = 0;
  double regret_increment = 0.0;
};

inline ArmOutcome evaluate_pull(const EnvSpec& env, const ContextDraw& draw, int arm) {
  ArmOutcome out;
  out.arm = arm;
  out.reward = realize_reward(env, draw, arm);
  out.oracle_arm = oracle_arm(env, draw.v);
  out.regret_increment = mean_reward(env, draw.v, out.oracle_arm) - mean_reward(env, draw.v, arm);
  return out;
}

}  // namespace ivbandit
