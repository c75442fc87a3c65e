#pragma once

// Arm-selection policies: the three-phase IV bandit (greedy for theta = 0,
// UCB for theta > 0) and the comparison baselines.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivbandit/dgp.hpp"
#include "ivbandit/errors.hpp"
#include "ivbandit/estimation.hpp"
#include "ivbandit/inference.hpp"
#include "ivbandit/rng.hpp"

namespace ivbandit {

enum class PolicyKind {
  IvBandit,    // randomize, freeze, then joint 2SLS with optional UCB bonus
  NaiveIvUcb,  // arm-specific 2SLS + UCB
  OlsUcb,      // arm-specific OLS + UCB
  Rtc,         // randomize then commit to the arm-specific 2SLS estimate
  Oracle,      // knows the true coefficients; regret reference
};

inline std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::IvBandit: return "IV_BANDIT";
    case PolicyKind::NaiveIvUcb: return "NAIVE_IV_UCB";
    case PolicyKind::OlsUcb: return "OLS_UCB";
    case PolicyKind::Rtc: return "RTC";
    case PolicyKind::Oracle: return "ORACLE";
  }
  return "UNKNOWN";
}

inline PolicyKind parse_policy_kind(const std::string& name) {
  for (PolicyKind k : {PolicyKind::IvBandit, PolicyKind::NaiveIvUcb, PolicyKind::OlsUcb, PolicyKind::Rtc,
                       PolicyKind::Oracle})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown policy kind '" + name + "'");
}

struct PolicyConfig {
  PolicyKind kind = PolicyKind::IvBandit;
  double theta = 0.0;
  int t1 = 50;
  int t2 = 100;  // IV_BANDIT only
  int horizon = 20000;
  std::string label;

  std::string name() const {
    if (!label.empty()) return label;
    switch (kind) {
      case PolicyKind::IvBandit: return theta > 0.0 ? "IV-UCB" : "IV-Greedy";
      case PolicyKind::NaiveIvUcb: return "Naive-IV-UCB";
      case PolicyKind::OlsUcb: return "OLS-UCB";
      case PolicyKind::Rtc: return "RTC";
      case PolicyKind::Oracle: return "Oracle";
    }
    return "unknown";
  }

  void validate() const {
    if (!(theta >= 0.0)) throw ConfigError("theta must be >= 0");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (kind == PolicyKind::Oracle) return;
    if (t1 < 1) throw ConfigError("T1 must be >= 1");
    if (t1 > horizon) throw ConfigError("T1 must not exceed the horizon");
    if (kind == PolicyKind::IvBandit && (t2 < t1 || t2 > horizon))
      throw ConfigError("IV bandit needs T1 <= T2 <= T");
  }
};

enum class Phase { CoefficientStabilization, CovarianceStabilization, PolicyImprovement };

/// What the selection rule uses for one arm: coefficients, the arm's p x p
/// block of the inverse Gram, and the residual scale.
struct ArmEstimate {
  VectorXd alpha;
  MatrixXd omega;
  double sigma = 0.0;
};

struct BanditState {
  int t = 0;  // completed periods
  Phase phase = Phase::CoefficientStabilization;
  std::vector<MomentState> arm_moments;
  MomentState joint_moments;  // periods T1+1..t, stacked regressors
  std::vector<TslsFit> phase1_fits;
  std::vector<ArmEstimate> estimates;
  std::optional<TslsFit> joint_fit;
  double sigma_hat = 0.0;  // shared residual scale of the IV bandit
};

// Small randomized samples often leave an indicator instrument constant or
// collinear with its interaction, so policies project onto col(Z) by default.
struct PolicyOptions {
  TslsOptions estimation{.iv_rank = IvRankPolicy::ColumnSpace};
};

inline BanditState init_state(const PolicyConfig& config, const EnvSpec& env) {
  config.validate();
  env.validate();
  const int p = env.covariate_dim();
  const int q = env.iv_dim();
  BanditState state;
  state.arm_moments.assign(static_cast<std::size_t>(env.arms), MomentState(p, q));
  if (config.kind == PolicyKind::IvBandit) state.joint_moments = MomentState(env.coefficient_dim(), q);
  state.estimates.resize(static_cast<std::size_t>(env.arms));
  if (config.kind == PolicyKind::Oracle) {
    state.phase = Phase::PolicyImprovement;
    for (int i = 0; i < env.arms; ++i) state.estimates[static_cast<std::size_t>(i)].alpha = env.arm_coefficients(i);
  }
  return state;
}

/// v'alpha + sigma * sqrt(2 theta log_term * v'Omega v). Small negative
/// quadratic forms from rounding are clamped to zero.
inline double ucb_score(const VectorXd& v, const ArmEstimate& est, double theta, double log_term) {
  const double mean = v.dot(est.alpha);
  if (theta == 0.0 || log_term == 0.0) return mean;
  double quad = v.dot(est.omega * v);
  if (quad < -1e-9) throw NumericalError("UCB: v' Omega v is negative (" + std::to_string(quad) + ")");
  quad = std::max(quad, 0.0);
  return mean + est.sigma * std::sqrt(2.0 * theta * log_term * quad);
}

namespace detail {

inline int argmax_greedy(std::span<const ArmEstimate> estimates, const VectorXd& v) {
  int best = 0;
  double best_score = v.dot(estimates[0].alpha);
  for (std::size_t i = 1; i < estimates.size(); ++i) {
    const double s = v.dot(estimates[i].alpha);
    if (s > best_score) {
      best = static_cast<int>(i);
      best_score = s;
    }
  }
  return best;
}

inline int argmax_ucb(std::span<const ArmEstimate> estimates, const VectorXd& v, double theta, double log_term) {
  int best = 0;
  double best_score = ucb_score(v, estimates[0], theta, log_term);
  for (std::size_t i = 1; i < estimates.size(); ++i) {
    const double s = ucb_score(v, estimates[i], theta, log_term);
    if (s > best_score) {
      best = static_cast<int>(i);
      best_score = s;
    }
  }
  return best;
}

}  // namespace detail

/**
 * Chooses the arm for period state.t + 1.
 *
 * Periods 1..T1 pick uniformly at random (the only place `rng` is used).
 * Afterwards the IV bandit is greedy on the frozen phase-one estimate through
 * T2, then applies the UCB rule with log(t - T1). The UCB baselines apply
 * the same rule from T1 + 1 on, RTC stays greedy. Ties go to the lowest index.
 */
inline int select_arm(const BanditState& state, const PolicyConfig& config, const VectorXd& v, RngStream& rng) {
  const int period = state.t + 1;
  const int arms = static_cast<int>(state.estimates.size());
  const std::span<const ArmEstimate> estimates(state.estimates);
  switch (config.kind) {
    case PolicyKind::Oracle:
      return detail::argmax_greedy(estimates, v);
    case PolicyKind::Rtc:
      if (period <= config.t1) return rng.uniform_index(arms);
      return detail::argmax_greedy(estimates, v);
    case PolicyKind::IvBandit:
      if (period <= config.t1) return rng.uniform_index(arms);
      if (period <= config.t2) return detail::argmax_greedy(estimates, v);
      return detail::argmax_ucb(estimates, v, config.theta, std::log(static_cast<double>(period - config.t1)));
    case PolicyKind::NaiveIvUcb:
    case PolicyKind::OlsUcb:
      if (period <= config.t1) return rng.uniform_index(arms);
      return detail::argmax_ucb(estimates, v, config.theta, std::log(static_cast<double>(period - config.t1)));
  }
  throw UsageError("select_arm: unknown policy kind");
}

namespace detail {

inline ArmEstimate arm_estimate(const TslsFit& fit) { return ArmEstimate{fit.alpha_hat, fit.omega_hat, fit.sigma_hat}; }

// Arm-specific fits on the first T1 periods.
inline void fit_phase_one(BanditState& state, const PolicyConfig& config, const PolicyOptions& options) {
  const auto arms = state.arm_moments.size();
  state.phase1_fits.clear();
  for (std::size_t i = 0; i < arms; ++i) {
    const MomentState& m = state.arm_moments[i];
    if (config.kind == PolicyKind::OlsUcb) {
      if (m.n < m.regressor_dim()) throw ArmUnderSampled(static_cast<int>(i), m.n, m.regressor_dim());
      state.phase1_fits.push_back(ols(m, options.estimation));
    } else {
      state.phase1_fits.push_back(arm_specific_tsls(state.arm_moments, static_cast<int>(i), options.estimation));
    }
    state.estimates[i] = arm_estimate(state.phase1_fits.back());
  }
  if (config.kind == PolicyKind::IvBandit) {
    state.sigma_hat = pooled_residual_sd(state.arm_moments, state.phase1_fits, config.t1);
    for (auto& e : state.estimates) e.sigma = state.sigma_hat;
  }
}

}  // namespace detail

/**
 * Runs one period: selects an arm, realizes the reward, and updates the
 * estimates as the policy prescribes. Estimation failures (under-sampled arm,
 * singular Gram matrices) propagate as exceptions.
 */
inline ArmOutcome step(BanditState& state, const PolicyConfig& config, const ContextDraw& draw, const EnvSpec& env,
                       RngStream& rng, const PolicyOptions& options = {}) {
  if (state.t >= config.horizon) throw UsageError("step: horizon already reached");
  const int arm = select_arm(state, config, draw.v, rng);
  const ArmOutcome outcome = evaluate_pull(env, draw, arm);
  const int period = state.t + 1;
  const auto a = static_cast<std::size_t>(arm);

  switch (config.kind) {
    case PolicyKind::Oracle:
      break;
    case PolicyKind::IvBandit:
      if (period <= config.t1) {
        state.arm_moments[a].update(draw.v, draw.z, outcome.reward);
      } else {
        state.joint_moments.update(stacked_regressor(draw.v, arm, env.arms), draw.z, outcome.reward);
      }
      break;
    case PolicyKind::Rtc:
      if (period <= config.t1) state.arm_moments[a].update(draw.v, draw.z, outcome.reward);
      break;
    case PolicyKind::NaiveIvUcb:
    case PolicyKind::OlsUcb:
      state.arm_moments[a].update(draw.v, draw.z, outcome.reward);
      break;
  }
  state.t = period;
  if (config.kind == PolicyKind::Oracle) return outcome;

  if (period == config.t1) {
    detail::fit_phase_one(state, config, options);
    state.phase = Phase::PolicyImprovement;
    if (config.kind == PolicyKind::IvBandit && config.t2 > config.t1) state.phase = Phase::CovarianceStabilization;
    return outcome;
  }
  if (period < config.t1) return outcome;

  switch (config.kind) {
    case PolicyKind::IvBandit:
      if (period == config.t2) state.phase = Phase::PolicyImprovement;
      if (period > config.t2) {
        const int p = env.covariate_dim();
        state.joint_fit = tsls(state.joint_moments, options.estimation);
        if (config.theta > 0.0) state.sigma_hat = state.joint_fit->sigma_hat;
        for (int i = 0; i < env.arms; ++i) {
          auto& e = state.estimates[static_cast<std::size_t>(i)];
          e.alpha = state.joint_fit->alpha_hat.segment(i * p, p);
          e.omega = state.joint_fit->omega_hat.block(i * p, i * p, p, p);
          e.sigma = state.sigma_hat;
        }
      }
      break;
    case PolicyKind::NaiveIvUcb:
      state.estimates[a] = detail::arm_estimate(tsls(state.arm_moments[a], options.estimation));
      break;
    case PolicyKind::OlsUcb:
      state.estimates[a] = detail::arm_estimate(ols(state.arm_moments[a], options.estimation));
      break;
    case PolicyKind::Rtc:
    case PolicyKind::Oracle:
      break;
  }
  return outcome;
}

/// Concatenates per-arm estimates into one fit whose omega is the
/// block-diagonal covariance diag(sigma_i^2 Omega_i); sigma_hat is 1.
inline TslsFit stack_arm_estimates(std::span<const ArmEstimate> estimates) {
  Eigen::Index d = 0;
  for (const auto& e : estimates) d += e.alpha.size();
  TslsFit fit;
  fit.alpha_hat = VectorXd::Zero(d);
  fit.omega_hat = MatrixXd::Zero(d, d);
  fit.sigma_hat = 1.0;
  Eigen::Index offset = 0;
  for (const auto& e : estimates) {
    const Eigen::Index p = e.alpha.size();
    fit.alpha_hat.segment(offset, p) = e.alpha;
    fit.omega_hat.block(offset, offset, p, p) = e.sigma * e.sigma * e.omega;
    offset += p;
  }
  return fit;
}

struct TerminalFit {
  TslsFit fit;
  long n_eff = 0;
};

/**
 * The estimate reported at the end of a run. For the IV bandit this is the
 * joint fit on the window (T1, t]; its sigma_hat is always recomputed from
 * the current residuals, whatever theta is. Baselines report their stacked
 * arm-specific fits.
 */
inline std::optional<TerminalFit> terminal_fit(const BanditState& state, const PolicyConfig& config) {
  if (config.kind == PolicyKind::Oracle || state.t < config.t1) return std::nullopt;
  if (config.kind == PolicyKind::IvBandit && state.joint_fit) {
    TerminalFit out{*state.joint_fit, state.joint_moments.n};
    out.fit.sigma_hat = residual_sd(state.joint_moments, out.fit.alpha_hat);
    return out;
  }
  long n = 0;
  for (const auto& m : state.arm_moments) n += m.n;
  if (config.kind == PolicyKind::IvBandit) {
    std::vector<ArmEstimate> frozen;
    for (const auto& f : state.phase1_fits) frozen.push_back(detail::arm_estimate(f));
    return TerminalFit{stack_arm_estimates(frozen), n};
  }
  return TerminalFit{stack_arm_estimates(state.estimates), n};
}

struct ReplicationResult {
  std::string algorithm;
  int replication = 0;
  bool ok = true;
  std::string failure;
  int failed_at = 0;

  std::vector<int> record_t;                // periods at which cumulative regret was recorded
  std::vector<double> cumulative_regret;
  double total_regret = 0.0;
  long wrong_pulls = 0;
  std::uint64_t draw_checksum = 0;

  // Full per-period trajectory, only when requested.
  std::vector<int> arms;
  std::vector<double> regret_increments;

  std::optional<TerminalFit> terminal;
  std::optional<InferenceReport> inference;
};

struct RunOptions {
  int record_stride = 10;
  double ci_level = 0.95;
  bool keep_trajectory = false;
  PolicyOptions policy;
};

namespace detail {

inline void fnv1a(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
}

inline void hash_draw(std::uint64_t& h, const ContextDraw& draw) {
  fnv1a(h, draw.v.data(), sizeof(double) * static_cast<std::size_t>(draw.v.size()));
  fnv1a(h, draw.z.data(), sizeof(double) * static_cast<std::size_t>(draw.z.size()));
  fnv1a(h, &draw.eps, sizeof(double));
}

}  // namespace detail

/**
 * One replication of `config` on `env`. Contexts come from `context_rng` and
 * the randomization phase from `policy_rng`; giving every algorithm the same
 * two streams makes their runs paired. Estimation failures are caught and
 * reported in the result rather than thrown.
 */
inline ReplicationResult run_replication(const PolicyConfig& config, const EnvSpec& env, RngStream context_rng,
                                         RngStream policy_rng, const RunOptions& options = {}) {
  if (options.record_stride < 1) throw ConfigError("record_stride must be >= 1");
  ReplicationResult result;
  result.algorithm = config.name();
  result.draw_checksum = 0xcbf29ce484222325ULL;
  BanditState state = init_state(config, env);
  const ContextSampler sampler(env);
  if (options.keep_trajectory) {
    result.arms.reserve(static_cast<std::size_t>(config.horizon));
    result.regret_increments.reserve(static_cast<std::size_t>(config.horizon));
  }

  double cumulative = 0.0;
  try {
    for (int t = 1; t <= config.horizon; ++t) {
      const ContextDraw draw = sampler(context_rng);
      detail::hash_draw(result.draw_checksum, draw);
      const ArmOutcome out = step(state, config, draw, env, policy_rng, options.policy);
      cumulative += out.regret_increment;
      if (out.regret_increment > 0.0) ++result.wrong_pulls;
      if (options.keep_trajectory) {
        result.arms.push_back(out.arm);
        result.regret_increments.push_back(out.regret_increment);
      }
      if (t % options.record_stride == 0 || t == config.horizon) {
        result.record_t.push_back(t);
        result.cumulative_regret.push_back(cumulative);
      }
    }
    result.total_regret = cumulative;
    result.terminal = terminal_fit(state, config);
    if (result.terminal)
      result.inference = build_report(result.terminal->fit, result.terminal->n_eff, options.ci_level, env.alpha);
  } catch (const ArmUnderSampled& e) {
    result.ok = false;
    result.failure = e.what();
  } catch (const NumericalError& e) {
    result.ok = false;
    result.failure = e.what();
  }
  if (!result.ok) result.failed_at = state.t;
  result.total_regret = cumulative;
  return result;
}

/// Runs a comparison baseline (anything but the IV bandit).
inline ReplicationResult run_baseline(const PolicyConfig& config, const EnvSpec& env, RngStream context_rng,
                                      RngStream policy_rng, const RunOptions& options = {}) {
  if (config.kind == PolicyKind::IvBandit) throw UsageError("run_baseline: IV_BANDIT is not a baseline");
  return run_replication(config, env, std::move(context_rng), std::move(policy_rng), options);
}

}  // namespace ivbandit
