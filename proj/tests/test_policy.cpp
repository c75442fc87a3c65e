#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "ivbandit/policy.hpp"

using namespace ivbandit;

namespace {

PolicyConfig iv(double theta, int horizon = 2000) { return {PolicyKind::IvBandit, theta, 50, 100, horizon, ""}; }

ReplicationResult run(const PolicyConfig& config, const EnvSpec& env, int rep, bool trajectory = true) {
  RunOptions options;
  options.keep_trajectory = trajectory;
  return run_replication(config, env, RngStream::derive(2024, {static_cast<std::uint64_t>(rep), 0}),
                         RngStream::derive(2024, {static_cast<std::uint64_t>(rep), 1}), options);
}

ArmEstimate estimate(const VectorXd& alpha, const MatrixXd& omega, double sigma) { return {alpha, omega, sigma}; }

}  // namespace

TEST(UcbScore, ZeroThetaIsGreedy) {
  const VectorXd v = Eigen::Vector3d(1, 2, 3);
  const auto e = estimate(Eigen::Vector3d(1, 1, 1), MatrixXd::Identity(3, 3), 2.0);
  EXPECT_EQ(ucb_score(v, e, 0.0, 5.0), 6.0);
}

TEST(UcbScore, HandEvaluatedBonus) {
  // sigma = 1, theta = 0.5, log(t - T1) = 2.
  const VectorXd v = Eigen::Vector2d(1, 0);
  MatrixXd o1 = MatrixXd::Zero(2, 2), o2 = MatrixXd::Zero(2, 2);
  o1(0, 0) = 0.04;
  o2(0, 0) = 0.01;
  const auto e1 = estimate(Eigen::Vector2d(3, 0), o1, 1.0);
  const auto e2 = estimate(Eigen::Vector2d(3, 0), o2, 1.0);
  EXPECT_NEAR(ucb_score(v, e1, 0.5, 2.0) - 3.0, 0.283, 5e-4);
  EXPECT_NEAR(ucb_score(v, e2, 0.5, 2.0) - 3.0, 0.141, 5e-4);
  EXPECT_NEAR(ucb_score(v, e1, 0.5, 2.0) - 3.0, std::sqrt(2 * 0.5 * 2 * 0.04), 1e-15);

  BanditState state;
  state.t = 50 + static_cast<int>(std::round(std::exp(2.0))) - 1;
  state.phase = Phase::PolicyImprovement;
  state.estimates = {e1, e2};
  PolicyConfig config{PolicyKind::IvBandit, 0.5, 50, 50, 1000, ""};
  RngStream rng(1);
  EXPECT_EQ(select_arm(state, config, v, rng), 0);
}

TEST(UcbScore, BonusBreaksTie) {
  const VectorXd v = Eigen::Vector2d(1, 1);
  MatrixXd o1 = MatrixXd::Zero(2, 2), o2 = 0.01 * MatrixXd::Identity(2, 2);
  BanditState state;
  state.t = 200;
  state.estimates = {estimate(Eigen::Vector2d(2.5, 2.5), o1, 1.0), estimate(Eigen::Vector2d(2.5, 2.5), o2, 1.0)};
  PolicyConfig config{PolicyKind::NaiveIvUcb, 0.5, 50, 100, 1000, ""};
  RngStream rng(1);
  EXPECT_EQ(select_arm(state, config, v, rng), 1);
  config.theta = 0.0;
  EXPECT_EQ(select_arm(state, config, v, rng), 0);  // exact tie, lowest index
}

TEST(UcbScore, NegativeQuadraticForm) {
  const VectorXd v = Eigen::Vector2d(1, 0);
  MatrixXd o = MatrixXd::Zero(2, 2);
  o(0, 0) = -1e-12;
  EXPECT_NO_THROW(ucb_score(v, estimate(Eigen::Vector2d(1, 0), o, 1.0), 0.5, 1.0));
  o(0, 0) = -1e-3;
  EXPECT_THROW(ucb_score(v, estimate(Eigen::Vector2d(1, 0), o, 1.0), 0.5, 1.0), NumericalError);
}

TEST(UcbScore, FirstPostRandomizationPeriodHasNoBonus) {
  // log(1) = 0 at t - T1 = 1.
  const VectorXd v = Eigen::Vector2d(1, 1);
  BanditState state;
  state.t = 50;
  state.estimates = {estimate(Eigen::Vector2d(1, 1), MatrixXd::Zero(2, 2), 1.0),
                     estimate(Eigen::Vector2d(1, 0.9), 100.0 * MatrixXd::Identity(2, 2), 1.0)};
  PolicyConfig config{PolicyKind::OlsUcb, 5.0, 50, 100, 1000, ""};
  RngStream rng(1);
  EXPECT_EQ(select_arm(state, config, v, rng), 0);
  state.t = 51;
  EXPECT_EQ(select_arm(state, config, v, rng), 1);
}

TEST(SelectArm, GreedyPhaseThreeMatchesArgmaxForAnyInput) {
  std::srand(4);
  RngStream rng(1);
  PolicyConfig config = iv(0.0);
  for (int rep = 0; rep < 500; ++rep) {
    BanditState state;
    state.t = 100 + rep;
    for (int i = 0; i < 3; ++i) {
      const MatrixXd a = MatrixXd::Random(3, 3);
      state.estimates.push_back(estimate(VectorXd::Random(3), a * a.transpose(), 1.0 + i));
    }
    const VectorXd v = VectorXd::Random(3);
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (v.dot(state.estimates[i].alpha) > v.dot(state.estimates[best].alpha)) best = i;
    ASSERT_EQ(select_arm(state, config, v, rng), best);
  }
}

TEST(SelectArm, RandomizationPhaseIsUniform) {
  BanditState state;
  state.estimates.resize(2);
  RngStream rng(77);
  const PolicyConfig config{PolicyKind::IvBandit, 0.0, 100000, 100000, 200000, ""};
  int ones = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ones += select_arm(state, config, Eigen::Vector3d(1, 1, 1), rng);
  EXPECT_NEAR(ones / static_cast<double>(n), 0.5, 3.0 * 0.5 / std::sqrt(n));
}

TEST(Step, PhaseBoundariesAndFrozenCoefficients) {
  const EnvSpec env = EnvSpec::benchmark();
  const PolicyConfig config = iv(0.5, 400);
  BanditState state = init_state(config, env);
  RngStream ctx(5), pol(6);
  const ContextSampler sampler(env);
  std::vector<ArmEstimate> frozen;
  for (int t = 1; t <= config.horizon; ++t) {
    step(state, config, sampler(ctx), env, pol);
    long arm_n = 0;
    for (const auto& m : state.arm_moments) arm_n += m.n;
    if (t <= config.t1) {
      EXPECT_EQ(state.joint_moments.n, 0);
      EXPECT_EQ(arm_n, t);
    } else {
      EXPECT_EQ(state.joint_moments.n, t - config.t1);
      EXPECT_EQ(arm_n, config.t1);
    }
    if (t < config.t1) EXPECT_EQ(state.phase, Phase::CoefficientStabilization);
    if (t == config.t1) {
      EXPECT_EQ(state.phase, Phase::CovarianceStabilization);
      frozen = state.estimates;
      EXPECT_GT(state.sigma_hat, 0.0);
    }
    if (t > config.t1 && t <= config.t2) {
      EXPECT_FALSE(state.joint_fit.has_value());
      for (int i = 0; i < 2; ++i) EXPECT_EQ(state.estimates[i].alpha, frozen[i].alpha);
    }
    if (t >= config.t2) EXPECT_EQ(state.phase, Phase::PolicyImprovement);
    if (t > config.t2) {
      ASSERT_TRUE(state.joint_fit.has_value());
      EXPECT_EQ(state.estimates[1].alpha, state.joint_fit->alpha_hat.segment(3, 3));
      EXPECT_EQ(state.estimates[1].omega, state.joint_fit->omega_hat.block(3, 3, 3, 3));
      EXPECT_EQ(state.sigma_hat, state.joint_fit->sigma_hat);
    }
  }
}

TEST(Step, PooledPhaseOneSigma) {
  const EnvSpec env = EnvSpec::benchmark();
  const PolicyConfig config = iv(0.0, 200);
  BanditState state = init_state(config, env);
  RngStream ctx(8), pol(9);
  const ContextSampler sampler(env);
  for (int t = 1; t <= config.t1; ++t) step(state, config, sampler(ctx), env, pol);
  double ssr = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double s = residual_sd(state.arm_moments[i], state.phase1_fits[i].alpha_hat);
    ssr += s * s * state.arm_moments[i].n;
  }
  EXPECT_NEAR(state.sigma_hat, std::sqrt(ssr / config.t1), 1e-12);
}

TEST(Step, GreedySigmaStaysAtPhaseOneValue) {
  const EnvSpec env = EnvSpec::benchmark();
  const PolicyConfig config = iv(0.0, 300);
  BanditState state = init_state(config, env);
  RngStream ctx(10), pol(11);
  const ContextSampler sampler(env);
  double seeded = 0.0;
  for (int t = 1; t <= config.horizon; ++t) {
    step(state, config, sampler(ctx), env, pol);
    if (t == config.t1) seeded = state.sigma_hat;
  }
  EXPECT_EQ(state.sigma_hat, seeded);
  // Inference still uses current residuals.
  const auto term = terminal_fit(state, config);
  ASSERT_TRUE(term.has_value());
  EXPECT_EQ(term->fit.sigma_hat, residual_sd(state.joint_moments, state.joint_fit->alpha_hat));
  EXPECT_EQ(term->n_eff, config.horizon - config.t1);
}

TEST(Step, PastHorizonIsUsageError) {
  const EnvSpec env = EnvSpec::benchmark();
  const PolicyConfig config{PolicyKind::Rtc, 0.0, 50, 100, 60, ""};
  BanditState state = init_state(config, env);
  RngStream ctx(1), pol(2);
  for (int t = 0; t < 60; ++t) step(state, config, draw_context(env, ctx), env, pol);
  EXPECT_THROW(step(state, config, draw_context(env, ctx), env, pol), UsageError);
}

TEST(Replication, BitIdenticalRerun) {
  const EnvSpec env = EnvSpec::benchmark();
  for (const auto& config : {iv(0.0), iv(0.5), PolicyConfig{PolicyKind::NaiveIvUcb, 0.5, 50, 100, 2000, ""}}) {
    const auto a = run(config, env, 3);
    const auto b = run(config, env, 3);
    ASSERT_TRUE(a.ok) << a.failure;
    EXPECT_EQ(a.arms, b.arms);
    EXPECT_EQ(a.cumulative_regret, b.cumulative_regret);
    EXPECT_EQ(a.draw_checksum, b.draw_checksum);
    EXPECT_EQ(a.terminal->fit.alpha_hat, b.terminal->fit.alpha_hat);
  }
}

TEST(Replication, OracleHasZeroRegret) {
  const EnvSpec env = EnvSpec::benchmark();
  const auto r = run({PolicyKind::Oracle, 0.0, 50, 100, 3000, ""}, env, 1);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.total_regret, 0.0);
  EXPECT_EQ(r.wrong_pulls, 0);
  for (double c : r.cumulative_regret) EXPECT_EQ(c, 0.0);
}

TEST(Replication, NoiselessRewardsAreLearnedExactly) {
  EnvSpec env = EnvSpec::benchmark();
  env.structure.eta_in_noise = 0.0;
  env.structure.idiosyncratic_variance = 0.0;
  for (double theta : {0.0, 0.5}) {
    const PolicyConfig config = iv(theta, 1500);
    BanditState state = init_state(config, env);
    RngStream ctx = RngStream::derive(4, {0}), pol = RngStream::derive(4, {1});
    const ContextSampler sampler(env);
    for (int t = 1; t <= config.horizon; ++t) {
      const auto draw = sampler(ctx);
      const auto out = step(state, config, draw, env, pol);
      if (t == config.t1)
        for (int i = 0; i < 2; ++i)
          EXPECT_LT((state.phase1_fits[i].alpha_hat - env.arm_coefficients(i)).cwiseAbs().maxCoeff(), 1e-8);
      // Off the indifference plane the learned arm is the oracle arm.
      const double gap = std::abs(mean_reward(env, draw.v, 0) - mean_reward(env, draw.v, 1));
      if (t > config.t1 && gap > 1e-6) EXPECT_EQ(out.regret_increment, 0.0) << "t=" << t;
    }
  }
}

TEST(Replication, RtcWithLongRandomizationCommitsToTruth) {
  EnvSpec env = EnvSpec::benchmark();
  env.structure.eta_in_noise = 0.0;  // exogenous noise
  const PolicyConfig config{PolicyKind::Rtc, 0.0, 4000, 4000, 6000, ""};
  const auto r = run(config, env, 2);
  ASSERT_TRUE(r.ok) << r.failure;
  long wrong = 0;
  double regret_after = 0.0;
  for (int t = config.t1; t < config.horizon; ++t) {
    wrong += r.regret_increments[t] > 0.0 ? 1 : 0;
    regret_after += r.regret_increments[t];
  }
  EXPECT_LT(wrong, 20);
  const auto est = r.terminal->fit.alpha_hat;
  EXPECT_LT((est - env.alpha).cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LT(regret_after, 2.0);
}

TEST(Replication, PairedDrawsAcrossAlgorithms) {
  const EnvSpec env = EnvSpec::benchmark();
  const std::vector<PolicyConfig> configs{iv(0.0), iv(0.5), {PolicyKind::NaiveIvUcb, 0.5, 50, 100, 2000, ""},
                                          {PolicyKind::OlsUcb, 0.5, 50, 100, 2000, ""},
                                          {PolicyKind::Rtc, 0.0, 50, 100, 2000, ""}};
  std::vector<ReplicationResult> results;
  for (const auto& c : configs) results.push_back(run(c, env, 5));
  for (const auto& r : results) {
    EXPECT_EQ(r.draw_checksum, results[0].draw_checksum);
    for (int t = 0; t < 50; ++t) EXPECT_EQ(r.arms[t], results[0].arms[t]);
  }
  EXPECT_NE(run(configs[0], env, 6).draw_checksum, results[0].draw_checksum);
}

TEST(Replication, CumulativeRegretIsMonotone) {
  const EnvSpec env = EnvSpec::benchmark();
  for (int rep = 0; rep < 3; ++rep) {
    for (const auto& config : {iv(0.0), iv(0.5), PolicyConfig{PolicyKind::OlsUcb, 0.5, 50, 100, 2000, ""}}) {
      const auto r = run(config, env, rep);
      ASSERT_TRUE(r.ok);
      for (std::size_t k = 1; k < r.cumulative_regret.size(); ++k)
        EXPECT_GE(r.cumulative_regret[k], r.cumulative_regret[k - 1]);
      for (double inc : r.regret_increments) EXPECT_GE(inc, 0.0);
      EXPECT_EQ(r.record_t.back(), config.horizon);
    }
  }
}

TEST(Replication, RecordStrideThinsCurve) {
  const EnvSpec env = EnvSpec::benchmark();
  RunOptions options;
  options.record_stride = 7;
  const auto r = run_replication(iv(0.0, 200), env, RngStream(1), RngStream(2), options);
  ASSERT_EQ(r.record_t.front(), 7);
  EXPECT_EQ(r.record_t.back(), 200);
  EXPECT_EQ(r.record_t.size(), 200u / 7 + 1);
}

TEST(Replication, TooShortRandomizationFailsAsUnderSampled) {
  const EnvSpec env = EnvSpec::benchmark();
  const PolicyConfig config{PolicyKind::IvBandit, 0.0, 10, 20, 200, ""};
  const auto r = run(config, env, 1);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.failure.find("arm under-sampled"), std::string::npos);
  EXPECT_EQ(r.failed_at, 10);
  EXPECT_FALSE(r.inference.has_value());
}

TEST(Replication, BaselineRunnerRejectsIvBandit) {
  const EnvSpec env = EnvSpec::benchmark();
  EXPECT_THROW(run_baseline(iv(0.0), env, RngStream(1), RngStream(2)), UsageError);
  EXPECT_NO_THROW(run_baseline({PolicyKind::Rtc, 0.0, 50, 100, 100, ""}, env, RngStream(1), RngStream(2)));
}

TEST(Replication, BaselineInferenceUsesPerArmCovariance) {
  const EnvSpec env = EnvSpec::benchmark();
  const auto r = run({PolicyKind::OlsUcb, 0.5, 50, 100, 2000, ""}, env, 1);
  ASSERT_TRUE(r.ok);
  const auto& fit = r.terminal->fit;
  EXPECT_EQ(fit.sigma_hat, 1.0);
  EXPECT_EQ(fit.omega_hat.block(0, 3, 3, 3), MatrixXd::Zero(3, 3));
  EXPECT_EQ(r.terminal->n_eff, 2000);
}

TEST(PolicyConfig, Validation) {
  EXPECT_THROW((PolicyConfig{PolicyKind::IvBandit, -0.1, 50, 100, 200, ""}.validate()), ConfigError);
  EXPECT_THROW((PolicyConfig{PolicyKind::IvBandit, 0.0, 50, 40, 200, ""}.validate()), ConfigError);
  EXPECT_THROW((PolicyConfig{PolicyKind::IvBandit, 0.0, 50, 300, 200, ""}.validate()), ConfigError);
  EXPECT_THROW((PolicyConfig{PolicyKind::Rtc, 0.0, 0, 100, 200, ""}.validate()), ConfigError);
  EXPECT_NO_THROW((PolicyConfig{PolicyKind::Rtc, 0.0, 50, 10, 200, ""}.validate()));
  EXPECT_EQ(parse_policy_kind("NAIVE_IV_UCB"), PolicyKind::NaiveIvUcb);
  EXPECT_THROW(parse_policy_kind("LINUCB"), ConfigError);
  EXPECT_EQ(iv(0.0).name(), "IV-Greedy");
  EXPECT_EQ(iv(0.5).name(), "IV-UCB");
}
