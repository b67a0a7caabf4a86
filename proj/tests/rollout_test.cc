#include <cmath>

#include <gtest/gtest.h>

#include "rpo/rollout.h"

namespace rpo {
namespace {

SquashedNormalPolicy LinearPolicy(const DiffEnv& env, double mu, double log_sigma) {
  PolicyOptions o;
  o.mlp.hidden = {};
  SquashedNormalPolicy p(env.state_dim(), env.bounds(), o);
  Vector theta = Vector::Zero(p.NumParameters());
  theta(theta.size() - 2) = mu;
  theta(theta.size() - 1) = log_sigma;
  p.Assign(theta);
  return p;
}

SquashedNormalPolicy NetworkPolicy(const DiffEnv& env, std::uint64_t seed) {
  PolicyOptions o;
  o.mlp.hidden = {16, 16};
  o.mlp.head_gain = 0.5;
  SquashedNormalPolicy p(env.state_dim(), env.bounds(), o);
  Rng rng(seed, 7);
  p.Initialize(rng);
  return p;
}

DoubleCritic Critics(const DiffEnv& env, std::uint64_t seed) {
  MlpOptions o;
  o.hidden = {16};
  o.head_gain = 1.0;
  DoubleCritic c(env.state_dim(), o);
  c.Initialize(Rng(seed, 8), Rng(seed, 9));
  return c;
}

TEST(Rollout, BanditActionGradient) {
  const QuadraticBandit env;
  const SquashedNormalPolicy policy = LinearPolicy(env, 0.1, std::log(0.5));
  Rng reset(1, 0), noise(1, 1);
  EnvBatch batch = StartBatch(env, 8, reset);
  RolloutOptions o;
  o.horizon = 4;
  const RolloutBuffer buf = Collect(env, policy, nullptr, batch, o, noise, reset);
  ASSERT_EQ(buf.action_grads.cols(), 32);
  for (int c = 0; c < buf.size(); ++c) {
    EXPECT_NEAR(buf.action_grads(0, c), -2.0 * (buf.actions(0, c) - 0.3), 1e-15);
    EXPECT_TRUE(buf.done[c]);
    EXPECT_FALSE(buf.bootstrap[c]);
  }
  EXPECT_EQ(buf.completed_returns.size(), 32u);
}

TEST(Rollout, ChainActionGradientsByHand) {
  const ChainQuadratic env;
  const SquashedNormalPolicy policy = LinearPolicy(env, -0.2, std::log(0.4));
  for (const double gamma : {0.0, 0.9}) {
    Rng reset(2, 0), noise(2, 1);
    EnvBatch batch = StartBatch(env, 5, reset);
    RolloutOptions o;
    o.horizon = 2;
    o.gamma = gamma;
    const RolloutBuffer buf = Collect(env, policy, nullptr, batch, o, noise, reset);
    for (int e = 0; e < 5; ++e) {
      const double a0 = buf.actions(0, buf.column(0, e));
      const double a1 = buf.actions(0, buf.column(1, e));
      const double s1 = 0.9 + 0.5 * a0;
      EXPECT_NEAR(buf.action_grads(0, buf.column(0, e)), -0.2 * a0 - gamma * s1, 1e-15);
      EXPECT_NEAR(buf.action_grads(0, buf.column(1, e)), -gamma * 0.2 * a1, 1e-15);
      EXPECT_NEAR(buf.discounts(0, buf.column(1, e)), gamma, 0.0);
    }
  }
}

TEST(Rollout, OneSweepPerCollection) {
  const DoubleIntegrator env;
  const SquashedNormalPolicy policy = NetworkPolicy(env, 3);
  const DoubleCritic critics = Critics(env, 3);
  Rng reset(3, 0), noise(3, 1);
  EnvBatch batch = StartBatch(env, 4, reset);
  RolloutOptions o;
  o.horizon = 8;
  o.policy_gradient = true;
  o.temperature = 0.1;
  const RolloutBuffer buf = Collect(env, policy, &critics, batch, o, noise, reset);
  EXPECT_EQ(buf.sweeps, 1);
  EXPECT_EQ(buf.policy_gradient.size(), policy.NumParameters());
}

TEST(Rollout, TimeLimitEndsInsideTheWindowAreBootstrapped) {
  DoubleIntegratorParams params;
  params.episode_length = 5;
  const DoubleIntegrator env(params);
  const SquashedNormalPolicy policy = NetworkPolicy(env, 9);
  const DoubleCritic critics = Critics(env, 9);
  Rng reset(9, 0), noise(9, 1);
  EnvBatch batch = StartBatch(env, 3, reset);
  RolloutOptions o;
  o.horizon = 12;
  o.gamma = 0.9;
  const RolloutBuffer buf = Collect(env, policy, &critics, batch, o, noise, reset);
  EXPECT_EQ(buf.completed_returns.size(), 6u);
  EXPECT_EQ(buf.replay.resets.size(), 6u);
  for (int e = 0; e < 3; ++e) {
    EXPECT_TRUE(buf.done[buf.column(4, e)]);
    EXPECT_TRUE(buf.bootstrap[buf.column(4, e)]);
    // the discount restarts with the next episode
    EXPECT_EQ(buf.discounts(0, buf.column(5, e)), 1.0);
    EXPECT_EQ(buf.states.col(buf.column(5, e)), buf.replay.resets[e]);
  }
  // objective rebuilt by hand: per-segment discounted rewards plus bootstraps
  double total = 0.0;
  for (int e = 0; e < 3; ++e) {
    double disc = 1.0;
    for (int t = 0; t < 12; ++t) {
      const int c = buf.column(t, e);
      total += disc * buf.rewards(0, c);
      const bool end = buf.done[c] || t == 11;
      if (end) total += disc * o.gamma * critics.VBar(buf.next_states.col(c))(0, 0);
      disc = buf.done[c] ? 1.0 : disc * o.gamma;
    }
  }
  EXPECT_NEAR(buf.objective, total / 3.0, 1e-12);
  const double h = 1e-6;
  const double up = ReplayObjective(env, policy, &critics, buf.replay, o, ActionPerturbation{3, 1, 0, h});
  const double down =
      ReplayObjective(env, policy, &critics, buf.replay, o, ActionPerturbation{3, 1, 0, -h});
  EXPECT_NEAR(buf.action_grads(0, buf.column(3, 1)), 3.0 * (up - down) / (2 * h), 1e-6);
  // a step of the second episode
  const double up2 = ReplayObjective(env, policy, &critics, buf.replay, o, ActionPerturbation{6, 1, 0, h});
  EXPECT_NEAR(buf.action_grads(0, buf.column(6, 1)),
              3.0 * (up2 - ReplayObjective(env, policy, &critics, buf.replay, o,
                                           ActionPerturbation{6, 1, 0, -h})) / (2 * h),
              1e-6);
}

TEST(Rollout, BatchAdvancesAcrossCollections) {
  const DoubleIntegrator env;
  const SquashedNormalPolicy policy = NetworkPolicy(env, 4);
  Rng reset(4, 0), noise(4, 1);
  EnvBatch batch = StartBatch(env, 3, reset);
  RolloutOptions o;
  o.horizon = 50;
  for (int i = 0; i < 3; ++i) {
    const RolloutBuffer buf = Collect(env, policy, nullptr, batch, o, noise, reset);
    EXPECT_EQ(buf.replay.start.steps[0], i * 50);
  }
  // 150 steps into 128-step episodes
  EXPECT_EQ(batch.steps[0], 22);
}

TEST(Rollout, BehaviorStatisticsAreFrozen) {
  const DoubleIntegrator env;
  SquashedNormalPolicy policy = NetworkPolicy(env, 5);
  Rng reset(5, 0), noise(5, 1);
  EnvBatch batch = StartBatch(env, 4, reset);
  RolloutOptions o;
  o.horizon = 6;
  const RolloutBuffer buf = Collect(env, policy, nullptr, batch, o, noise, reset);
  const Matrix expect = policy.LogProb(buf.states, buf.actions);
  EXPECT_LT((buf.old_log_prob - expect).cwiseAbs().maxCoeff(), 1e-12);
  const PolicyStats stats = policy.Stats(buf.states);
  EXPECT_LT((buf.old_stats.mean - stats.mean).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((buf.old_stats.std - stats.std).cwiseAbs().maxCoeff(), 1e-14);

  const RolloutBuffer copy = buf;
  policy.Assign(policy.Flatten().array() + 0.1);
  EXPECT_EQ(buf.old_log_prob, copy.old_log_prob);
  EXPECT_EQ(buf.old_stats.mean, copy.old_stats.mean);
  EXPECT_EQ(buf.actions, copy.actions);
  EXPECT_EQ(buf.action_grads, copy.action_grads);
  EXPECT_EQ(buf.states, copy.states);
  EXPECT_GT((policy.LogProb(buf.states, buf.actions) - buf.old_log_prob).cwiseAbs().maxCoeff(),
            1e-3);
}

TEST(Rollout, ActionGradientsMatchFiniteDifferences) {
  const DoubleIntegrator env;
  const SquashedNormalPolicy policy = NetworkPolicy(env, 6);
  const DoubleCritic critics = Critics(env, 6);
  Rng reset(6, 0), noise(6, 1);
  EnvBatch batch = StartBatch(env, 3, reset);
  RolloutOptions o;
  o.horizon = 6;
  o.gamma = 0.95;
  const RolloutBuffer buf = Collect(env, policy, &critics, batch, o, noise, reset);
  const double h = 1e-6;
  for (int t = 0; t < 6; t += 2) {
    for (int e = 0; e < 3; ++e) {
      const double up = ReplayObjective(env, policy, &critics, buf.replay, o,
                                        ActionPerturbation{t, e, 0, h});
      const double down = ReplayObjective(env, policy, &critics, buf.replay, o,
                                          ActionPerturbation{t, e, 0, -h});
      // the objective is a mean over envs, action_grads a sum
      const double fd = 3.0 * (up - down) / (2 * h);
      EXPECT_NEAR(buf.action_grads(0, buf.column(t, e)), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
  EXPECT_NEAR(ReplayObjective(env, policy, &critics, buf.replay, o), buf.objective, 1e-12);
}

// explicit mixture of n-step returns within one window
double MixtureReturn(const std::vector<double>& r, const std::vector<double>& v,
                     const std::vector<int>& done, int t, double gamma, double lambda) {
  const int h = static_cast<int>(r.size());
  int last = h - 1;
  for (int k = t; k < h; ++k) {
    if (done[k]) {
      last = k;
      break;
    }
  }
  auto nstep = [&](int n) {
    double g = 0.0, disc = 1.0;
    for (int k = t; k < t + n; ++k) {
      g += disc * r[k];
      disc *= gamma;
    }
    return g + disc * v[t + n - 1];
  };
  const int max_n = last - t + 1;
  double total = 0.0, weight = 1.0;
  for (int n = 1; n < max_n; ++n) {
    total += (1.0 - lambda) * weight * nstep(n);
    weight *= lambda;
  }
  return total + weight * nstep(max_n);
}

TEST(TdLambda, MatchesExplicitMixture) {
  Rng rng(8, 0);
  for (const double lambda : {0.0, 1.0, 0.95, 0.5}) {
    const int n = 3, h = 7;
    const double gamma = 0.9;
    const Matrix r = rng.Normal(1, n * h);
    const Matrix v = rng.Normal(1, n * h);
    std::vector<std::uint8_t> done(n * h, 0);
    done[2 * n + 1] = 1;
    done[4 * n + 2] = 1;
    const Matrix g = TdLambdaTargets(r, v, done, n, h, gamma, lambda);
    for (int e = 0; e < n; ++e) {
      std::vector<double> re, ve;
      std::vector<int> de;
      for (int t = 0; t < h; ++t) {
        re.push_back(r(0, t * n + e));
        ve.push_back(v(0, t * n + e));
        de.push_back(done[t * n + e]);
      }
      for (int t = 0; t < h; ++t) {
        // a segment restarts after a done
        int start = 0;
        for (int k = 0; k < t; ++k) {
          if (de[k]) start = k + 1;
        }
        std::vector<double> rs(re.begin() + start, re.end()), vs(ve.begin() + start, ve.end());
        std::vector<int> ds(de.begin() + start, de.end());
        EXPECT_NEAR(g(0, t * n + e), MixtureReturn(rs, vs, ds, t - start, gamma, lambda), 1e-12)
            << "lambda " << lambda << " env " << e << " t " << t;
      }
    }
  }
}

TEST(TdLambda, ZeroLambdaIsOneStep) {
  const Matrix r = (Matrix(1, 4) << 1.0, 2.0, 3.0, 4.0).finished();
  const Matrix v = (Matrix(1, 4) << 10.0, 20.0, 30.0, 40.0).finished();
  const Matrix g = TdLambdaTargets(r, v, {0, 0, 0, 0}, 1, 4, 0.5, 0.0);
  EXPECT_EQ(g, (r + 0.5 * v).eval());
}

TEST(TdLambda, OneLambdaIsDiscountedReturnPlusBootstrap) {
  const Matrix r = (Matrix(1, 3) << 1.0, 2.0, 3.0).finished();
  const Matrix v = (Matrix(1, 3) << 100.0, 200.0, 5.0).finished();
  const Matrix g = TdLambdaTargets(r, v, {0, 0, 0}, 1, 3, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(g(0, 0), 1.0 + 0.5 * 2.0 + 0.25 * 3.0 + 0.125 * 5.0);
  EXPECT_THROW(TdLambdaTargets(r, v, {0, 0}, 1, 3, 0.5, 1.0), std::invalid_argument);
}

TEST(Rollout, RejectsMismatchedPolicy) {
  const DoubleIntegrator di;
  const SmoothPendulum pendulum;
  const SquashedNormalPolicy policy = NetworkPolicy(pendulum, 1);
  Rng reset(0, 0), noise(0, 1);
  EnvBatch batch = StartBatch(di, 2, reset);
  EXPECT_THROW(Collect(di, policy, nullptr, batch, {}, noise, reset), std::invalid_argument);
}

}  // namespace
}  // namespace rpo
