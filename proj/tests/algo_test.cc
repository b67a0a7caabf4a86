#include <cmath>

#include <gtest/gtest.h>

#include "rpo/algo.h"
#include "rpo/oracle.h"

namespace rpo {
namespace {

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
  DoubleCritic c(env.state_dim(), o);
  c.Initialize(Rng(seed, 8), Rng(seed, 9));
  return c;
}

RolloutBuffer CollectOnce(const DiffEnv& env, const SquashedNormalPolicy& policy,
                          const DoubleCritic* critics, int num_envs, int horizon,
                          std::uint64_t seed, bool policy_gradient = false) {
  Rng reset(seed, 0), noise(seed, 1);
  EnvBatch batch = StartBatch(env, num_envs, reset);
  RolloutOptions o;
  o.horizon = horizon;
  o.policy_gradient = policy_gradient;
  return Collect(env, policy, critics, batch, o, noise, reset);
}

SurrogateOptions ClipOnly() {
  SurrogateOptions o;
  o.kl_coef = 0.0;
  o.entropy_coef = 0.0;
  return o;
}

TEST(PolicyEpoch, GateKeepsOnlyRatiosInsideTheInterval) {
  const QuadraticBandit env;
  Vector theta(4);
  theta << 0.2, 0.1, -0.1, -1.0;
  const SquashedNormalPolicy policy = MakeLinearPolicy(env, theta);
  RolloutBuffer buf = CollectOnce(env, policy, nullptr, 3, 1, 11);

  // forge behavior log-probs so the ratios are exactly 0.5, 0.1 and 2.5
  const double targets[3] = {0.5, 0.1, 2.5};
  const Matrix current = policy.LogProb(buf.states, buf.actions);
  for (int j = 0; j < 3; ++j) buf.old_log_prob(0, j) = current(0, j) - std::log(targets[j]);

  const EpochResult r = PolicyEpoch(buf, policy, ClipOnly());
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(r.ratios(0, j), targets[j], 1e-14);
  EXPECT_NEAR(r.clip_fraction, 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(r.all_clipped);

  // hand-built estimate: rho * dR/da * da/dtheta, only for the first sample
  const ScalarPolicyModel model = ModelOf(policy);
  const Matrix eps = policy.Inverse(buf.states, buf.actions);
  const Vector expect =
      0.5 * buf.action_grads(0, 0) * model.ActionGrad(buf.states(0, 0), eps(0, 0)) / 3.0;
  EXPECT_LT((r.gradient - expect).cwiseAbs().maxCoeff(), 1e-14);

  SurrogateOptions ungated = ClipOnly();
  ungated.clip_gate = false;
  const EpochResult all = PolicyEpoch(buf, policy, ungated);
  Vector full = Vector::Zero(4);
  for (int j = 0; j < 3; ++j) {
    full += targets[j] * buf.action_grads(0, j) * model.ActionGrad(buf.states(0, j), eps(0, j));
  }
  EXPECT_LT((all.gradient - full / 3.0).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PolicyEpoch, EverythingOutsideTheGateLeavesNoClipGradient) {
  const QuadraticBandit env;
  Vector theta(4);
  theta << 0.2, 0.1, -0.1, -1.0;
  const SquashedNormalPolicy policy = MakeLinearPolicy(env, theta);
  RolloutBuffer buf = CollectOnce(env, policy, nullptr, 4, 1, 12);
  buf.old_log_prob.array() += 5.0;
  const EpochResult r = PolicyEpoch(buf, policy, ClipOnly());
  EXPECT_TRUE(r.all_clipped);
  EXPECT_EQ(r.gradient.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PolicyEpoch, FirstEpochIdentities) {
  const DoubleIntegrator env;
  const SquashedNormalPolicy policy = NetworkPolicy(env, 13);
  const DoubleCritic critics = Critics(env, 13);
  const RolloutBuffer buf = CollectOnce(env, policy, &critics, 4, 8, 13, true);
  SurrogateOptions o;
  o.kl_coef = 0.4;
  o.entropy_coef = 0.0;
  o.separate_terms = true;
  const EpochResult r = PolicyEpoch(buf, policy, o);
  EXPECT_LT((r.ratios.array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_EQ(r.clip_fraction, 0.0);
  EXPECT_LT(r.kl_values.cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(r.kl_gradient.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(r.kl_head_grad_max, 1e-12);
  // unit ratios make the clip term the single-tape policy gradient
  const double scale = std::max(1.0, buf.policy_gradient.cwiseAbs().maxCoeff());
  EXPECT_LT((r.clip_gradient - buf.policy_gradient).cwiseAbs().maxCoeff() / scale, 1e-10);
}

TEST(PolicyEpoch, KlTermActivatesAfterAnUpdate) {
  const DoubleIntegrator env;
  SquashedNormalPolicy policy = NetworkPolicy(env, 14);
  const RolloutBuffer buf = CollectOnce(env, policy, nullptr, 4, 8, 14);
  policy.Assign(policy.Flatten() + 0.05 * Rng(14, 5).Normal(policy.NumParameters(), 1));
  SurrogateOptions o;
  o.separate_terms = true;
  const EpochResult r = PolicyEpoch(buf, policy, o);
  EXPECT_GT(r.kl_mean, 0.0);
  EXPECT_GT(r.kl_gradient.norm(), 0.0);
  EXPECT_NEAR(r.kl_mean, policy.KlGaussian(buf.old_stats, buf.states).mean(), 1e-14);

  // the KL gradient is that of the batch-mean KL
  const Vector theta = policy.Flatten();
  const double h = 1e-6;
  for (int i = 0; i < theta.size(); i += 37) {
    SquashedNormalPolicy probe = policy;
    Vector t = theta;
    t(i) += h;
    probe.Assign(t);
    const double up = probe.KlGaussian(buf.old_stats, buf.states).mean();
    t(i) -= 2 * h;
    probe.Assign(t);
    const double down = probe.KlGaussian(buf.old_stats, buf.states).mean();
    EXPECT_NEAR(r.kl_gradient(i), (up - down) / (2 * h), 1e-7) << "param " << i;
  }
  // combined sweep equals the weighted separate terms
  SurrogateOptions joint = o;
  joint.separate_terms = false;
  const EpochResult c = PolicyEpoch(buf, policy, joint);
  const double scale = std::max(1.0, c.gradient.cwiseAbs().maxCoeff());
  EXPECT_LT((c.gradient - r.gradient).cwiseAbs().maxCoeff() / scale, 1e-12);
}

TEST(Gae, LambdaOneIsDiscountedReturnMinusBaseline) {
  Rng rng(15, 0);
  const int n = 2, h = 6;
  const double gamma = 0.9;
  const Matrix r = rng.Normal(1, n * h);
  const Matrix v = rng.Normal(1, n * h);
  // within a window the next value of step t is the value of step t + 1
  Matrix nv = rng.Normal(1, n * h);
  for (int t = 0; t + 1 < h; ++t) nv.middleCols(t * n, n) = v.middleCols((t + 1) * n, n);
  const std::vector<std::uint8_t> done(n * h, 0);
  const Matrix adv = Gae(r, v, nv, done, n, h, gamma, 1.0);
  for (int e = 0; e < n; ++e) {
    for (int t = 0; t < h; ++t) {
      double g = 0.0, disc = 1.0;
      for (int k = t; k < h; ++k) {
        g += disc * r(0, k * n + e);
        disc *= gamma;
      }
      g += disc * nv(0, (h - 1) * n + e);
      EXPECT_NEAR(adv(0, t * n + e), g - v(0, t * n + e), 1e-12);
    }
  }
  const Matrix one_step = Gae(r, v, nv, done, n, h, gamma, 0.0);
  EXPECT_LT((one_step - (r + gamma * nv - v)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gae, DoneCutsTheRecursion) {
  const Matrix r = Matrix::Ones(1, 3);
  const Matrix zero = Matrix::Zero(1, 3);
  const Matrix adv = Gae(r, zero, zero, {0, 1, 0}, 1, 3, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(adv(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(adv(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(adv(0, 2), 1.0);
}

TEST(Ppo, ZeroAdvantagesGiveZeroGradient) {
  const DoubleIntegrator env;
  const SquashedNormalPolicy policy = NetworkPolicy(env, 16);
  const RolloutBuffer buf = CollectOnce(env, policy, nullptr, 4, 8, 16);
  std::vector<int> columns(buf.size());
  for (int i = 0; i < buf.size(); ++i) columns[i] = i;
  const PpoGradient g = PpoSurrogateGradient(buf, columns, Matrix::Zero(1, buf.size()), policy, 0.2);
  EXPECT_EQ(g.gradient.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(g.ratio_mean, 1.0, 1e-12);
  EXPECT_EQ(g.clip_fraction, 0.0);
}

TEST(Ppo, OnPolicyGradientIsTheScoreFunction) {
  const DoubleIntegrator env;
  const SquashedNormalPolicy policy = NetworkPolicy(env, 17);
  const RolloutBuffer buf = CollectOnce(env, policy, nullptr, 2, 4, 17);
  std::vector<int> columns = {0, 3, 5};
  Matrix adv = Matrix::Zero(1, buf.size());
  adv(0, 0) = 1.0;
  adv(0, 3) = -2.0;
  adv(0, 5) = 0.5;
  const PpoGradient g = PpoSurrogateGradient(buf, columns, adv, policy, 0.2);
  // mean over columns of A * d log pi / d theta, by central differences
  const Vector theta = policy.Flatten();
  auto objective = [&](const Vector& t) {
    SquashedNormalPolicy p = policy;
    p.Assign(t);
    const Matrix lp = p.LogProb(buf.states, buf.actions);
    double total = 0.0;
    for (int c : columns) total += adv(0, c) * lp(0, c);
    return total / columns.size();
  };
  const Vector fd = FiniteDifference(objective, theta);
  const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
  EXPECT_LT((g.gradient - fd).cwiseAbs().maxCoeff() / scale, 1e-6);
}

TEST(Evaluate, DeterministicModeIgnoresTheSeed) {
  const SmoothPendulum env;
  const SquashedNormalPolicy policy = NetworkPolicy(env, 18);
  Rng reset(18, 0);
  const Matrix starts = env.Reset(reset, 4);
  Rng a(1, 4), b(2, 4);
  const EvalResult x = EvaluateFrom(policy, env, starts, EvalMode::kDeterministic, a, 0.99);
  const EvalResult y = EvaluateFrom(policy, env, starts, EvalMode::kDeterministic, b, 0.99);
  EXPECT_EQ(x.mean_return, y.mean_return);
  EXPECT_EQ(x.mean_discounted, y.mean_discounted);
  const EvalResult s1 = EvaluateFrom(policy, env, starts, EvalMode::kStochastic, a, 0.99);
  const EvalResult s2 = EvaluateFrom(policy, env, starts, EvalMode::kStochastic, b, 0.99);
  EXPECT_NE(s1.mean_return, s2.mean_return);
}

TEST(Evaluate, ZeroPolicyOnTheDoubleIntegrator) {
  const DoubleIntegrator env;
  PolicyOptions o;
  o.mlp.hidden = {8};
  o.mlp.head_gain = 0.0;
  SquashedNormalPolicy policy(2, env.bounds(), o);
  Rng init(0, 0);
  policy.Initialize(init);
  Matrix start(2, 1);
  start << 1.0, 0.0;
  Rng rng(0, 1);
  const double gamma = 0.99;
  const EvalResult r = EvaluateFrom(policy, env, start, EvalMode::kDeterministic, rng, gamma);
  EXPECT_DOUBLE_EQ(r.mean_return, -128.0);
  EXPECT_NEAR(r.mean_discounted, -(1.0 - std::pow(gamma, 128)) / (1.0 - gamma), 1e-12);
  EXPECT_EQ(r.std_return, 0.0);
}

TrainerConfig SmallConfig(Algorithm algorithm) {
  TrainerConfig c = DefaultTrainerConfig(algorithm);
  c.num_envs = 4;
  c.horizon = 8;
  c.iterations = 10;
  c.actor_hidden = {16};
  c.critic_hidden = {16};
  c.critic_epochs = 2;
  return c;
}

TEST(Trainer, DefaultsPerAlgorithm) {
  const TrainerConfig rpo = DefaultTrainerConfig(Algorithm::kRpo);
  EXPECT_EQ(rpo.policy_epochs, 5);
  EXPECT_EQ(rpo.clip_low, 0.8);
  EXPECT_EQ(rpo.clip_high, 1.0);
  EXPECT_EQ(rpo.kl_coef, 0.4);
  EXPECT_EQ(rpo.entropy_coef, 0.2);
  EXPECT_EQ(rpo.td_lambda, 0.95);
  EXPECT_EQ(rpo.gamma, 0.99);
  EXPECT_TRUE(rpo.clip_gate);

  const TrainerConfig shac = DefaultTrainerConfig(Algorithm::kShac);
  EXPECT_EQ(shac.policy_epochs, 1);
  EXPECT_FALSE(shac.entropy_in_reward);
  EXPECT_TRUE(DefaultTrainerConfig(Algorithm::kSapo).entropy_in_reward);
  EXPECT_FALSE(DefaultTrainerConfig(Algorithm::kPpo).terminal_value);

  for (const char* name : {"rpo", "shac", "sapo", "ppo"}) {
    EXPECT_EQ(AlgorithmName(ParseAlgorithm(name)), name);
  }
  EXPECT_THROW(ParseAlgorithm("trpo"), std::invalid_argument);
}

TEST(Trainer, RolloutFlagsFollowTheAlgorithm) {
  const DoubleIntegrator env;
  const Trainer rpo(env, SmallConfig(Algorithm::kRpo), 0);
  EXPECT_FALSE(rpo.MakeRolloutOptions().policy_gradient);
  EXPECT_FALSE(rpo.MakeRolloutOptions().entropy_through_action);
  EXPECT_EQ(rpo.MakeRolloutOptions().temperature, rpo.temperature());
  const Trainer sapo(env, SmallConfig(Algorithm::kSapo), 0);
  EXPECT_TRUE(sapo.MakeRolloutOptions().policy_gradient);
  EXPECT_TRUE(sapo.MakeRolloutOptions().entropy_through_action);
  const Trainer shac(env, SmallConfig(Algorithm::kShac), 0);
  EXPECT_EQ(shac.MakeRolloutOptions().temperature, 0.0);
}

TEST(Trainer, StepBookkeepingAndEpochCount) {
  const DoubleIntegrator env;
  for (Algorithm a : {Algorithm::kRpo, Algorithm::kShac, Algorithm::kSapo, Algorithm::kPpo}) {
    Trainer trainer(env, SmallConfig(a), 1);
    for (int i = 0; i < 3; ++i) {
      const UpdateMetrics m = trainer.Iterate();
      EXPECT_FALSE(m.failed) << m.failure;
      EXPECT_EQ(m.iteration, i);
      EXPECT_EQ(m.env_steps, (i + 1) * 4L * 8L) << AlgorithmName(a);
      if (a == Algorithm::kRpo) EXPECT_EQ(m.epochs.size(), 5u);
    }
    EXPECT_EQ(trainer.env_steps(), 3L * 4L * 8L);
  }
}

TEST(Trainer, IterationsAreDeterministic) {
  const SmoothPendulum env;
  auto run = [&] {
    Trainer trainer(env, SmallConfig(Algorithm::kRpo), 5);
    for (int i = 0; i < 3; ++i) trainer.Iterate();
    return trainer.policy().Flatten();
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, TemperatureShrinksWhileEntropyIsAboveTarget) {
  const DoubleIntegrator env;
  TrainerConfig c = SmallConfig(Algorithm::kRpo);
  c.init_temperature = 0.5;
  Trainer trainer(env, c, 2);
  const UpdateMetrics m = trainer.Iterate();
  ASSERT_GT(m.entropy, trainer.target_entropy());
  EXPECT_LT(trainer.temperature(), 0.5);

  c.target_entropy = 5.0;
  Trainer low(env, c, 2);
  low.Iterate();
  EXPECT_GT(low.temperature(), 0.5);
}

TEST(Trainer, ObserverSeesEveryEpoch) {
  const DoubleIntegrator env;
  Trainer trainer(env, SmallConfig(Algorithm::kRpo), 3);
  std::vector<int> seen;
  trainer.set_epoch_observer(
      [&](int epoch, const RolloutBuffer&, const SquashedNormalPolicy&) { seen.push_back(epoch); });
  trainer.Iterate();
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2, 3, 4}));
}

}  // namespace
}  // namespace rpo
