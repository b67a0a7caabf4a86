#include "rpo/algo.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace rpo {
namespace {

std::vector<int> Shuffled(int n, Rng& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.Below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

double Mean(const Matrix& m) { return m.size() ? m.mean() : 0.0; }

PolicyOptions ActorOptions(const TrainerConfig& c) {
  PolicyOptions options;
  options.mlp.hidden = c.actor_hidden;
  options.mlp.layer_norm = c.layer_norm;
  options.log_std_min = c.log_std_min;
  options.log_std_max = c.log_std_max;
  return options;
}

MlpOptions CriticOptions(const TrainerConfig& c) {
  MlpOptions options;
  options.hidden = c.critic_hidden;
  options.layer_norm = c.layer_norm;
  return options;
}

AdamWOptions AdamOptions(const TrainerConfig& c) {
  AdamWOptions options;
  options.beta1 = c.adam_beta1;
  options.beta2 = c.adam_beta2;
  options.weight_decay = c.weight_decay;
  return options;
}

struct TermWeights {
  double clip = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
};

struct SweepOut {
  Vector gradient;
  Matrix kl_values;
  Matrix mean_adjoint;
  Matrix log_std_adjoint;
};

// one tape over the regenerated actions with the requested term seeds
SweepOut SurrogateSweep(const RolloutBuffer& buffer, const SquashedNormalPolicy& policy,
                        const Matrix& eps_reg, const Matrix& weights, const TermWeights& w) {
  const int total = buffer.size();
  Tape tape;
  const MlpBinding binding = policy.net().Bind(tape, true);
  const NodeRef states = tape.Constant(buffer.states);
  const SquashedNormalPolicy::Heads heads = policy.RecordHeads(tape, binding, states);
  const SquashedNormalPolicy::SampleNodes sample =
      policy.RecordSample(tape, heads, tape.Constant(eps_reg));
  const NodeRef kl = policy.RecordKl(tape, heads, buffer.old_stats);

  std::vector<std::pair<NodeRef, Matrix>> seeds;
  if (w.clip != 0.0) {
    Matrix seed = buffer.action_grads;
    seed.array().rowwise() *= weights.row(0).array();
    seeds.emplace_back(sample.action, seed * (w.clip / buffer.num_envs));
  }
  if (w.kl != 0.0) {
    seeds.emplace_back(kl, Matrix::Constant(1, total, -w.kl / total));
  }
  if (w.entropy != 0.0) {
    const NodeRef log_prob = policy.RecordLogProb(tape, heads, sample.pre_squash);
    seeds.emplace_back(log_prob, Matrix::Constant(1, total, -w.entropy / total));
  }

  SweepOut out;
  out.kl_values = tape.Value(kl);
  if (seeds.empty()) {
    out.gradient = Vector::Zero(policy.NumParameters());
    return out;
  }
  tape.Backward(seeds);
  out.gradient = policy.net().Gradient(tape, binding);
  out.mean_adjoint = tape.Adjoint(heads.mean);
  out.log_std_adjoint = tape.Adjoint(heads.log_std);
  return out;
}

}  // namespace

std::string AlgorithmName(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kRpo:
      return "rpo";
    case Algorithm::kShac:
      return "shac";
    case Algorithm::kSapo:
      return "sapo";
    case Algorithm::kPpo:
      return "ppo";
  }
  return "rpo";
}

Algorithm ParseAlgorithm(const std::string& name) {
  if (name == "rpo") return Algorithm::kRpo;
  if (name == "shac") return Algorithm::kShac;
  if (name == "sapo") return Algorithm::kSapo;
  if (name == "ppo") return Algorithm::kPpo;
  throw std::invalid_argument("unknown trainer '" + name + "' (expected rpo, shac, sapo or ppo)");
}

TrainerConfig DefaultTrainerConfig(Algorithm algorithm) {
  TrainerConfig c;
  c.algorithm = algorithm;
  switch (algorithm) {
    case Algorithm::kRpo:
      break;
    case Algorithm::kShac:
    case Algorithm::kSapo:
      c.policy_epochs = 1;
      c.critic_epochs = 16;
      c.actor_lr = 2e-3;
      c.lr_schedule = ScheduleKind::kLinear;
      c.kl_coef = 0.0;
      c.entropy_coef = 0.0;
      c.entropy_in_reward = algorithm == Algorithm::kSapo;
      c.adapt_temperature = algorithm == Algorithm::kSapo;
      c.init_temperature = 1.0;
      c.temperature_lr = 5e-3;
      break;
    case Algorithm::kPpo:
      c.policy_epochs = 5;
      c.critic_epochs = 5;
      c.actor_lr = 5e-4;
      c.lr_schedule = ScheduleKind::kKlAdaptive;
      c.adam_beta1 = 0.9;
      c.adam_beta2 = 0.999;
      c.log_std_min = std::log(0.1);
      c.log_std_max = 0.0;
      c.kl_coef = 0.0;
      c.entropy_coef = 0.0;
      c.entropy_in_reward = false;
      c.adapt_temperature = false;
      c.terminal_value = false;
      break;
  }
  return c;
}

EpochResult PolicyEpoch(const RolloutBuffer& buffer, const SquashedNormalPolicy& policy,
                        const SurrogateOptions& options) {
  const int total = buffer.size();
  if (total == 0) throw std::invalid_argument("policy epoch: empty buffer");
  if (buffer.action_grads.rows() != policy.action_dim() || buffer.action_grads.cols() != total) {
    throw std::invalid_argument("policy epoch: buffer has no cached action gradients");
  }
  EpochResult r;
  const Matrix eps_reg = policy.Inverse(buffer.states, buffer.actions, &r.boundary_clamps);

  // importance weights are constants of the epoch
  const PolicyStats current = policy.Stats(buffer.states);
  const Matrix log_prob =
      SquashedLogProb(current, policy.PreSquash(buffer.actions), policy.bounds().scale());
  r.ratios = (log_prob - buffer.old_log_prob).array().exp().matrix();
  Matrix weights(1, total);
  int outside = 0;
  for (int j = 0; j < total; ++j) {
    const double rho = r.ratios(0, j);
    const bool inside = rho >= 1.0 - options.clip_low && rho <= 1.0 + options.clip_high;
    if (!inside) ++outside;
    weights(0, j) = (!options.clip_gate || inside) ? rho : 0.0;
  }
  r.ratio_mean = Mean(r.ratios);
  r.clip_fraction = static_cast<double>(outside) / total;
  r.all_clipped = options.clip_gate && outside == total;
  r.entropy_mean = -Mean(log_prob);

  if (options.separate_terms) {
    const SweepOut clip = SurrogateSweep(buffer, policy, eps_reg, weights, {1.0, 0.0, 0.0});
    // seeded with -1 / total, so negate to get the gradient of the mean KL
    const SweepOut kl = SurrogateSweep(buffer, policy, eps_reg, weights, {0.0, 1.0, 0.0});
    const SweepOut ent = SurrogateSweep(buffer, policy, eps_reg, weights, {0.0, 0.0, 1.0});
    r.clip_gradient = clip.gradient;
    r.kl_gradient = -kl.gradient;
    r.entropy_gradient = ent.gradient;
    r.gradient = options.clip_coef * r.clip_gradient - options.kl_coef * r.kl_gradient +
                 options.entropy_coef * r.entropy_gradient;
    r.kl_values = kl.kl_values;
    // undo the 1/total seed to get per-transition derivatives
    r.kl_head_grad_max = std::max(kl.mean_adjoint.cwiseAbs().maxCoeff(),
                                  kl.log_std_adjoint.cwiseAbs().maxCoeff()) *
                         total;
  } else {
    const SweepOut all =
        SurrogateSweep(buffer, policy, eps_reg, weights,
                       {options.clip_coef, options.kl_coef, options.entropy_coef});
    r.gradient = all.gradient;
    r.kl_values = all.kl_values;
  }
  r.kl_mean = Mean(r.kl_values);
  r.kl_max = r.kl_values.maxCoeff();
  return r;
}

std::string EvalModeName(EvalMode mode) {
  return mode == EvalMode::kDeterministic ? "deterministic" : "stochastic";
}

EvalMode ParseEvalMode(const std::string& name) {
  if (name == "deterministic") return EvalMode::kDeterministic;
  if (name == "stochastic") return EvalMode::kStochastic;
  throw std::invalid_argument("unknown eval mode '" + name +
                              "' (expected deterministic or stochastic)");
}

EvalResult EvaluateFrom(const SquashedNormalPolicy& policy, const DiffEnv& env,
                        const Matrix& start_states, EvalMode mode, Rng& rng, double gamma) {
  const int k = static_cast<int>(start_states.cols());
  if (k < 1) throw std::invalid_argument("evaluate: no start states");
  if (start_states.rows() != env.state_dim()) {
    throw std::invalid_argument("evaluate: start states do not match the environment");
  }
  Matrix s = start_states;
  Vector returns = Vector::Zero(k);
  Vector discounted = Vector::Zero(k);
  double weight = 1.0;
  for (int t = 0; t < env.episode_length(); ++t) {
    const Matrix a = mode == EvalMode::kDeterministic
                         ? policy.Deterministic(s)
                         : policy.Sample(s, rng.Normal(env.action_dim(), k));
    auto [next, reward] = env.Step(s, a);
    returns += reward.row(0).transpose();
    discounted += weight * reward.row(0).transpose();
    weight *= gamma;
    s = std::move(next);
  }
  EvalResult r;
  r.episodes = k;
  r.mean_return = returns.mean();
  r.mean_discounted = discounted.mean();
  r.std_return = std::sqrt((returns.array() - r.mean_return).square().mean());
  r.std_discounted = std::sqrt((discounted.array() - r.mean_discounted).square().mean());
  return r;
}

EvalResult Evaluate(const SquashedNormalPolicy& policy, const DiffEnv& env, int episodes,
                    EvalMode mode, Rng& rng, double gamma) {
  Rng reset = rng.Split(0);
  Rng noise = rng.Split(1);
  return EvaluateFrom(policy, env, env.Reset(reset, episodes), mode, noise, gamma);
}

Matrix Gae(const Matrix& rewards, const Matrix& values, const Matrix& next_values,
           const std::vector<std::uint8_t>& done, int num_envs, int horizon, double gamma,
           double lambda) {
  const int total = num_envs * horizon;
  if (rewards.cols() != total || values.cols() != total || next_values.cols() != total ||
      static_cast<int>(done.size()) != total) {
    throw std::invalid_argument("gae: inputs must hold horizon * num_envs entries");
  }
  Matrix adv(1, total);
  for (int e = 0; e < num_envs; ++e) {
    double running = 0.0;
    for (int t = horizon - 1; t >= 0; --t) {
      const int c = t * num_envs + e;
      const double delta = rewards(0, c) + gamma * next_values(0, c) - values(0, c);
      running = (t == horizon - 1 || done[c]) ? delta : delta + gamma * lambda * running;
      adv(0, c) = running;
    }
  }
  return adv;
}

PpoGradient PpoSurrogateGradient(const RolloutBuffer& buffer, const std::vector<int>& columns,
                                 const Matrix& advantages, const SquashedNormalPolicy& policy,
                                 double clip) {
  const int b = static_cast<int>(columns.size());
  if (b == 0) throw std::invalid_argument("ppo: empty minibatch");
  Matrix states(buffer.states.rows(), b);
  Matrix actions(buffer.actions.rows(), b);
  Matrix old(1, b);
  Matrix adv(1, b);
  for (int k = 0; k < b; ++k) {
    states.col(k) = buffer.states.col(columns[k]);
    actions.col(k) = buffer.actions.col(columns[k]);
    old(0, k) = buffer.old_log_prob(0, columns[k]);
    adv(0, k) = advantages(0, columns[k]);
  }
  Tape tape;
  const MlpBinding binding = policy.net().Bind(tape, true);
  const SquashedNormalPolicy::Heads heads =
      policy.RecordHeads(tape, binding, tape.Constant(states));
  const NodeRef log_prob =
      policy.RecordLogProb(tape, heads, tape.Constant(policy.PreSquash(actions)));
  const Matrix ratio = (tape.Value(log_prob) - old).array().exp().matrix();

  PpoGradient out;
  Matrix seed = Matrix::Zero(1, b);
  int clipped = 0;
  for (int k = 0; k < b; ++k) {
    const double rho = ratio(0, k);
    const double a = adv(0, k);
    if (std::abs(rho - 1.0) > clip) ++clipped;
    // the min picks the unclipped branch unless rho left the band in the
    // direction the advantage rewards
    const bool active = (a > 0.0 && rho <= 1.0 + clip) || (a < 0.0 && rho >= 1.0 - clip);
    if (active) seed(0, k) = rho * a / b;
  }
  out.ratio_mean = ratio.mean();
  out.clip_fraction = static_cast<double>(clipped) / b;
  if (seed.isZero(0.0)) {
    out.gradient = Vector::Zero(policy.NumParameters());
    return out;
  }
  std::vector<std::pair<NodeRef, Matrix>> seeds = {{log_prob, seed}};
  tape.Backward(seeds);
  out.gradient = policy.net().Gradient(tape, binding);
  return out;
}

// ----- trainer ----- //

Trainer::Trainer(const DiffEnv& env, TrainerConfig config, std::uint64_t seed)
    : env_(env),
      config_(std::move(config)),
      rngs_(SeedEverything(seed)),
      policy_(env.state_dim(), env.bounds(), ActorOptions(config_)),
      critics_(env.state_dim(), CriticOptions(config_), AdamOptions(config_)),
      actor_opt_(policy_.NumParameters(), AdamOptions(config_)),
      temperature_opt_(1, {config_.adam_beta1, config_.adam_beta2, 1e-8, 0.0}),
      log_temperature_(Vector::Constant(1, std::log(config_.init_temperature))) {
  if (config_.num_envs < 1 || config_.horizon < 1 || config_.iterations < 1) {
    throw std::invalid_argument("trainer: num_envs, horizon and iterations must be >= 1");
  }
  if (config_.init_temperature <= 0.0) {
    throw std::invalid_argument("trainer: init_temperature must be positive");
  }
  Rng init_policy = rngs_.init.Split(0);
  policy_.Initialize(init_policy);
  critics_.Initialize(rngs_.init.Split(1), rngs_.init.Split(2));
  batch_ = StartBatch(env_, config_.num_envs, rngs_.env_reset);

  actor_schedule_.kind = config_.lr_schedule;
  actor_schedule_.initial = config_.actor_lr;
  actor_schedule_.total_steps = config_.iterations;
  actor_schedule_.final_ratio = config_.lr_final_ratio;
  actor_schedule_.kl_target = config_.kl_target;
  actor_schedule_.kl_factor = config_.kl_lr_factor;
  critic_schedule_ = actor_schedule_;
  critic_schedule_.initial = config_.critic_lr;
  if (critic_schedule_.kind == ScheduleKind::kKlAdaptive) {
    critic_schedule_.kind = ScheduleKind::kConstant;
  }
}

double Trainer::temperature() const { return std::exp(log_temperature_(0)); }

double Trainer::target_entropy() const {
  return config_.target_entropy.value_or(-0.5 * env_.action_dim());
}

RolloutOptions Trainer::MakeRolloutOptions() const {
  RolloutOptions o;
  o.horizon = config_.horizon;
  o.gamma = config_.gamma;
  o.temperature = config_.entropy_in_reward ? temperature() : 0.0;
  o.entropy_through_action = config_.algorithm == Algorithm::kSapo;
  o.terminal_value = config_.terminal_value;
  o.policy_gradient =
      config_.algorithm == Algorithm::kShac || config_.algorithm == Algorithm::kSapo;
  return o;
}

SurrogateOptions Trainer::MakeSurrogateOptions() const {
  SurrogateOptions o;
  o.clip_low = config_.clip_low;
  o.clip_high = config_.clip_high;
  o.clip_gate = config_.clip_gate;
  o.clip_coef = config_.clip_coef;
  o.kl_coef = config_.kl_coef;
  o.entropy_coef = config_.entropy_coef;
  return o;
}

double Trainer::ActorRate(std::optional<double> observed_kl) {
  if (actor_schedule_.kind == ScheduleKind::kKlAdaptive) {
    if (!observed_kl) {
      return actor_schedule_.current > 0.0 ? actor_schedule_.current : actor_schedule_.initial;
    }
  }
  return actor_schedule_.Rate(std::min(iteration_, actor_schedule_.total_steps), observed_kl);
}

double Trainer::CriticRate() {
  return critic_schedule_.Rate(std::min(iteration_, critic_schedule_.total_steps));
}

void Trainer::StepActor(const Vector& ascent, double lr, EpochMetrics& metrics) {
  Vector grad = -ascent;
  metrics.grad_norm = ClipGradNorm(grad, config_.grad_clip);
  metrics.grad_norm_clipped = grad.norm();
  Vector params = policy_.Flatten();
  actor_opt_.Step(params, grad, lr);
  policy_.Assign(params);
}

void Trainer::AdaptTemperature(double entropy_estimate) {
  if (!config_.adapt_temperature || !std::isfinite(entropy_estimate)) return;
  // descent on log(alpha) * (H - target): alpha shrinks while entropy is
  // above target and grows below it
  Vector grad(1);
  grad(0) = entropy_estimate - target_entropy();
  temperature_opt_.Step(log_temperature_, grad, config_.temperature_lr);
}

void Trainer::TrainCritics(const RolloutBuffer& buffer, const Matrix& targets,
                           UpdateMetrics& m) {
  CriticTrainOptions options;
  options.epochs = config_.critic_epochs;
  options.minibatches = config_.critic_minibatches;
  options.grad_clip = config_.grad_clip;
  m.critic_trace = critics_.Train(buffer.states, targets, options, rngs_.minibatch, CriticRate());
  m.critic_loss = m.critic_trace.empty() ? 0.0 : m.critic_trace.back();
}

void Trainer::Finish(const RolloutBuffer& buffer, const PolicyStats& before, UpdateMetrics& m) {
  const Matrix kl = policy_.KlGaussian(before, buffer.states);
  m.kl_mean = kl.mean();
  m.kl_raw_max = kl.maxCoeff();
  if (!m.epochs.empty()) {
    double ratio = 0.0;
    double clipped = 0.0;
    for (const EpochMetrics& e : m.epochs) {
      ratio += e.ratio_mean;
      clipped += e.clip_fraction;
    }
    m.ratio_mean = ratio / m.epochs.size();
    m.clip_fraction = clipped / m.epochs.size();
  }
  m.entropy = buffer.entropy.mean();
  m.objective = buffer.objective;
  if (!buffer.completed_returns.empty()) {
    const double sum =
        std::accumulate(buffer.completed_returns.begin(), buffer.completed_returns.end(), 0.0);
    recent_returns_.push_back(sum / buffer.completed_returns.size());
  }
  // iterations without a finished episode repeat the last known mean
  if (!recent_returns_.empty()) m.mean_return = recent_returns_.back();
  env_steps_ += static_cast<long>(buffer.size());
  m.env_steps = env_steps_;
  m.temperature = temperature();
}

UpdateMetrics Trainer::Iterate() {
  switch (config_.algorithm) {
    case Algorithm::kRpo:
      return RpoIteration();
    case Algorithm::kShac:
    case Algorithm::kSapo:
      return ShacIteration();
    case Algorithm::kPpo:
      return PpoIteration();
  }
  return RpoIteration();
}

namespace {

// restores actor and critics when an iteration is aborted
struct Snapshot {
  Vector actor;
  Vector critic0;
  Vector critic1;

  Snapshot(const SquashedNormalPolicy& p, const DoubleCritic& c)
      : actor(p.Flatten()), critic0(c.net(0).Flatten()), critic1(c.net(1).Flatten()) {}
  void Restore(SquashedNormalPolicy& p, DoubleCritic& c) const {
    p.Assign(actor);
    c.net(0).Assign(critic0);
    c.net(1).Assign(critic1);
  }
};

}  // namespace

UpdateMetrics Trainer::RpoIteration() {
  UpdateMetrics m;
  m.iteration = iteration_;
  const Snapshot snapshot(policy_, critics_);
  try {
    const RolloutBuffer buffer = Collect(env_, policy_, &critics_, batch_, MakeRolloutOptions(),
                                         rngs_.policy_noise, rngs_.env_reset);
    const Matrix targets = ValueTargets(buffer, critics_, config_.gamma, config_.td_lambda);
    m.actor_lr = ActorRate();
    const SurrogateOptions options = MakeSurrogateOptions();
    for (int epoch = 0; epoch < config_.policy_epochs; ++epoch) {
      if (observer_) observer_(epoch, buffer, policy_);
      const EpochResult r = PolicyEpoch(buffer, policy_, options);
      EpochMetrics em;
      em.ratio_mean = r.ratio_mean;
      em.clip_fraction = r.clip_fraction;
      em.kl_mean = r.kl_mean;
      em.entropy = r.entropy_mean;
      em.all_clipped = r.all_clipped;
      StepActor(r.gradient, m.actor_lr, em);
      m.epochs.push_back(em);
    }
    if (config_.entropy_in_reward) AdaptTemperature(buffer.entropy.mean());
    TrainCritics(buffer, targets, m);
    Finish(buffer, buffer.old_stats, m);
  } catch (const NonFiniteError& e) {
    snapshot.Restore(policy_, critics_);
    m.failed = true;
    m.failure = e.what();
  }
  ++iteration_;
  return m;
}

UpdateMetrics Trainer::ShacIteration() {
  UpdateMetrics m;
  m.iteration = iteration_;
  const Snapshot snapshot(policy_, critics_);
  try {
    const RolloutBuffer buffer = Collect(env_, policy_, &critics_, batch_, MakeRolloutOptions(),
                                         rngs_.policy_noise, rngs_.env_reset);
    const Matrix targets = ValueTargets(buffer, critics_, config_.gamma, config_.td_lambda);
    m.actor_lr = ActorRate();
    EpochMetrics em;
    em.entropy = buffer.entropy.mean();
    StepActor(buffer.policy_gradient, m.actor_lr, em);
    m.epochs.push_back(em);
    if (config_.entropy_in_reward) AdaptTemperature(buffer.entropy.mean());
    TrainCritics(buffer, targets, m);
    Finish(buffer, buffer.old_stats, m);
    m.ratio_mean = 1.0;
    m.clip_fraction = 0.0;
  } catch (const NonFiniteError& e) {
    snapshot.Restore(policy_, critics_);
    m.failed = true;
    m.failure = e.what();
  }
  ++iteration_;
  return m;
}

UpdateMetrics Trainer::PpoIteration() {
  UpdateMetrics m;
  m.iteration = iteration_;
  const Snapshot snapshot(policy_, critics_);
  try {
    RolloutOptions ro;
    ro.horizon = config_.horizon;
    ro.gamma = config_.gamma;
    ro.terminal_value = false;
    const RolloutBuffer buffer =
        Collect(env_, policy_, nullptr, batch_, ro, rngs_.policy_noise, rngs_.env_reset);
    const Matrix values = critics_.VBar(buffer.states);
    const Matrix advantages =
        Gae(buffer.rewards, values, NextValues(buffer, critics_), buffer.done, buffer.num_envs,
            buffer.horizon, config_.gamma, config_.td_lambda);
    const Matrix returns = advantages + values;
    Matrix normalized = advantages;
    const double mean = advantages.mean();
    const double std = std::sqrt((advantages.array() - mean).square().mean());
    if (std > 1e-8) normalized = ((advantages.array() - mean) / std).matrix();

    m.actor_lr = ActorRate();
    const int total = buffer.size();
    const int chunks = std::max(1, std::min(config_.ppo_minibatches, total));
    for (int epoch = 0; epoch < config_.policy_epochs; ++epoch) {
      const std::vector<int> order = Shuffled(total, rngs_.minibatch);
      for (int c = 0; c < chunks; ++c) {
        const std::vector<int> columns(order.begin() + c * total / chunks,
                                       order.begin() + (c + 1) * total / chunks);
        if (columns.empty()) continue;
        const PpoGradient g =
            PpoSurrogateGradient(buffer, columns, normalized, policy_, config_.ppo_clip);
        EpochMetrics em;
        em.ratio_mean = g.ratio_mean;
        em.clip_fraction = g.clip_fraction;
        StepActor(g.gradient, m.actor_lr, em);
        m.epochs.push_back(em);
      }
    }
    TrainCritics(buffer, returns, m);
    Finish(buffer, buffer.old_stats, m);
    // the observed KL sets the rate of the next iteration
    ActorRate(m.kl_mean);
  } catch (const NonFiniteError& e) {
    snapshot.Restore(policy_, critics_);
    m.failed = true;
    m.failure = e.what();
  }
  ++iteration_;
  return m;
}

}  // namespace rpo
