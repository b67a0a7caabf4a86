#include "rpo/rollout.h"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace rpo {
namespace {

using ResetFn = std::function<Matrix()>;

struct CoreResult {
  RolloutBuffer buffer;
  EnvBatch end;
  std::vector<int> non_finite_envs;
};

// one short-horizon collection on a single tape; record=false only builds
// the objective value
CoreResult RunCore(const DiffEnv& env, const SquashedNormalPolicy& policy,
                   const DoubleCritic* critics, const EnvBatch& start, const Matrix& noise,
                   const ResetFn& next_reset, const RolloutOptions& options,
                   std::optional<ActionPerturbation> perturbation, bool record) {
  const int n = start.size();
  const int h = options.horizon;
  const int sdim = env.state_dim();
  const int adim = env.action_dim();
  if (h < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
  if (n < 1) throw std::invalid_argument("rollout: no environments");
  if (policy.state_dim() != sdim || policy.action_dim() != adim) {
    throw std::invalid_argument("rollout: policy does not match environment");
  }
  if (noise.rows() != adim || noise.cols() != static_cast<Eigen::Index>(h) * n) {
    throw std::invalid_argument("rollout: noise has the wrong shape");
  }
  const bool use_critic = options.terminal_value && critics != nullptr;
  const bool entropy_bonus = options.temperature != 0.0;

  CoreResult result;
  RolloutBuffer& buf = result.buffer;
  buf.num_envs = n;
  buf.horizon = h;
  buf.temperature = options.temperature;
  const int total = n * h;
  if (record) {
    buf.states.resize(sdim, total);
    buf.actions.resize(adim, total);
    buf.next_states.resize(sdim, total);
    buf.rewards.resize(1, total);
    buf.raw_rewards.resize(1, total);
    buf.entropy.resize(1, total);
    buf.old_stats.mean.resize(adim, total);
    buf.old_stats.std.resize(adim, total);
    buf.discounts.resize(1, total);
    buf.done.assign(total, 0);
    buf.bootstrap.assign(total, 0);
    buf.noise = noise;
  }

  Tape tape;
  const MlpBinding binding = policy.net().Bind(tape, options.policy_gradient);
  EnvBatch cur = start;
  NodeRef states = tape.Constant(cur.states);
  Matrix discount = Matrix::Ones(1, n);
  std::vector<NodeRef> action_nodes;
  NodeRef objective;

  auto accumulate = [&](NodeRef term) {
    objective = objective.valid() ? tape.Add(objective, term) : term;
  };

  for (int t = 0; t < h; ++t) {
    const SquashedNormalPolicy::Heads heads = policy.RecordHeads(tape, binding, states);
    const NodeRef eps = tape.Constant(noise.middleCols(static_cast<Eigen::Index>(t) * n, n));
    const SquashedNormalPolicy::SampleNodes sample = policy.RecordSample(tape, heads, eps);
    NodeRef action = sample.action;
    if (perturbation && perturbation->step == t) {
      Matrix delta = Matrix::Zero(adim, n);
      delta(perturbation->dim, perturbation->env) = perturbation->delta;
      action = tape.Add(action, tape.Constant(delta));
    }
    tape.Watch(action);
    action_nodes.push_back(action);

    NodeRef bonus;
    if (entropy_bonus) {
      const NodeRef u = options.entropy_through_action
                            ? sample.pre_squash
                            : tape.Constant(tape.Value(sample.pre_squash));
      bonus = tape.Scale(policy.RecordLogProb(tape, heads, u), -options.temperature);
    }

    const StepNodes step = env.Step(tape, states, action);
    NodeRef reward = entropy_bonus ? tape.Add(step.reward, bonus) : step.reward;
    accumulate(tape.Mul(reward, tape.Constant(discount)));

    // copies: recording the critic bootstrap below can move tape storage
    const Matrix next = tape.Value(step.next_state);
    const Matrix raw = tape.Value(step.reward);
    const Matrix shaped = tape.Value(reward);

    std::vector<std::uint8_t> done(n, 0);
    for (int e = 0; e < n; ++e) {
      const bool finite = next.col(e).allFinite() && std::isfinite(shaped(0, e));
      if (!finite) {
        result.non_finite_envs.push_back(e);
        done[e] = 1;
        continue;
      }
      cur.steps[e] += 1;
      cur.returns[e] += raw(0, e);
      if (cur.steps[e] >= env.episode_length()) done[e] = 1;
    }

    if (record) {
      const int c0 = t * n;
      buf.states.middleCols(c0, n) = tape.Value(states);
      buf.actions.middleCols(c0, n) = tape.Value(action);
      buf.next_states.middleCols(c0, n) = next;
      buf.rewards.middleCols(c0, n) = shaped;
      buf.raw_rewards.middleCols(c0, n) = raw;
      buf.old_stats.mean.middleCols(c0, n) = tape.Value(heads.mean);
      buf.old_stats.std.middleCols(c0, n) = tape.Value(heads.std);
      buf.discounts.middleCols(c0, n) = discount;
      for (int e = 0; e < n; ++e) {
        buf.done[c0 + e] = done[e];
        buf.bootstrap[c0 + e] = done[e] && env.bootstrap_at_end() ? 1 : 0;
      }
    }

    // critic bootstrap at time-limit ends and at the window end
    if (use_critic) {
      Matrix weight = Matrix::Zero(1, n);
      bool any = false;
      for (int e = 0; e < n; ++e) {
        const bool ends_here = done[e] && env.bootstrap_at_end();
        const bool window_end = t == h - 1 && !done[e];
        if (ends_here || window_end) {
          weight(0, e) = discount(0, e) * options.gamma;
          any = true;
        }
      }
      if (any) {
        const NodeRef value = critics->RecordVBar(tape, step.next_state);
        accumulate(tape.Mul(value, tape.Constant(weight)));
      }
    }

    bool any_done = false;
    for (int e = 0; e < n; ++e) any_done = any_done || done[e];
    if (any_done) {
      Matrix keep = Matrix::Ones(1, n);
      Matrix fresh = Matrix::Zero(sdim, n);
      for (int e = 0; e < n; ++e) {
        if (!done[e]) continue;
        keep(0, e) = 0.0;
        fresh.col(e) = next_reset();
        if (record && cur.steps[e] >= env.episode_length()) {
          buf.completed_returns.push_back(cur.returns[e]);
        }
        cur.steps[e] = 0;
        cur.returns[e] = 0.0;
      }
      // zeroed entries of a non-finite next state would still be NaN
      Matrix clean = next;
      for (int e = 0; e < n; ++e) {
        if (done[e]) clean.col(e).setZero();
      }
      const NodeRef kept = result.non_finite_envs.empty()
                               ? tape.Mul(step.next_state, tape.Constant(keep))
                               : tape.Constant(clean);
      states = tape.Add(kept, tape.Constant(fresh));
    } else {
      states = step.next_state;
    }
    for (int e = 0; e < n; ++e) discount(0, e) = done[e] ? 1.0 : discount(0, e) * options.gamma;
  }
  cur.states = tape.Value(states);
  result.end = cur;

  const NodeRef total_objective = tape.Sum(objective);
  const double value = tape.ScalarValue(total_objective);
  buf.objective = value / n;
  if (!result.non_finite_envs.empty()) return result;
  if (!std::isfinite(value)) {
    throw NonFiniteError("rollout: non-finite short-horizon objective");
  }
  if (!record) return result;

  tape.Backward(total_objective);
  buf.sweeps = tape.sweeps();
  buf.action_grads.resize(adim, total);
  for (int t = 0; t < h; ++t) {
    buf.action_grads.middleCols(static_cast<Eigen::Index>(t) * n, n) =
        tape.Adjoint(action_nodes[t]);
  }
  if (options.policy_gradient) {
    buf.policy_gradient = policy.net().Gradient(tape, binding) / static_cast<double>(n);
  }
  return result;
}

}  // namespace

EnvBatch StartBatch(const DiffEnv& env, int num_envs, Rng& reset_rng) {
  EnvBatch batch;
  batch.states = env.Reset(reset_rng, num_envs);
  batch.steps.assign(num_envs, 0);
  batch.returns.assign(num_envs, 0.0);
  return batch;
}

RolloutBuffer Collect(const DiffEnv& env, const SquashedNormalPolicy& policy,
                      const DoubleCritic* critics, EnvBatch& batch,
                      const RolloutOptions& options, Rng& noise_rng, Rng& reset_rng) {
  const int n = batch.size();
  const Matrix noise = noise_rng.Normal(env.action_dim(), options.horizon * n);
  std::vector<Matrix> resets;
  const ResetFn draw = [&]() {
    resets.push_back(env.Reset(reset_rng, 1));
    return resets.back();
  };
  CoreResult core =
      RunCore(env, policy, critics, batch, noise, draw, options, std::nullopt, true);
  if (!core.non_finite_envs.empty()) {
    for (int e : core.non_finite_envs) {
      batch.states.col(e) = env.Reset(reset_rng, 1);
      batch.steps[e] = 0;
      batch.returns[e] = 0.0;
    }
    throw NonFiniteError("rollout: non-finite state or reward in env " +
                         std::to_string(core.non_finite_envs.front()) + "; episode terminated");
  }
  RolloutBuffer& buf = core.buffer;
  buf.replay.start = batch;
  buf.replay.noise = noise;
  buf.replay.resets = std::move(resets);
  buf.old_log_prob = SquashedLogProb(buf.old_stats,
                                     policy.PreSquash(buf.actions, &buf.boundary_clamps),
                                     policy.bounds().scale());
  buf.entropy = -buf.old_log_prob;
  batch = core.end;
  return std::move(core.buffer);
}

double ReplayObjective(const DiffEnv& env, const SquashedNormalPolicy& policy,
                       const DoubleCritic* critics, const RolloutReplay& replay,
                       const RolloutOptions& options,
                       std::optional<ActionPerturbation> perturbation) {
  std::size_t next = 0;
  const ResetFn draw = [&]() {
    if (next >= replay.resets.size()) {
      throw std::logic_error("rollout replay: more resets than recorded");
    }
    return replay.resets[next++];
  };
  RolloutOptions replay_options = options;
  replay_options.policy_gradient = false;
  return RunCore(env, policy, critics, replay.start, replay.noise, draw, replay_options,
                 perturbation, false)
      .buffer.objective;
}

Matrix TdLambdaTargets(const Matrix& rewards, const Matrix& next_values,
                       const std::vector<std::uint8_t>& done, int num_envs, int horizon,
                       double gamma, double lambda) {
  const int total = num_envs * horizon;
  if (rewards.cols() != total || next_values.cols() != total ||
      static_cast<int>(done.size()) != total) {
    throw std::invalid_argument("td_lambda: inputs must hold horizon * num_envs entries");
  }
  Matrix targets(1, total);
  for (int e = 0; e < num_envs; ++e) {
    double following = 0.0;
    for (int t = horizon - 1; t >= 0; --t) {
      const int c = t * num_envs + e;
      const double r = rewards(0, c);
      const double v = next_values(0, c);
      if (t == horizon - 1 || done[c]) {
        following = r + gamma * v;
      } else {
        following = r + gamma * ((1.0 - lambda) * v + lambda * following);
      }
      targets(0, c) = following;
    }
  }
  return targets;
}

Matrix NextValues(const RolloutBuffer& buffer, const DoubleCritic& critics) {
  Matrix values = critics.VBar(buffer.next_states);
  for (int c = 0; c < buffer.size(); ++c) {
    if (buffer.done[c] && !buffer.bootstrap[c]) values(0, c) = 0.0;
  }
  return values;
}

Matrix ValueTargets(const RolloutBuffer& buffer, const DoubleCritic& critics, double gamma,
                    double lambda) {
  return TdLambdaTargets(buffer.rewards, NextValues(buffer, critics), buffer.done,
                         buffer.num_envs, buffer.horizon, gamma, lambda);
}

}  // namespace rpo
