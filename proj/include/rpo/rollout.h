#ifndef RPO_ROLLOUT_H_
#define RPO_ROLLOUT_H_

#include <cstdint>
#include <optional>
#include <vector>

#include "rpo/envs.h"
#include "rpo/policy.h"
#include "rpo/rng.h"
#include "rpo/tape.h"
#include "rpo/value.h"

namespace rpo {

// Environment states carried from one collection to the next.
struct EnvBatch {
  Matrix states;                // state_dim x num_envs
  std::vector<int> steps;       // steps taken in the current episode
  std::vector<double> returns;  // undiscounted raw return of the current episode

  int size() const { return static_cast<int>(steps.size()); }
};

EnvBatch StartBatch(const DiffEnv& env, int num_envs, Rng& reset_rng);

struct RolloutOptions {
  int horizon = 32;
  double gamma = 0.99;
  // entropy bonus temperature * (-log pi(a|s)) added to each reward
  double temperature = 0.0;
  // let the bonus gradient reach the action of the same step (SAPO style);
  // otherwise only states carry it back to earlier actions
  bool entropy_through_action = false;
  // bootstrap the window end (and time-limit ends) with the mean critic
  bool terminal_value = true;
  // also return d(objective)/d(theta) from the same sweep
  bool policy_gradient = false;
};

// everything needed to rebuild the same objective deterministically
struct RolloutReplay {
  EnvBatch start;
  Matrix noise;                // action_dim x (horizon * num_envs)
  std::vector<Matrix> resets;  // reset states in the order they were drawn
};

// additive change to one recorded action, for finite-difference checks
struct ActionPerturbation {
  int step = 0;
  int env = 0;
  int dim = 0;
  double delta = 0.0;
};

// Transition t of env n lives in column t * num_envs + n.
struct RolloutBuffer {
  int num_envs = 0;
  int horizon = 0;

  Matrix states;
  Matrix actions;  // post-squash
  Matrix noise;
  Matrix next_states;  // before any episode reset
  Matrix rewards;      // including the entropy bonus
  Matrix raw_rewards;
  Matrix entropy;      // -log pi_old(a|s)
  PolicyStats old_stats;
  Matrix old_log_prob;
  // d(sum_n R_n)/d(a_{n,t}): the per-trajectory short-horizon objective
  // R_n = sum_k gamma^k r_k + gamma^h Vbar(s_h), one sweep for all entries
  Matrix action_grads;
  Matrix discounts;  // gamma^k of each transition within its segment
  std::vector<std::uint8_t> done;       // episode ended after this transition
  std::vector<std::uint8_t> bootstrap;  // ended by time limit
  double temperature = 0.0;

  double objective = 0.0;  // mean over envs of R_n
  Vector policy_gradient;  // d(objective)/d(theta) when requested
  int sweeps = 0;
  int boundary_clamps = 0;
  std::vector<double> completed_returns;
  RolloutReplay replay;

  int size() const { return num_envs * horizon; }
  int column(int step, int env) const { return step * num_envs + env; }
};

// Collects horizon steps from every env on one tape and sweeps it once.
// Advances batch in place. Throws NonFiniteError (after resetting the
// offending envs) when a state, reward or the objective is not finite.
RolloutBuffer Collect(const DiffEnv& env, const SquashedNormalPolicy& policy,
                      const DoubleCritic* critics, EnvBatch& batch,
                      const RolloutOptions& options, Rng& noise_rng, Rng& reset_rng);

// Rebuilds the collection objective (mean over envs) from a replay record,
// optionally with one action perturbed.
double ReplayObjective(const DiffEnv& env, const SquashedNormalPolicy& policy,
                       const DoubleCritic* critics, const RolloutReplay& replay,
                       const RolloutOptions& options,
                       std::optional<ActionPerturbation> perturbation = std::nullopt);

// TD-lambda recursion over each env's window:
//   G_t = r_t + gamma * next_value_t                     at window end or done
//   G_t = r_t + gamma * ((1 - lambda) next_value_t + lambda G_{t+1})  otherwise
// next_values must already be zero where an episode truly terminated.
Matrix TdLambdaTargets(const Matrix& rewards, const Matrix& next_values,
                       const std::vector<std::uint8_t>& done, int num_envs, int horizon,
                       double gamma, double lambda);

// mean-critic bootstrap values of every next state (zero at true terminals)
Matrix NextValues(const RolloutBuffer& buffer, const DoubleCritic& critics);

Matrix ValueTargets(const RolloutBuffer& buffer, const DoubleCritic& critics, double gamma,
                    double lambda);

}  // namespace rpo

#endif  // RPO_ROLLOUT_H_
