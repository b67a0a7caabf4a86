#ifndef RPO_ALGO_H_
#define RPO_ALGO_H_

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rpo/envs.h"
#include "rpo/nn.h"
#include "rpo/policy.h"
#include "rpo/rng.h"
#include "rpo/rollout.h"
#include "rpo/value.h"

namespace rpo {

enum class Algorithm { kRpo, kShac, kSapo, kPpo };

std::string AlgorithmName(Algorithm algorithm);
Algorithm ParseAlgorithm(const std::string& name);

struct TrainerConfig {
  Algorithm algorithm = Algorithm::kRpo;
  int iterations = 390;
  int num_envs = 16;
  int horizon = 32;
  double gamma = 0.99;
  double td_lambda = 0.95;
  int policy_epochs = 5;
  int critic_epochs = 32;
  int critic_minibatches = 4;

  // importance-weight gate [1 - clip_low, 1 + clip_high]
  double clip_low = 0.8;
  double clip_high = 1.0;
  // false keeps the rho weighting but drops the gate
  bool clip_gate = true;
  double clip_coef = 1.0;
  double kl_coef = 0.4;
  double entropy_coef = 0.2;

  double actor_lr = 5e-4;
  double critic_lr = 5e-4;
  ScheduleKind lr_schedule = ScheduleKind::kExponential;
  double lr_final_ratio = 0.01;
  double kl_target = 0.008;
  double kl_lr_factor = 1.5;
  double adam_beta1 = 0.7;
  double adam_beta2 = 0.95;
  double weight_decay = 0.01;
  double grad_clip = 0.5;

  std::vector<int> actor_hidden = {64, 64};
  std::vector<int> critic_hidden = {64, 64};
  bool layer_norm = true;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  // entropy bonus in the reward with a SAC-style adapted temperature
  bool entropy_in_reward = true;
  bool adapt_temperature = true;
  double init_temperature = 1.0;
  double temperature_lr = 5e-4;
  // nullopt means -dim(A) / 2
  std::optional<double> target_entropy;

  // bootstrap the short-horizon objective with the critics
  bool terminal_value = true;

  // PPO baseline only
  double ppo_clip = 0.2;
  int ppo_minibatches = 4;
};

// defaults for each trainer kind; rpo is the value-initialized config
TrainerConfig DefaultTrainerConfig(Algorithm algorithm);

// ----- policy epoch ----- //

struct SurrogateOptions {
  double clip_low = 0.8;
  double clip_high = 1.0;
  bool clip_gate = true;
  double clip_coef = 1.0;
  double kl_coef = 0.0;
  double entropy_coef = 0.0;
  // one sweep per objective term so each gradient is reported on its own
  bool separate_terms = false;
};

struct EpochResult {
  // ascent direction of clip_coef*L_clip - kl_coef*L_KL + entropy_coef*L_ent
  Vector gradient;
  // filled when separate_terms is set (unscaled by coefficients)
  Vector clip_gradient;
  Vector kl_gradient;
  Vector entropy_gradient;
  // max |d KL_i / d(mean_i, log_std_i)| over transitions (separate_terms)
  double kl_head_grad_max = 0.0;

  Matrix ratios;     // (1 x batch)
  Matrix kl_values;  // (1 x batch)
  double ratio_mean = 0.0;
  double clip_fraction = 0.0;
  double kl_mean = 0.0;
  double kl_max = 0.0;
  double entropy_mean = 0.0;
  int boundary_clamps = 0;
  // no transition passed the gate; only KL/entropy gradients remain
  bool all_clipped = false;
};

// Regenerates the stored actions under the current policy, weights each
// cached action-gradient by rho when rho is inside the gate (zero
// otherwise), and adds the KL and explicit entropy gradients. The cached
// gradients are per trajectory, so the clip term averages over envs; the
// KL and entropy terms average over all transitions.
EpochResult PolicyEpoch(const RolloutBuffer& buffer, const SquashedNormalPolicy& policy,
                        const SurrogateOptions& options);

// ----- trainer ----- //

struct EpochMetrics {
  double ratio_mean = 0.0;
  double clip_fraction = 0.0;
  double kl_mean = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  double grad_norm_clipped = 0.0;
  bool all_clipped = false;
};

struct UpdateMetrics {
  int iteration = 0;
  long env_steps = 0;
  double mean_return = std::numeric_limits<double>::quiet_NaN();
  // KL(policy before || policy after) over the batch states
  double kl_mean = 0.0;
  double kl_raw_max = 0.0;
  double ratio_mean = 1.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  double actor_lr = 0.0;
  double critic_loss = 0.0;
  double temperature = 0.0;
  double objective = 0.0;
  std::vector<EpochMetrics> epochs;
  std::vector<double> critic_trace;
  bool failed = false;
  std::string failure;
};

struct EvalResult {
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_discounted = 0.0;
  double std_discounted = 0.0;
};

enum class EvalMode { kDeterministic, kStochastic };

std::string EvalModeName(EvalMode mode);
EvalMode ParseEvalMode(const std::string& name);

// full episodes from the given start states (one per column)
EvalResult EvaluateFrom(const SquashedNormalPolicy& policy, const DiffEnv& env,
                        const Matrix& start_states, EvalMode mode, Rng& rng, double gamma);
// episodes start from the env's initial distribution drawn from rng
EvalResult Evaluate(const SquashedNormalPolicy& policy, const DiffEnv& env, int episodes,
                    EvalMode mode, Rng& rng, double gamma);

// generalized advantage estimation over each env's window (reset at done)
Matrix Gae(const Matrix& rewards, const Matrix& values, const Matrix& next_values,
           const std::vector<std::uint8_t>& done, int num_envs, int horizon, double gamma,
           double lambda);

struct PpoGradient {
  Vector gradient;  // ascent direction of the clipped surrogate
  double ratio_mean = 0.0;
  double clip_fraction = 0.0;
};

// symmetric clipped score-function surrogate on the given columns
PpoGradient PpoSurrogateGradient(const RolloutBuffer& buffer, const std::vector<int>& columns,
                                 const Matrix& advantages, const SquashedNormalPolicy& policy,
                                 double clip);

// sees the buffer and the policy before each RPO policy epoch's update
using EpochObserver =
    std::function<void(int epoch, const RolloutBuffer&, const SquashedNormalPolicy&)>;

// Owns all mutable training state: env batch, actor, critics, optimizers,
// temperature and RNG streams. Iterations run sequentially.
class Trainer {
 public:
  Trainer(const DiffEnv& env, TrainerConfig config, std::uint64_t seed);

  UpdateMetrics Iterate();
  UpdateMetrics RpoIteration();
  // SHAC, or SAPO when the config enables the entropy bonus
  UpdateMetrics ShacIteration();
  UpdateMetrics PpoIteration();

  const TrainerConfig& config() const { return config_; }
  const SquashedNormalPolicy& policy() const { return policy_; }
  SquashedNormalPolicy& policy() { return policy_; }
  const DoubleCritic& critics() const { return critics_; }
  DoubleCritic& critics() { return critics_; }
  const EnvBatch& batch() const { return batch_; }
  long env_steps() const { return env_steps_; }
  int iteration() const { return iteration_; }
  double temperature() const;
  double target_entropy() const;
  RngRoots& rngs() { return rngs_; }
  void set_epoch_observer(EpochObserver observer) { observer_ = std::move(observer); }

  RolloutOptions MakeRolloutOptions() const;
  SurrogateOptions MakeSurrogateOptions() const;

 private:
  double ActorRate(std::optional<double> observed_kl = std::nullopt);
  double CriticRate();
  void StepActor(const Vector& ascent, double lr, EpochMetrics& metrics);
  void AdaptTemperature(double entropy_estimate);
  void TrainCritics(const RolloutBuffer& buffer, const Matrix& targets, UpdateMetrics& m);
  void Finish(const RolloutBuffer& buffer, const PolicyStats& before, UpdateMetrics& m);

  const DiffEnv& env_;
  TrainerConfig config_;
  RngRoots rngs_;
  SquashedNormalPolicy policy_;
  DoubleCritic critics_;
  AdamW actor_opt_;
  AdamW temperature_opt_;
  Vector log_temperature_;
  LrSchedule actor_schedule_;
  LrSchedule critic_schedule_;
  EnvBatch batch_;
  long env_steps_ = 0;
  int iteration_ = 0;
  std::vector<double> recent_returns_;
  EpochObserver observer_;
};

}  // namespace rpo

#endif  // RPO_ALGO_H_
