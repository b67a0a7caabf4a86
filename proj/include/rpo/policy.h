#ifndef RPO_POLICY_H_
#define RPO_POLICY_H_

#include "rpo/nn.h"
#include "rpo/rng.h"
#include "rpo/tape.h"

namespace rpo {

// per-dimension box [low, high]
struct ActionBounds {
  Vector low;
  Vector high;

  int dim() const { return static_cast<int>(low.size()); }
  Vector scale() const { return 0.5 * (high - low); }
  Vector offset() const { return 0.5 * (high + low); }
};

struct PolicyOptions {
  MlpOptions mlp = {.hidden = {64, 64}, .layer_norm = true, .hidden_gain = 1.0,
                    .head_gain = 0.01};
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  // fraction of the half-range kept clear of the bounds before atanh
  double boundary_margin = 1e-6;
};

// Gaussian parameters (pre-squash) per action dimension, one column per state.
struct PolicyStats {
  Matrix mean;
  Matrix std;
};

// Reparameterized squashed normal actor:
//   u = mean(s) + std(s) * eps,  a = scale * tanh(u) + offset
// mean and log-std come from one network whose head is [mean; log_std], the
// log-std half clamped to [log_std_min, log_std_max].
class SquashedNormalPolicy {
 public:
  SquashedNormalPolicy() = default;
  SquashedNormalPolicy(int state_dim, ActionBounds bounds, PolicyOptions options = {});

  void Initialize(Rng& rng) { net_.Initialize(rng); }

  int state_dim() const { return net_.input_dim(); }
  int action_dim() const { return bounds_.dim(); }
  const ActionBounds& bounds() const { return bounds_; }
  const PolicyOptions& options() const { return options_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  int NumParameters() const { return net_.NumParameters(); }
  Vector Flatten() const { return net_.Flatten(); }
  void Assign(const Vector& flat) { net_.Assign(flat); }

  struct Heads {
    NodeRef mean;
    NodeRef log_std;
    NodeRef std;
  };
  struct SampleNodes {
    NodeRef pre_squash;
    NodeRef action;
  };

  Heads RecordHeads(Tape& tape, const MlpBinding& binding, NodeRef states) const;
  SampleNodes RecordSample(Tape& tape, const Heads& heads, NodeRef noise) const;
  // squash of an arbitrary pre-squash node
  NodeRef RecordSquash(Tape& tape, NodeRef pre_squash) const;
  // log-density of the squashed action whose pre-squash value is
  // pre_squash; returns (1 x batch)
  NodeRef RecordLogProb(Tape& tape, const Heads& heads, NodeRef pre_squash) const;
  // KL(old || current) of the pre-squash Gaussians, summed over action
  // dimensions; old stats are constants. (1 x batch)
  NodeRef RecordKl(Tape& tape, const Heads& heads, const PolicyStats& old) const;

  PolicyStats Stats(const Matrix& states) const;
  Matrix Sample(const Matrix& states, const Matrix& noise) const;
  // actions for eps = 0
  Matrix Deterministic(const Matrix& states) const;
  // pre-squash values of actions, pulled inside the open box first
  Matrix PreSquash(const Matrix& actions, int* clamp_count = nullptr) const;
  // eps_reg such that Sample(states, eps_reg) reproduces the actions
  Matrix Inverse(const Matrix& states, const Matrix& actions, int* clamp_count = nullptr) const;
  Matrix LogProb(const Matrix& states, const Matrix& actions, int* clamp_count = nullptr) const;
  // single-sample entropy estimate -log pi(a|s)
  Matrix EntropyEstimate(const Matrix& states, const Matrix& actions) const;
  Matrix KlGaussian(const PolicyStats& old, const Matrix& states) const;

 private:
  ActionBounds bounds_;
  PolicyOptions options_;
  Mlp net_;
};

// log-density of squashed actions from explicit Gaussian parameters
Matrix SquashedLogProb(const PolicyStats& stats, const Matrix& pre_squash,
                       const Vector& scale);

// log(1 - tanh(u)^2) without cancellation
double LogOneMinusTanhSq(double u);

}  // namespace rpo

#endif  // RPO_POLICY_H_
