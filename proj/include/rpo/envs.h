#ifndef RPO_ENVS_H_
#define RPO_ENVS_H_

#include <memory>
#include <string>
#include <utility>

#include "rpo/policy.h"
#include "rpo/rng.h"
#include "rpo/tape.h"

namespace rpo {

struct StepNodes {
  NodeRef next_state;
  NodeRef reward;  // (1 x batch)
};

// Differentiable environment. States are (state_dim x batch); step is
// deterministic and built from tape primitives, so d(next)/d(state),
// d(next)/d(action) and the reward gradients all come from the tape.
class DiffEnv {
 public:
  virtual ~DiffEnv() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual ActionBounds bounds() const = 0;
  virtual double dt() const = 0;
  virtual int episode_length() const = 0;
  // episodes that end by time limit are bootstrapped from the critic;
  // finite-horizon problems end for real
  virtual bool bootstrap_at_end() const = 0;

  virtual Matrix Reset(Rng& rng, int count) const = 0;
  virtual StepNodes Step(Tape& tape, NodeRef states, NodeRef actions) const = 0;

  // plain evaluation of Step: (next states, rewards)
  std::pair<Matrix, Matrix> Step(const Matrix& states, const Matrix& actions) const;

 protected:
  void CheckShapes(NodeRef states, NodeRef actions) const;
};

struct DoubleIntegratorParams {
  double dt = 0.1;
  int episode_length = 128;
  double position_weight = 1.0;
  double velocity_weight = 0.1;
  double action_weight = 0.01;
  double init_range = 1.0;
};

// s = (p, v), s' = (p + dt v, v + dt a), r = -(p^2 + 0.1 v^2 + 0.01 a^2)
class DoubleIntegrator : public DiffEnv {
 public:
  explicit DoubleIntegrator(DoubleIntegratorParams params = {}) : params_(params) {}

  std::string name() const override { return "double_integrator"; }
  int state_dim() const override { return 2; }
  int action_dim() const override { return 1; }
  ActionBounds bounds() const override;
  double dt() const override { return params_.dt; }
  int episode_length() const override { return params_.episode_length; }
  bool bootstrap_at_end() const override { return true; }
  Matrix Reset(Rng& rng, int count) const override;
  StepNodes Step(Tape& tape, NodeRef states, NodeRef actions) const override;
  using DiffEnv::Step;

  const DoubleIntegratorParams& params() const { return params_; }
  // linear-quadratic form: s' = A s + B a, r = -(s'Qs + a'Ra)
  Matrix A() const;
  Matrix B() const;
  Matrix Q() const;
  Matrix R() const;

 private:
  DoubleIntegratorParams params_;
};

struct PendulumParams {
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double dt = 0.05;
  double max_speed = 8.0;
  double max_torque = 2.0;
  int episode_length = 200;
  double velocity_weight = 0.1;
  double action_weight = 0.001;
  // hard velocity clamp instead of the smooth tanh bound
  bool hard_clamp = false;
};

// s = (cos phi, sin phi, phi_dot) with phi = 0 upright. Semi-implicit Euler;
// the angle update is a rotation of (cos, sin) so the embedding stays exact.
// r = -(2 (1 - cos phi) + 0.1 phi_dot^2 + 0.001 a^2)
class SmoothPendulum : public DiffEnv {
 public:
  explicit SmoothPendulum(PendulumParams params = {}) : params_(params) {}

  std::string name() const override { return "pendulum"; }
  int state_dim() const override { return 3; }
  int action_dim() const override { return 1; }
  ActionBounds bounds() const override;
  double dt() const override { return params_.dt; }
  int episode_length() const override { return params_.episode_length; }
  bool bootstrap_at_end() const override { return true; }
  Matrix Reset(Rng& rng, int count) const override;
  StepNodes Step(Tape& tape, NodeRef states, NodeRef actions) const override;
  using DiffEnv::Step;

  static Matrix FromAngle(double phi, double phi_dot);

 private:
  PendulumParams params_;
};

struct BanditParams {
  double target = 0.3;
  double state = 1.0;
};

// one step from a fixed state, r = -(a - a*)^2, a in [-1, 1]
class QuadraticBandit : public DiffEnv {
 public:
  explicit QuadraticBandit(BanditParams params = {}) : params_(params) {}

  std::string name() const override { return "bandit"; }
  int state_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  ActionBounds bounds() const override;
  double dt() const override { return 1.0; }
  int episode_length() const override { return 1; }
  bool bootstrap_at_end() const override { return false; }
  Matrix Reset(Rng& rng, int count) const override;
  StepNodes Step(Tape& tape, NodeRef states, NodeRef actions) const override;
  using DiffEnv::Step;

  const BanditParams& params() const { return params_; }

 private:
  BanditParams params_;
};

struct ChainParams {
  double initial_state = 1.0;
  double state_coef = 0.9;
  double action_coef = 0.5;
  double action_weight = 0.1;
  double action_bound = 2.0;
};

// two steps, s' = 0.9 s + 0.5 a, r = -(s^2 + 0.1 a^2), s0 = 1
class ChainQuadratic : public DiffEnv {
 public:
  explicit ChainQuadratic(ChainParams params = {}) : params_(params) {}

  std::string name() const override { return "chain"; }
  int state_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  ActionBounds bounds() const override;
  double dt() const override { return 1.0; }
  int episode_length() const override { return 2; }
  bool bootstrap_at_end() const override { return false; }
  Matrix Reset(Rng& rng, int count) const override;
  StepNodes Step(Tape& tape, NodeRef states, NodeRef actions) const override;
  using DiffEnv::Step;

  const ChainParams& params() const { return params_; }

 private:
  ChainParams params_;
};

struct EnvConfig {
  std::string name = "double_integrator";
  DoubleIntegratorParams double_integrator;
  PendulumParams pendulum;
  BanditParams bandit;
  ChainParams chain;
};

std::unique_ptr<DiffEnv> MakeEnv(const EnvConfig& config);

}  // namespace rpo

#endif  // RPO_ENVS_H_
