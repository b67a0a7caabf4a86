#include "rpo/envs.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rpo {
namespace {

ActionBounds Box(int dim, double bound) {
  return {Vector::Constant(dim, -bound), Vector::Constant(dim, bound)};
}

}  // namespace

void DiffEnv::CheckShapes(NodeRef states, NodeRef actions) const {
  if (states.rows != state_dim() || actions.rows != action_dim() ||
      states.cols != actions.cols) {
    throw std::invalid_argument(name() + ": step expects states (" +
                                std::to_string(state_dim()) + " x n) and actions (" +
                                std::to_string(action_dim()) + " x n)");
  }
}

std::pair<Matrix, Matrix> DiffEnv::Step(const Matrix& states, const Matrix& actions) const {
  Tape tape;
  const StepNodes out = Step(tape, tape.Constant(states), tape.Constant(actions));
  return {tape.Value(out.next_state), tape.Value(out.reward)};
}

// ----- double integrator ----- //

ActionBounds DoubleIntegrator::bounds() const { return Box(1, 1.0); }

Matrix DoubleIntegrator::A() const {
  Matrix a(2, 2);
  a << 1.0, params_.dt, 0.0, 1.0;
  return a;
}

Matrix DoubleIntegrator::B() const {
  Matrix b(2, 1);
  b << 0.0, params_.dt;
  return b;
}

Matrix DoubleIntegrator::Q() const {
  Matrix q = Matrix::Zero(2, 2);
  q(0, 0) = params_.position_weight;
  q(1, 1) = params_.velocity_weight;
  return q;
}

Matrix DoubleIntegrator::R() const {
  return Matrix::Constant(1, 1, params_.action_weight);
}

Matrix DoubleIntegrator::Reset(Rng& rng, int count) const {
  Matrix s(2, count);
  for (int j = 0; j < count; ++j) {
    s(0, j) = rng.Uniform(-params_.init_range, params_.init_range);
    s(1, j) = rng.Uniform(-params_.init_range, params_.init_range);
  }
  return s;
}

StepNodes DoubleIntegrator::Step(Tape& tape, NodeRef states, NodeRef actions) const {
  CheckShapes(states, actions);
  const NodeRef next = tape.Add(tape.MatMul(tape.Constant(A()), states),
                                tape.MatMul(tape.Constant(B()), actions));
  Matrix weights(1, 2);
  weights << params_.position_weight, params_.velocity_weight;
  const NodeRef state_cost = tape.MatMul(tape.Constant(weights), tape.Square(states));
  const NodeRef action_cost = tape.Scale(tape.Sum(tape.Square(actions), 0), params_.action_weight);
  return {next, tape.Scale(tape.Add(state_cost, action_cost), -1.0)};
}

// ----- pendulum ----- //

ActionBounds SmoothPendulum::bounds() const { return Box(1, params_.max_torque); }

Matrix SmoothPendulum::FromAngle(double phi, double phi_dot) {
  Matrix s(3, 1);
  s << std::cos(phi), std::sin(phi), phi_dot;
  return s;
}

Matrix SmoothPendulum::Reset(Rng& rng, int count) const {
  Matrix s(3, count);
  for (int j = 0; j < count; ++j) {
    const double phi = rng.Uniform(-std::numbers::pi, std::numbers::pi);
    const double phi_dot = rng.Uniform(-1.0, 1.0);
    s.col(j) = FromAngle(phi, phi_dot);
  }
  return s;
}

StepNodes SmoothPendulum::Step(Tape& tape, NodeRef states, NodeRef actions) const {
  CheckShapes(states, actions);
  const PendulumParams& p = params_;
  const NodeRef cos_phi = tape.Slice(states, 0, 1);
  const NodeRef sin_phi = tape.Slice(states, 1, 1);
  const NodeRef phi_dot = tape.Slice(states, 2, 1);

  // phi_ddot = -(g/l) sin(phi + pi) + a / (m l^2) = (g/l) sin(phi) + a / (m l^2)
  const NodeRef accel = tape.Add(tape.Scale(sin_phi, p.gravity / p.length),
                                 tape.Scale(actions, 1.0 / (p.mass * p.length * p.length)));
  NodeRef speed = tape.Add(phi_dot, tape.Scale(accel, p.dt));
  if (p.hard_clamp) {
    speed = tape.Clamp(speed, -p.max_speed, p.max_speed);
  } else {
    speed = tape.Scale(tape.Tanh(tape.Scale(speed, 1.0 / p.max_speed)), p.max_speed);
  }
  const NodeRef delta = tape.Scale(speed, p.dt);
  const NodeRef cd = tape.Cos(delta);
  const NodeRef sd = tape.Sin(delta);
  const NodeRef next_cos = tape.Sub(tape.Mul(cos_phi, cd), tape.Mul(sin_phi, sd));
  const NodeRef next_sin = tape.Add(tape.Mul(sin_phi, cd), tape.Mul(cos_phi, sd));
  const NodeRef parts[3] = {next_cos, next_sin, speed};
  const NodeRef next = tape.Concat(parts, 0);

  // 2 (1 - cos) is the squared chord to upright, smooth everywhere
  const NodeRef angle_cost = tape.Scale(tape.Sub(tape.Scalar(1.0), cos_phi), 2.0);
  NodeRef cost = tape.Add(angle_cost, tape.Scale(tape.Square(phi_dot), p.velocity_weight));
  cost = tape.Add(cost, tape.Scale(tape.Square(actions), p.action_weight));
  return {next, tape.Scale(cost, -1.0)};
}

// ----- bandit ----- //

ActionBounds QuadraticBandit::bounds() const { return Box(1, 1.0); }

Matrix QuadraticBandit::Reset(Rng& /*rng*/, int count) const {
  return Matrix::Constant(1, count, params_.state);
}

StepNodes QuadraticBandit::Step(Tape& tape, NodeRef states, NodeRef actions) const {
  CheckShapes(states, actions);
  const NodeRef err = tape.Sub(actions, tape.Scalar(params_.target));
  return {states, tape.Scale(tape.Square(err), -1.0)};
}

// ----- chain ----- //

ActionBounds ChainQuadratic::bounds() const { return Box(1, params_.action_bound); }

Matrix ChainQuadratic::Reset(Rng& /*rng*/, int count) const {
  return Matrix::Constant(1, count, params_.initial_state);
}

StepNodes ChainQuadratic::Step(Tape& tape, NodeRef states, NodeRef actions) const {
  CheckShapes(states, actions);
  const NodeRef next = tape.Add(tape.Scale(states, params_.state_coef),
                                tape.Scale(actions, params_.action_coef));
  const NodeRef cost =
      tape.Add(tape.Square(states), tape.Scale(tape.Square(actions), params_.action_weight));
  return {next, tape.Scale(cost, -1.0)};
}

std::unique_ptr<DiffEnv> MakeEnv(const EnvConfig& config) {
  if (config.name == "double_integrator") {
    return std::make_unique<DoubleIntegrator>(config.double_integrator);
  }
  if (config.name == "pendulum") return std::make_unique<SmoothPendulum>(config.pendulum);
  if (config.name == "bandit") return std::make_unique<QuadraticBandit>(config.bandit);
  if (config.name == "chain") return std::make_unique<ChainQuadratic>(config.chain);
  throw std::invalid_argument("unknown environment '" + config.name + "'");
}

}  // namespace rpo
