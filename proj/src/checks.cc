#include "rpo/checks.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>

#include "rpo/envs.h"
#include "rpo/oracle.h"
#include "rpo/rollout.h"
#include "rpo/tape.h"

namespace rpo {
namespace {

using UnaryOp = std::function<NodeRef(Tape&, std::span<const NodeRef>)>;

struct PrimitiveCase {
  std::string name;
  std::vector<std::pair<int, int>> shapes;
  double lo = -3.0;
  double hi = 3.0;
  UnaryOp op;
  // reject points too close to a kink
  std::function<bool(const std::vector<Matrix>&)> admissible = {};
};

Matrix UniformMatrix(Rng& rng, int rows, int cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.Uniform(lo, hi);
  return m;
}

std::vector<PrimitiveCase> PrimitiveCases() {
  using S = std::span<const NodeRef>;
  std::vector<PrimitiveCase> cases = {
      {"add", {{3, 4}, {3, 4}}, -3, 3, [](Tape& t, S x) { return t.Add(x[0], x[1]); }},
      {"add_broadcast_col", {{3, 4}, {3, 1}}, -3, 3,
       [](Tape& t, S x) { return t.Add(x[0], x[1]); }},
      {"add_broadcast_row", {{3, 4}, {1, 4}}, -3, 3,
       [](Tape& t, S x) { return t.Add(x[0], x[1]); }},
      {"sub", {{3, 4}, {1, 1}}, -3, 3, [](Tape& t, S x) { return t.Sub(x[0], x[1]); }},
      {"mul", {{3, 4}, {3, 4}}, -3, 3, [](Tape& t, S x) { return t.Mul(x[0], x[1]); }},
      {"mul_broadcast", {{3, 4}, {3, 1}}, -3, 3, [](Tape& t, S x) { return t.Mul(x[0], x[1]); }},
      {"matmul", {{3, 4}, {4, 2}}, -3, 3, [](Tape& t, S x) { return t.MatMul(x[0], x[1]); }},
      {"tanh", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Tanh(x[0]); }},
      {"atanh", {{3, 4}}, -0.999, 0.999, [](Tape& t, S x) { return t.Atanh(x[0]); }},
      {"sin", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Sin(x[0]); }},
      {"cos", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Cos(x[0]); }},
      {"exp", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Exp(x[0]); }},
      {"log", {{3, 4}}, 0.05, 3, [](Tape& t, S x) { return t.Log(x[0]); }},
      {"square", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Square(x[0]); }},
      {"silu", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Silu(x[0]); }},
      {"softplus", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Softplus(x[0]); }},
      {"clamp", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Clamp(x[0], -1.5, 1.5); },
       [](const std::vector<Matrix>& in) {
         return ((in[0].array().abs() - 1.5).abs() > 1e-3).all();
       }},
      {"normalize", {{4, 3}}, -3, 3, [](Tape& t, S x) { return t.Normalize(x[0]); }},
      {"sum_all", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Sum(x[0]); }},
      {"sum_rows", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Sum(x[0], 0); }},
      {"sum_cols", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Sum(x[0], 1); }},
      {"scale", {{3, 4}}, -3, 3, [](Tape& t, S x) { return t.Scale(x[0], -1.7); }},
      {"concat_rows", {{2, 3}, {1, 3}}, -3, 3,
       [](Tape& t, S x) { return t.Concat(x, 0); }},
      {"concat_cols", {{2, 3}, {2, 2}}, -3, 3,
       [](Tape& t, S x) { return t.Concat(x, 1); }},
      {"slice_rows", {{4, 3}}, -3, 3, [](Tape& t, S x) { return t.Slice(x[0], 1, 2, 0); }},
      {"slice_cols", {{4, 3}}, -3, 3, [](Tape& t, S x) { return t.Slice(x[0], 1, 2, 1); }},
  };
  return cases;
}

CheckResult Finish(std::string name, double error, double tolerance, std::string detail = {}) {
  CheckResult r;
  r.name = std::move(name);
  r.error = error;
  r.tolerance = tolerance;
  r.passed = std::isfinite(error) && error < tolerance;
  r.detail = std::move(detail);
  return r;
}

CheckResult CheckPrimitive(const PrimitiveCase& c, const GradientCheckOptions& options, Rng rng) {
  double worst = 0.0;
  for (int k = 0; k < options.points; ++k) {
    std::vector<Matrix> inputs;
    do {
      inputs.clear();
      for (const auto& [rows, cols] : c.shapes) {
        inputs.push_back(UniformMatrix(rng, rows, cols, c.lo, c.hi));
      }
    } while (c.admissible && !c.admissible(inputs));
    const Matrix weights = [&] {
      Tape probe;
      std::vector<NodeRef> refs;
      for (const Matrix& m : inputs) refs.push_back(probe.Constant(m));
      const NodeRef out = c.op(probe, refs);
      return UniformMatrix(rng, out.rows, out.cols, -1.0, 1.0);
    }();
    const GraphFn f = [&](Tape& tape, std::span<const NodeRef> in) {
      return tape.Sum(tape.Mul(c.op(tape, in), tape.Constant(weights)));
    };
    worst = std::max(worst, GradCheck(f, inputs).max_relative_error);
  }
  return Finish("primitive/" + c.name, worst, options.tolerance);
}

Matrix RandomStates(const DiffEnv& env, Rng& rng, int count) {
  if (env.name() == "pendulum") {
    Matrix s(3, count);
    for (int i = 0; i < count; ++i) {
      const double phi = rng.Uniform(-3.1, 3.1);
      s(0, i) = std::cos(phi);
      s(1, i) = std::sin(phi);
      s(2, i) = rng.Uniform(-6.0, 6.0);
    }
    return s;
  }
  return UniformMatrix(rng, env.state_dim(), count, -1.5, 1.5);
}

Matrix RandomActions(const DiffEnv& env, Rng& rng, int count) {
  const ActionBounds b = env.bounds();
  Matrix a(env.action_dim(), count);
  for (int i = 0; i < count; ++i) {
    for (int d = 0; d < env.action_dim(); ++d) {
      a(d, i) = rng.Uniform(0.95 * b.low(d), 0.95 * b.high(d));
    }
  }
  return a;
}

CheckResult CheckEnvStep(const DiffEnv& env, const GradientCheckOptions& options, Rng rng) {
  double worst = 0.0;
  for (int k = 0; k < options.points; ++k) {
    const Matrix s = RandomStates(env, rng, 1);
    const Matrix a = RandomActions(env, rng, 1);
    const Matrix ws = UniformMatrix(rng, env.state_dim(), 1, -1.0, 1.0);
    const double wr = rng.Uniform(0.5, 1.5);
    const GraphFn f = [&](Tape& tape, std::span<const NodeRef> in) {
      const StepNodes step = env.Step(tape, in[0], in[1]);
      return tape.Add(tape.Sum(tape.Mul(step.next_state, tape.Constant(ws))),
                      tape.Scale(tape.Sum(step.reward), wr));
    };
    worst = std::max(worst, GradCheck(f, {s, a}).max_relative_error);
  }
  return Finish("env_step/" + env.name(), worst, options.tolerance);
}

CheckResult CheckIntegratorReturn(const GradientCheckOptions& options, Rng rng) {
  const DoubleIntegrator env;
  const int steps = 8;
  double worst = 0.0;
  for (int k = 0; k < options.points; ++k) {
    const Matrix s0 = UniformMatrix(rng, 2, 1, -1.0, 1.0);
    const Matrix actions = UniformMatrix(rng, 1, steps, -0.95, 0.95);
    const GraphFn f = [&](Tape& tape, std::span<const NodeRef> in) {
      NodeRef s = in[0];
      NodeRef total;
      for (int t = 0; t < steps; ++t) {
        const StepNodes step = env.Step(tape, s, tape.Slice(in[1], t, 1, 1));
        const NodeRef r = tape.Scale(step.reward, std::pow(0.99, t));
        total = total.valid() ? tape.Add(total, r) : r;
        s = step.next_state;
      }
      return tape.Sum(total);
    };
    worst = std::max(worst, GradCheck(f, {s0, actions}).max_relative_error);
  }
  return Finish("double_integrator/8_step_return", worst, options.tolerance);
}

// cached action-gradients and the single-tape parameter gradient against
// finite differences of a replayed collection
std::vector<CheckResult> CheckRollout(const GradientCheckOptions& options, Rng rng) {
  const SmoothPendulum env;
  PolicyOptions po;
  po.mlp.hidden = {8};
  po.mlp.head_gain = 0.5;
  SquashedNormalPolicy policy(env.state_dim(), env.bounds(), po);
  Rng init = rng.Split(0);
  policy.Initialize(init);
  MlpOptions co;
  co.hidden = {8};
  DoubleCritic critics(env.state_dim(), co);
  critics.Initialize(rng.Split(1), rng.Split(2));

  // the detached-sample entropy bonus is a stop-gradient by construction, so
  // only settings whose tape is the full derivative are compared: no bonus,
  // and a bonus differentiated through the sampled action
  double worst_action = 0.0;
  double worst_param = 0.0;
  std::uint64_t stream = 3;
  for (const double temperature : {0.0, 0.1}) {
    RolloutOptions ro;
    ro.horizon = 5;
    ro.gamma = 0.97;
    ro.temperature = temperature;
    ro.entropy_through_action = temperature != 0.0;
    ro.policy_gradient = true;
    Rng noise = rng.Split(stream++);
    Rng reset = rng.Split(stream++);
    EnvBatch batch = StartBatch(env, 3, reset);
    const RolloutBuffer buffer = Collect(env, policy, &critics, batch, ro, noise, reset);
    const double h = 1e-6;
    const int n = buffer.num_envs;

    for (int t = 0; t < buffer.horizon; ++t) {
      for (int e = 0; e < n; ++e) {
        ActionPerturbation up{t, e, 0, h};
        ActionPerturbation down{t, e, 0, -h};
        const double fd = (ReplayObjective(env, policy, &critics, buffer.replay, ro, up) -
                           ReplayObjective(env, policy, &critics, buffer.replay, ro, down)) /
                          (2.0 * h) * n;
        const double ad = buffer.action_grads(0, buffer.column(t, e));
        worst_action = std::max(worst_action, std::abs(ad - fd) / std::max(1.0, std::abs(fd)));
      }
    }

    const Vector theta = policy.Flatten();
    const ScalarFn objective = [&](const Vector& x) {
      SquashedNormalPolicy probe = policy;
      probe.Assign(x);
      return ReplayObjective(env, probe, &critics, buffer.replay, ro);
    };
    const Vector fd = FiniteDifference(objective, theta, h);
    worst_param = std::max(worst_param, ((buffer.policy_gradient - fd).array().abs() /
                                         fd.array().abs().max(1.0))
                                            .maxCoeff());
  }
  return {Finish("rollout/cached_action_gradients", worst_action, options.tolerance),
          Finish("rollout/policy_parameter_gradient", worst_param, options.tolerance)};
}

CheckResult CheckLqr() {
  const DoubleIntegrator env;
  try {
    const LqrSolution sol = LqrSolve(env.A(), env.B(), env.Q(), env.R(), 0.99);
    return Finish("lqr/riccati_residual", sol.residual, 1e-10,
                  std::to_string(sol.iterations) + " iterations");
  } catch (const LqrDivergence& e) {
    return Finish("lqr/riccati_residual", std::numeric_limits<double>::infinity(), 1e-10,
                  e.what());
  }
}

}  // namespace

std::vector<CheckResult> RunGradientChecks(const GradientCheckOptions& options) {
  const Rng root(options.seed, 0);
  std::vector<CheckResult> results;
  std::uint64_t child = 0;
  for (const PrimitiveCase& c : PrimitiveCases()) {
    results.push_back(CheckPrimitive(c, options, root.Split(child++)));
  }
  std::vector<std::unique_ptr<DiffEnv>> envs;
  envs.push_back(std::make_unique<DoubleIntegrator>());
  envs.push_back(std::make_unique<SmoothPendulum>());
  envs.push_back(std::make_unique<QuadraticBandit>());
  envs.push_back(std::make_unique<ChainQuadratic>());
  for (const auto& env : envs) results.push_back(CheckEnvStep(*env, options, root.Split(child++)));
  results.push_back(CheckIntegratorReturn(options, root.Split(child++)));
  for (CheckResult& r : CheckRollout(options, root.Split(child++))) results.push_back(r);
  results.push_back(CheckLqr());
  return results;
}

}  // namespace rpo
