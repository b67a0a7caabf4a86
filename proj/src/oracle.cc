#include "rpo/oracle.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "rpo/algo.h"

namespace rpo {

// ----- LQR ----- //

namespace {

Matrix RiccatiStep(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                   double gamma, const Matrix& P) {
  const Matrix btpa = B.transpose() * P * A;
  const Matrix gain = (R + gamma * B.transpose() * P * B).ldlt().solve(btpa);
  return Q + gamma * A.transpose() * P * A - gamma * gamma * btpa.transpose() * gain;
}

}  // namespace

double RiccatiResidual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                       double gamma, const Matrix& P) {
  return (P - RiccatiStep(A, B, Q, R, gamma, P)).cwiseAbs().maxCoeff();
}

LqrSolution LqrSolve(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                     double gamma, int max_iterations) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != B.cols() || R.cols() != B.cols()) {
    throw std::invalid_argument("lqr: inconsistent matrix shapes");
  }
  LqrSolution sol;
  Matrix P = Q;
  for (int it = 1; it <= max_iterations; ++it) {
    Matrix next = RiccatiStep(A, B, Q, R, gamma, P);
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite()) {
      throw LqrDivergence("lqr: Riccati iteration diverged after " + std::to_string(it) +
                          " iterations");
    }
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (change <= 1e-14 * std::max(1.0, P.cwiseAbs().maxCoeff())) {
      sol.iterations = it;
      break;
    }
  }
  sol.residual = RiccatiResidual(A, B, Q, R, gamma, P);
  if (sol.iterations == 0 && sol.residual >= 1e-10) {
    throw LqrDivergence("lqr: no fixed point after " + std::to_string(max_iterations) +
                        " iterations (residual " + std::to_string(sol.residual) + ")");
  }
  if (sol.iterations == 0) sol.iterations = max_iterations;
  sol.K = (R + gamma * B.transpose() * P * B).ldlt().solve(gamma * B.transpose() * P * A);
  sol.P = std::move(P);
  return sol;
}

// ----- finite differences ----- //

Vector FiniteDifference(const ScalarFn& f, const Vector& x, double h) {
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

// ----- scalar policy model ----- //

double ScalarPolicyModel::Mean(double s) const { return theta(0) * s + theta(2); }

double ScalarPolicyModel::LogStd(double s) const {
  return std::clamp(theta(1) * s + theta(3), log_std_min, log_std_max);
}

bool ScalarPolicyModel::LogStdClamped(double s) const {
  const double raw = theta(1) * s + theta(3);
  return raw < log_std_min || raw > log_std_max;
}

double ScalarPolicyModel::Action(double s, double eps) const {
  const double u = Mean(s) + std::exp(LogStd(s)) * eps;
  return squash ? scale * std::tanh(u) + offset : u;
}

Vector ScalarPolicyModel::ActionGrad(double s, double eps) const {
  const double sigma = std::exp(LogStd(s));
  const double u = Mean(s) + sigma * eps;
  const double t = std::tanh(u);
  const double du = squash ? scale * (1.0 - t * t) : 1.0;
  const double dsig = LogStdClamped(s) ? 0.0 : sigma * eps;
  Vector g(4);
  g << du * s, du * dsig * s, du, du * dsig;
  return g;
}

double ScalarPolicyModel::ActionStateGrad(double s, double eps) const {
  const double sigma = std::exp(LogStd(s));
  const double u = Mean(s) + sigma * eps;
  const double t = std::tanh(u);
  const double du = squash ? scale * (1.0 - t * t) : 1.0;
  const double dsig = LogStdClamped(s) ? 0.0 : sigma * eps * theta(1);
  return du * (theta(0) + dsig);
}

ScalarPolicyModel ModelOf(const SquashedNormalPolicy& policy) {
  if (policy.state_dim() != 1 || policy.action_dim() != 1 ||
      !policy.net().options().hidden.empty()) {
    throw std::invalid_argument("oracle: needs a 1-D policy without hidden layers");
  }
  ScalarPolicyModel m;
  m.theta = policy.Flatten();
  m.scale = policy.bounds().scale()(0);
  m.offset = policy.bounds().offset()(0);
  m.log_std_min = policy.options().log_std_min;
  m.log_std_max = policy.options().log_std_max;
  return m;
}

SquashedNormalPolicy MakeLinearPolicy(const DiffEnv& env, const Vector& theta) {
  PolicyOptions options;
  options.mlp.hidden = {};
  SquashedNormalPolicy policy(env.state_dim(), env.bounds(), options);
  if (theta.size() != policy.NumParameters()) {
    throw std::invalid_argument("oracle: linear policy needs " +
                                std::to_string(policy.NumParameters()) + " parameters");
  }
  policy.Assign(theta);
  return policy;
}

// ----- quadrature ----- //

namespace {

struct Grid {
  std::vector<double> nodes;
  std::vector<double> weights;  // trapezoid weight times standard normal density
};

Grid NormalGrid(int points, double bound) {
  Grid g;
  const double h = 2.0 * bound / (points - 1);
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (int i = 0; i < points; ++i) {
    const double x = -bound + h * i;
    const double w = (i == 0 || i == points - 1) ? 0.5 * h : h;
    g.nodes.push_back(x);
    g.weights.push_back(w * norm * std::exp(-0.5 * x * x));
  }
  return g;
}

template <class Integrand>
QuadratureEstimate Refine(const Integrand& integrate, const QuadratureOptions& options) {
  if (options.initial_points < 3 || options.bound <= 0.0) {
    throw std::invalid_argument("quadrature: need >= 3 points and a positive bound");
  }
  int n = options.initial_points;
  Vector coarse = integrate(NormalGrid(n, options.bound));
  while (true) {
    const int finer = 2 * n - 1;
    if (finer > options.max_points) {
      throw QuadratureError("quadrature: grid refinement did not reach tolerance " +
                            std::to_string(options.tolerance) + " by " + std::to_string(n) +
                            " points");
    }
    const Vector fine = integrate(NormalGrid(finer, options.bound));
    const double change = (fine - coarse).cwiseAbs().maxCoeff();
    n = finer;
    coarse = fine;
    if (change < options.tolerance) {
      QuadratureEstimate est;
      est.gradient = fine;
      est.points = n;
      est.bound = options.bound;
      est.change = change;
      est.converged = true;
      return est;
    }
  }
}

}  // namespace

QuadratureEstimate BanditSurrogateGrad(const BanditParams& env,
                                       const ScalarPolicyModel& /*old_policy*/,
                                       const ScalarPolicyModel& new_policy,
                                       const QuadratureOptions& options) {
  // Q does not depend on the behavior policy for a one-step episode
  const double s = env.state;
  return Refine(
      [&](const Grid& g) {
        Vector sum = Vector::Zero(4);
        for (std::size_t i = 0; i < g.nodes.size(); ++i) {
          const double a = new_policy.Action(s, g.nodes[i]);
          sum += g.weights[i] * (-2.0 * (a - env.target)) * new_policy.ActionGrad(s, g.nodes[i]);
        }
        return sum;
      },
      options);
}

QuadratureEstimate ChainSurrogateGrad(const ChainParams& env, const ScalarPolicyModel& old_policy,
                                      const ScalarPolicyModel& new_policy, double gamma,
                                      const QuadratureOptions& options) {
  const double s0 = env.initial_state;
  const double cs = env.state_coef;
  const double ca = env.action_coef;
  const double aw = env.action_weight;
  return Refine(
      [&](const Grid& g) {
        const std::size_t n = g.nodes.size();
        Vector first = Vector::Zero(4);
        Vector second = Vector::Zero(4);
        for (std::size_t i = 0; i < n; ++i) {
          // step 0: d/da of r0 + gamma * E[r1] with a1 from the old policy
          const double e0 = g.nodes[i];
          const double a0 = new_policy.Action(s0, e0);
          const double s1 = cs * s0 + ca * a0;
          double dr1_ds1 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double a1 = old_policy.Action(s1, g.nodes[j]);
            const double da1 = old_policy.ActionStateGrad(s1, g.nodes[j]);
            dr1_ds1 += g.weights[j] * (-2.0 * s1 - 2.0 * aw * a1 * da1);
          }
          const double dq0 = -2.0 * aw * a0 + gamma * ca * dr1_ds1;
          first += g.weights[i] * dq0 * new_policy.ActionGrad(s0, e0);

          // step 1: states visited by the old policy, actions from the new
          const double s1_old = cs * s0 + ca * old_policy.Action(s0, e0);
          Vector inner = Vector::Zero(4);
          for (std::size_t j = 0; j < n; ++j) {
            const double a1 = new_policy.Action(s1_old, g.nodes[j]);
            inner += g.weights[j] * (-2.0 * aw * a1) * new_policy.ActionGrad(s1_old, g.nodes[j]);
          }
          second += g.weights[i] * inner;
        }
        return Vector(first + gamma * second);
      },
      options);
}

QuadratureEstimate SurrogateGradTrue(const DiffEnv& env, const SquashedNormalPolicy& old_policy,
                                     const SquashedNormalPolicy& new_policy, double gamma,
                                     const QuadratureOptions& options) {
  const ScalarPolicyModel old_model = ModelOf(old_policy);
  const ScalarPolicyModel new_model = ModelOf(new_policy);
  if (const auto* bandit = dynamic_cast<const QuadraticBandit*>(&env)) {
    return BanditSurrogateGrad(bandit->params(), old_model, new_model, options);
  }
  if (const auto* chain = dynamic_cast<const ChainQuadratic*>(&env)) {
    return ChainSurrogateGrad(chain->params(), old_model, new_model, gamma, options);
  }
  throw std::invalid_argument("oracle: surrogate gradient truth needs bandit or chain, got " +
                              env.name());
}

// ----- estimator lab ----- //

Vector ReinforceGradient(const RolloutBuffer& buffer, const SquashedNormalPolicy& policy,
                         double gamma, Matrix* ratios) {
  const int n = buffer.num_envs;
  const int total = buffer.size();
  Matrix to_go(1, total);
  for (int e = 0; e < n; ++e) {
    double following = 0.0;
    for (int t = buffer.horizon - 1; t >= 0; --t) {
      const int c = buffer.column(t, e);
      following = buffer.rewards(0, c) + (buffer.done[c] ? 0.0 : gamma * following);
      to_go(0, c) = following;
    }
  }
  Tape tape;
  const MlpBinding binding = policy.net().Bind(tape, true);
  const SquashedNormalPolicy::Heads heads =
      policy.RecordHeads(tape, binding, tape.Constant(buffer.states));
  const NodeRef log_prob =
      policy.RecordLogProb(tape, heads, tape.Constant(policy.PreSquash(buffer.actions)));
  const Matrix rho = (tape.Value(log_prob) - buffer.old_log_prob).array().exp().matrix();
  if (ratios) *ratios = rho;
  const Matrix seed =
      (rho.array() * buffer.discounts.array() * to_go.array() / static_cast<double>(n)).matrix();
  std::vector<std::pair<NodeRef, Matrix>> seeds = {{log_prob, seed}};
  tape.Backward(seeds);
  return policy.net().Gradient(tape, binding);
}

namespace {

EstimatorStats Summarize(const std::string& name, const std::vector<Vector>& batch_means,
                         int batch_size, const Vector& truth) {
  const int b = static_cast<int>(batch_means.size());
  EstimatorStats st;
  st.name = name;
  st.mean = Vector::Zero(truth.size());
  for (const Vector& m : batch_means) st.mean += m;
  st.mean /= b;
  Vector var = Vector::Zero(truth.size());
  for (const Vector& m : batch_means) var += (m - st.mean).cwiseAbs2();
  var /= std::max(1, b - 1);
  st.standard_error = (var / b).cwiseSqrt();
  st.variance = var * batch_size;
  st.deviation.resize(truth.size());
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    const double diff = st.mean(i) - truth(i);
    const double se = st.standard_error(i);
    st.deviation(i) = se > 0.0 ? diff / se
                               : (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  }
  st.max_abs_deviation = st.deviation.cwiseAbs().maxCoeff();
  return st;
}

nlohmann::json ToJson(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json ToJson(const EstimatorStats& s) {
  return {{"name", s.name},
          {"mean", ToJson(s.mean)},
          {"standard_error", ToJson(s.standard_error)},
          {"deviation_se", ToJson(s.deviation)},
          {"variance", ToJson(s.variance)},
          {"max_abs_deviation_se", s.max_abs_deviation}};
}

nlohmann::json ToJson(const QuadratureEstimate& q) {
  return {{"gradient", ToJson(q.gradient)},
          {"points", q.points},
          {"bound", q.bound},
          {"refinement_change", q.change},
          {"converged", q.converged}};
}

}  // namespace

nlohmann::json LabReport::ToJson() const {
  return {{"env", env},
          {"samples", samples},
          {"batches", batches},
          {"truth_on_policy", rpo::ToJson(truth_on_policy)},
          {"truth_off_policy", rpo::ToJson(truth_off_policy)},
          {"estimators",
           {rpo::ToJson(on_policy), rpo::ToJson(off_policy), rpo::ToJson(reinforce)}},
          {"ratio_min", ratio_min},
          {"ratio_max", ratio_max}};
}

LabReport EstimatorLab(const DiffEnv& env, const SquashedNormalPolicy& old_policy,
                       const SquashedNormalPolicy& new_policy, const LabOptions& options) {
  if (options.batch_size < 1 || options.samples < 2 * options.batch_size) {
    throw std::invalid_argument("estimator lab: need at least two batches of samples");
  }
  LabReport report;
  report.env = env.name();
  report.batches = options.samples / options.batch_size;
  report.samples = report.batches * options.batch_size;
  report.truth_on_policy = SurrogateGradTrue(env, old_policy, old_policy, options.gamma);
  report.truth_off_policy = SurrogateGradTrue(env, old_policy, new_policy, options.gamma);

  const Rng root(options.seed, 0);
  Rng noise = root.Split(1);
  Rng reset = root.Split(2);
  RolloutOptions ro;
  ro.horizon = env.episode_length();
  ro.gamma = options.gamma;
  ro.terminal_value = false;
  SurrogateOptions so;
  so.clip_gate = false;

  std::vector<Vector> on, off, score;
  report.ratio_min = std::numeric_limits<double>::infinity();
  report.ratio_max = -std::numeric_limits<double>::infinity();
  for (int b = 0; b < report.batches; ++b) {
    EnvBatch batch = StartBatch(env, options.batch_size, reset);
    const RolloutBuffer buffer = Collect(env, old_policy, nullptr, batch, ro, noise, reset);
    on.push_back(PolicyEpoch(buffer, old_policy, so).gradient);
    const EpochResult shifted = PolicyEpoch(buffer, new_policy, so);
    off.push_back(shifted.gradient);
    report.ratio_min = std::min(report.ratio_min, shifted.ratios.minCoeff());
    report.ratio_max = std::max(report.ratio_max, shifted.ratios.maxCoeff());
    score.push_back(ReinforceGradient(buffer, new_policy, options.gamma));
  }
  report.on_policy =
      Summarize("on_policy_cached", on, options.batch_size, report.truth_on_policy.gradient);
  report.off_policy =
      Summarize("off_policy_weighted", off, options.batch_size, report.truth_off_policy.gradient);
  report.reinforce =
      Summarize("reinforce", score, options.batch_size, report.truth_off_policy.gradient);
  return report;
}

}  // namespace rpo
