#include "rpo/policy.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rpo {

double LogOneMinusTanhSq(double u) {
  const double x = std::abs(u);
  return 2.0 * (std::numbers::ln2 - x - std::log1p(std::exp(-2.0 * x)));
}

Matrix SquashedLogProb(const PolicyStats& stats, const Matrix& pre_squash,
                       const Vector& scale) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Matrix out = Matrix::Zero(1, pre_squash.cols());
  for (Eigen::Index j = 0; j < pre_squash.cols(); ++j) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < pre_squash.rows(); ++i) {
      const double u = pre_squash(i, j);
      const double z = (u - stats.mean(i, j)) / stats.std(i, j);
      total += -0.5 * z * z - std::log(stats.std(i, j)) - half_log_2pi -
               std::log(scale(i)) - LogOneMinusTanhSq(u);
    }
    out(0, j) = total;
  }
  return out;
}

SquashedNormalPolicy::SquashedNormalPolicy(int state_dim, ActionBounds bounds,
                                           PolicyOptions options)
    : bounds_(std::move(bounds)),
      options_(std::move(options)),
      net_(state_dim, 2 * bounds_.dim(), options_.mlp) {
  if (bounds_.low.size() != bounds_.high.size() || bounds_.dim() == 0) {
    throw std::invalid_argument("policy: malformed action bounds");
  }
  if (!((bounds_.high - bounds_.low).array() > 0.0).all()) {
    throw std::invalid_argument("policy: action bounds must satisfy low < high");
  }
  if (options_.log_std_min > options_.log_std_max) {
    throw std::invalid_argument("policy: log_std_min > log_std_max");
  }
}

SquashedNormalPolicy::Heads SquashedNormalPolicy::RecordHeads(Tape& tape,
                                                              const MlpBinding& binding,
                                                              NodeRef states) const {
  const int a = action_dim();
  const NodeRef out = net_.Forward(tape, binding, states);
  Heads heads;
  heads.mean = tape.Slice(out, 0, a);
  heads.log_std = tape.Clamp(tape.Slice(out, a, a), options_.log_std_min, options_.log_std_max);
  heads.std = tape.Exp(heads.log_std);
  return heads;
}

NodeRef SquashedNormalPolicy::RecordSquash(Tape& tape, NodeRef pre_squash) const {
  const NodeRef scale = tape.Constant(bounds_.scale());
  const NodeRef offset = tape.Constant(bounds_.offset());
  return tape.Add(tape.Mul(tape.Tanh(pre_squash), scale), offset);
}

SquashedNormalPolicy::SampleNodes SquashedNormalPolicy::RecordSample(Tape& tape,
                                                                     const Heads& heads,
                                                                     NodeRef noise) const {
  if (noise.rows != action_dim()) {
    throw std::invalid_argument("policy: noise has " + std::to_string(noise.rows) +
                                " rows, action dimension is " + std::to_string(action_dim()));
  }
  SampleNodes out;
  out.pre_squash = tape.Add(heads.mean, tape.Mul(heads.std, noise));
  out.action = RecordSquash(tape, out.pre_squash);
  return out;
}

NodeRef SquashedNormalPolicy::RecordLogProb(Tape& tape, const Heads& heads,
                                            NodeRef pre_squash) const {
  const Vector constant =
      (0.5 * std::log(2.0 * std::numbers::pi) + 2.0 * std::numbers::ln2) +
      bounds_.scale().array().log();
  const NodeRef z = tape.Mul(tape.Sub(pre_squash, heads.mean),
                             tape.Exp(tape.Scale(heads.log_std, -1.0)));
  // -log(1 - tanh(u)^2) = 2u + 2 softplus(-2u) - 2 log 2
  NodeRef per_dim = tape.Sub(tape.Scale(tape.Square(z), -0.5), heads.log_std);
  per_dim = tape.Add(per_dim, tape.Scale(pre_squash, 2.0));
  per_dim = tape.Add(per_dim, tape.Scale(tape.Softplus(tape.Scale(pre_squash, -2.0)), 2.0));
  per_dim = tape.Sub(per_dim, tape.Constant(constant));
  return tape.Sum(per_dim, 0);
}

NodeRef SquashedNormalPolicy::RecordKl(Tape& tape, const Heads& heads,
                                       const PolicyStats& old) const {
  const NodeRef old_mean = tape.Constant(old.mean);
  const NodeRef old_log_std = tape.Constant(old.std.array().log().matrix());
  const NodeRef old_var = tape.Constant(old.std.array().square().matrix());
  const NodeRef diff_sq = tape.Square(tape.Sub(old_mean, heads.mean));
  const NodeRef inv_var = tape.Exp(tape.Scale(heads.log_std, -2.0));
  NodeRef per_dim = tape.Sub(heads.log_std, old_log_std);
  per_dim = tape.Add(per_dim, tape.Scale(tape.Mul(tape.Add(old_var, diff_sq), inv_var), 0.5));
  per_dim = tape.Sub(per_dim, tape.Scalar(0.5));
  return tape.Sum(per_dim, 0);
}

PolicyStats SquashedNormalPolicy::Stats(const Matrix& states) const {
  const Matrix out = net_.Evaluate(states);
  const int a = action_dim();
  PolicyStats stats;
  stats.mean = out.topRows(a);
  stats.std = out.bottomRows(a)
                  .cwiseMax(options_.log_std_min)
                  .cwiseMin(options_.log_std_max)
                  .array()
                  .exp();
  return stats;
}

Matrix SquashedNormalPolicy::Sample(const Matrix& states, const Matrix& noise) const {
  const PolicyStats stats = Stats(states);
  const Matrix u = stats.mean + stats.std.cwiseProduct(noise);
  return (u.array().tanh().colwise() * bounds_.scale().array()).colwise() +
         bounds_.offset().array();
}

Matrix SquashedNormalPolicy::Deterministic(const Matrix& states) const {
  return Sample(states, Matrix::Zero(action_dim(), states.cols()));
}

Matrix SquashedNormalPolicy::PreSquash(const Matrix& actions, int* clamp_count) const {
  if (actions.rows() != action_dim()) {
    throw std::invalid_argument("policy: action rows do not match action dimension");
  }
  const double limit = 1.0 - options_.boundary_margin;
  Matrix y = (actions.array().colwise() - bounds_.offset().array()).colwise() /
             bounds_.scale().array();
  int clamped = 0;
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    if (y(k) > limit) {
      y(k) = limit;
      ++clamped;
    } else if (y(k) < -limit) {
      y(k) = -limit;
      ++clamped;
    }
  }
  if (clamp_count) *clamp_count += clamped;
  return y.unaryExpr([](double v) { return std::atanh(v); });
}

Matrix SquashedNormalPolicy::Inverse(const Matrix& states, const Matrix& actions,
                                     int* clamp_count) const {
  const PolicyStats stats = Stats(states);
  return (PreSquash(actions, clamp_count) - stats.mean).cwiseQuotient(stats.std);
}

Matrix SquashedNormalPolicy::LogProb(const Matrix& states, const Matrix& actions,
                                     int* clamp_count) const {
  return SquashedLogProb(Stats(states), PreSquash(actions, clamp_count), bounds_.scale());
}

Matrix SquashedNormalPolicy::EntropyEstimate(const Matrix& states, const Matrix& actions) const {
  return -LogProb(states, actions);
}

Matrix SquashedNormalPolicy::KlGaussian(const PolicyStats& old, const Matrix& states) const {
  const PolicyStats cur = Stats(states);
  const Matrix per_dim =
      (cur.std.array() / old.std.array()).log() +
      (old.std.array().square() + (old.mean - cur.mean).array().square()) /
          (2.0 * cur.std.array().square()) -
      0.5;
  return per_dim.colwise().sum();
}

}  // namespace rpo
