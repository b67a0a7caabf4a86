#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "rpo/policy.h"

namespace rpo {
namespace {

ActionBounds Box(double lo, double hi) {
  return {Vector::Constant(1, lo), Vector::Constant(1, hi)};
}

// 1-D policy without hidden layers whose heads are the constants mu and
// log_sigma at every state
SquashedNormalPolicy ConstantPolicy(double mu, double log_sigma, ActionBounds bounds = Box(-1, 1)) {
  PolicyOptions o;
  o.mlp.hidden = {};
  SquashedNormalPolicy p(1, std::move(bounds), o);
  Vector theta(4);
  theta << 0.0, 0.0, mu, log_sigma;  // head weight (2x1), head bias (2x1)
  p.Assign(theta);
  return p;
}

SquashedNormalPolicy RandomPolicy(int state_dim, int action_dim, std::uint64_t seed) {
  PolicyOptions o;
  o.mlp.hidden = {16, 16};
  o.mlp.head_gain = 1.0;
  ActionBounds b{Vector::Constant(action_dim, -2.0), Vector::Constant(action_dim, 1.0)};
  SquashedNormalPolicy p(state_dim, b, o);
  Rng rng(seed, 0);
  p.Initialize(rng);
  return p;
}

const Matrix kState = Matrix::Constant(1, 1, 0.3);

// trapezoid rule over a dense grid
template <class F>
double Trapezoid(F f, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double total = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i < n; ++i) total += f(lo + i * h);
  return total * h;
}

TEST(Policy, ZeroNoiseGivesDeterministicAction) {
  const SquashedNormalPolicy p = RandomPolicy(3, 2, 1);
  const Matrix s = Rng(1, 1).Normal(3, 5);
  const PolicyStats st = p.Stats(s);
  const Matrix expect = ((st.mean.array().tanh().colwise() * p.bounds().scale().array())
                             .colwise() +
                         p.bounds().offset().array())
                            .matrix();
  EXPECT_LT((p.Deterministic(s) - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Policy, SampleFormula) {
  const SquashedNormalPolicy p = ConstantPolicy(0.0, 0.0);
  EXPECT_NEAR(p.Sample(kState, Matrix::Constant(1, 1, 0.5))(0, 0), std::tanh(0.5), 1e-15);
}

TEST(Policy, ActionDerivativeAtOriginIsScale) {
  const SquashedNormalPolicy p = ConstantPolicy(0.0, 0.0, Box(-3.0, 3.0));
  Tape tape;
  const MlpBinding b = p.net().Bind(tape, true);
  const auto heads = p.RecordHeads(tape, b, tape.Constant(kState));
  const auto sample = p.RecordSample(tape, heads, tape.Constant(Matrix::Zero(1, 1)));
  tape.Backward(sample.action);
  EXPECT_NEAR(tape.Adjoint(heads.mean)(0, 0), 3.0, 1e-15);
}

TEST(Policy, InverseOfKnownValues) {
  const SquashedNormalPolicy p = ConstantPolicy(0.5, std::log(0.2));
  EXPECT_NEAR(p.Inverse(kState, Matrix::Constant(1, 1, std::tanh(0.9)))(0, 0), 2.0, 1e-10);
  EXPECT_NEAR(p.Inverse(kState, Matrix::Constant(1, 1, std::tanh(0.5)))(0, 0), 0.0, 1e-12);
}

TEST(Policy, InverseRoundTrip) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SquashedNormalPolicy p = RandomPolicy(3, 2, seed);
    const Matrix s = Rng(seed, 1).Normal(3, 200);
    const Matrix eps = Rng(seed, 2).Normal(2, 200).cwiseMax(-3.0).cwiseMin(3.0);
    const Matrix back = p.Inverse(s, p.Sample(s, eps));
    // skip samples whose pre-squash value saturates tanh in double precision
    const PolicyStats st = p.Stats(s);
    const Matrix u = st.mean + st.std.cwiseProduct(eps);
    int compared = 0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (std::abs(u(i)) > 5.0) continue;
      ++compared;
      EXPECT_NEAR(back(i), eps(i), 1e-10) << "seed " << seed << " entry " << i;
    }
    EXPECT_GT(compared, 200);
  }
}

TEST(Policy, LogProbOfStandardNormalAtZero) {
  const SquashedNormalPolicy p = ConstantPolicy(0.0, 0.0);
  EXPECT_NEAR(p.LogProb(kState, Matrix::Zero(1, 1))(0, 0),
              -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
}

TEST(Policy, TapeLogProbMatchesPlainLogProb) {
  const SquashedNormalPolicy p = RandomPolicy(3, 2, 4);
  const Matrix s = Rng(4, 1).Normal(3, 20);
  const Matrix a = p.Sample(s, Rng(4, 2).Normal(2, 20));
  Tape tape;
  const MlpBinding b = p.net().Bind(tape, false);
  const auto heads = p.RecordHeads(tape, b, tape.Constant(s));
  const NodeRef lp = p.RecordLogProb(tape, heads, tape.Constant(p.PreSquash(a)));
  EXPECT_LT((tape.Value(lp) - p.LogProb(s, a)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Policy, RatioIsOneForIdenticalPolicies) {
  const SquashedNormalPolicy p = RandomPolicy(3, 2, 5);
  const SquashedNormalPolicy q = p;
  const Matrix s = Rng(5, 1).Normal(3, 50);
  const Matrix a = p.Sample(s, Rng(5, 2).Normal(2, 50));
  const Matrix rho = (q.LogProb(s, a) - p.LogProb(s, a)).array().exp();
  EXPECT_LT((rho.array() - 1.0).abs().maxCoeff(), 1e-15);
}

TEST(Policy, DensityIntegratesToOne) {
  for (const double mu : {0.0, 0.7}) {
    for (const double sigma : {0.3, 1.0}) {
      const SquashedNormalPolicy p = ConstantPolicy(mu, std::log(sigma), Box(-2.0, 1.0));
      const double mass = Trapezoid(
          [&](double a) {
            return std::exp(p.LogProb(kState, Matrix::Constant(1, 1, a))(0, 0));
          },
          -2.0 + 1e-9, 1.0 - 1e-9, 200000);
      EXPECT_NEAR(mass, 1.0, 1e-3) << "mu " << mu << " sigma " << sigma;
    }
  }
}

// squashed-normal density on [-1, 1] written from the change of variables
double SquashedDensity(double a, double mu, double sigma) {
  const double u = std::atanh(a);
  const double z = (u - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi)) / (1.0 - a * a);
}

TEST(Policy, EntropyEstimateMatchesQuadrature) {
  const double mu = 0.0, sigma = 0.5;
  const double truth = Trapezoid(
      [&](double a) {
        const double p = SquashedDensity(a, mu, sigma);
        return p > 0.0 ? -p * std::log(p) : 0.0;
      },
      -1.0 + 1e-12, 1.0 - 1e-12, 400000);
  const SquashedNormalPolicy p = ConstantPolicy(mu, std::log(sigma));
  const int n = 100000;
  const Matrix s = Matrix::Constant(1, n, 0.3);
  const Matrix h = p.EntropyEstimate(s, p.Sample(s, Rng(3, 3).Normal(1, n)));
  const double mean = h.mean();
  const double se = std::sqrt((h.array() - mean).square().sum() / (n - 1) / n);
  EXPECT_LT(std::abs(mean - truth), 3.0 * se) << "mean " << mean << " truth " << truth;
}

double MeanEntropy(double log_sigma) {
  const SquashedNormalPolicy p = ConstantPolicy(0.2, log_sigma);
  const int n = 20000;
  const Matrix s = Matrix::Constant(1, n, 0.3);
  return p.EntropyEstimate(s, p.Sample(s, Rng(6, 0).Normal(1, n))).mean();
}

TEST(Policy, EntropyGrowsWithScale) {
  EXPECT_LT(MeanEntropy(std::log(0.1)), MeanEntropy(0.0));
  // lower clamp of the log-std head
  EXPECT_LT(MeanEntropy(-5.0), MeanEntropy(0.0));
  EXPECT_EQ(MeanEntropy(-9.0), MeanEntropy(-5.0));
}

TEST(Policy, KlOfKnownPairs) {
  const SquashedNormalPolicy p = ConstantPolicy(1.0, 0.0);
  PolicyStats old{Matrix::Zero(1, 1), Matrix::Ones(1, 1)};
  EXPECT_NEAR(p.KlGaussian(old, kState)(0, 0), 0.5, 1e-15);
  const PolicyStats same = p.Stats(kState);
  EXPECT_EQ(p.KlGaussian(same, kState)(0, 0), 0.0);
}

TEST(Policy, KlIsNonNegative) {
  Rng rng(12, 0);
  for (int i = 0; i < 1000; ++i) {
    const SquashedNormalPolicy p =
        ConstantPolicy(rng.Uniform(-3.0, 3.0), rng.Uniform(-4.0, 1.5));
    PolicyStats old{Matrix::Constant(1, 1, rng.Uniform(-3.0, 3.0)),
                    Matrix::Constant(1, 1, std::exp(rng.Uniform(-4.0, 1.5)))};
    EXPECT_GE(p.KlGaussian(old, kState)(0, 0), 0.0);
  }
}

TEST(Policy, KlGradientVanishesAtOldPolicyAndMatchesFiniteDifferences) {
  const SquashedNormalPolicy p = RandomPolicy(3, 2, 7);
  const Matrix s = Rng(7, 1).Normal(3, 10);
  const PolicyStats old = p.Stats(s);

  auto kl_grad = [&](const SquashedNormalPolicy& q) {
    Tape tape;
    const MlpBinding b = q.net().Bind(tape, true);
    const auto heads = q.RecordHeads(tape, b, tape.Constant(s));
    const NodeRef kl = tape.Sum(q.RecordKl(tape, heads, old));
    tape.Backward(kl);
    return std::pair{tape.ScalarValue(kl), q.net().Gradient(tape, b)};
  };
  const auto [value0, grad0] = kl_grad(p);
  EXPECT_NEAR(value0, 0.0, 1e-14);
  EXPECT_LT(grad0.cwiseAbs().maxCoeff(), 1e-14);

  SquashedNormalPolicy moved = p;
  Vector theta = p.Flatten() + 0.05 * Rng(7, 2).Normal(p.NumParameters(), 1);
  moved.Assign(theta);
  const auto [value, grad] = kl_grad(moved);
  EXPECT_NEAR(value, moved.KlGaussian(old, s).sum(), 1e-12);
  const double h = 1e-6;
  for (int i = 0; i < theta.size(); i += 7) {
    SquashedNormalPolicy probe = moved;
    Vector t = theta;
    t(i) += h;
    probe.Assign(t);
    const double up = probe.KlGaussian(old, s).sum();
    t(i) -= 2 * h;
    probe.Assign(t);
    const double down = probe.KlGaussian(old, s).sum();
    const double fd = (up - down) / (2 * h);
    EXPECT_LT(std::abs(grad(i) - fd) / std::max(1.0, std::abs(fd)), 1e-5) << "param " << i;
  }
}

TEST(Policy, ModeOfTheSquashedDensity) {
  // log p(a) in pre-squash coordinates peaks where u = mu + 2 sigma^2 tanh(u);
  // for mu = 0 that is the deterministic action itself
  for (const double mu : {0.0, 0.4, -0.8}) {
    const double sigma = 0.3;
    const SquashedNormalPolicy p = ConstantPolicy(mu, std::log(sigma));
    const int n = 20001;
    double best_a = 0.0, best = -1e300;
    for (int i = 1; i < n - 1; ++i) {
      const double a = -1.0 + 2.0 * i / (n - 1);
      const double lp = p.LogProb(kState, Matrix::Constant(1, 1, a))(0, 0);
      if (lp > best) {
        best = lp;
        best_a = a;
      }
    }
    double u = mu;
    for (int k = 0; k < 200; ++k) u = mu + 2.0 * sigma * sigma * std::tanh(u);
    EXPECT_NEAR(best_a, std::tanh(u), 2.0 / (n - 1));
    if (mu == 0.0) {
      EXPECT_NEAR(best_a, p.Deterministic(kState)(0, 0), 2.0 / (n - 1));
    }
  }
}

TEST(Policy, PreSquashCountsBoundaryClamps) {
  const SquashedNormalPolicy p = ConstantPolicy(0.0, 0.0);
  Matrix a(1, 3);
  a << 1.0, 0.5, -1.0;
  int clamps = 0;
  const Matrix u = p.PreSquash(a, &clamps);
  EXPECT_EQ(clamps, 2);
  EXPECT_TRUE(u.allFinite());
}

TEST(Policy, LogOneMinusTanhSqIsStable) {
  for (const double u : {-30.0, -2.0, 0.0, 0.7, 25.0}) {
    const double t = std::tanh(u);
    const double naive = std::log(1.0 - t * t);
    if (std::isfinite(naive) && std::abs(u) < 5.0) {
      EXPECT_NEAR(LogOneMinusTanhSq(u), naive, 1e-12);
    }
    EXPECT_TRUE(std::isfinite(LogOneMinusTanhSq(u)));
  }
  EXPECT_NEAR(LogOneMinusTanhSq(25.0), std::log(4.0) - 50.0, 1e-12);
}

}  // namespace
}  // namespace rpo
