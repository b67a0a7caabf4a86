#include <cmath>

#include <gtest/gtest.h>

#include "rpo/nn.h"

namespace rpo {
namespace {

// straight-line forward pass: (W x + b) -> layer norm -> silu per hidden
// layer, then a linear head
Matrix DenseForward(const Mlp& net, const Matrix& x) {
  const auto& t = net.tensors();
  const bool ln = net.options().layer_norm;
  Matrix h = x;
  std::size_t k = 0;
  for (std::size_t layer = 0; layer < net.options().hidden.size(); ++layer) {
    Matrix z(t[k].rows(), h.cols());
    for (int j = 0; j < h.cols(); ++j) {
      for (int i = 0; i < t[k].rows(); ++i) {
        double acc = t[k + 1](i, 0);
        for (int m = 0; m < h.rows(); ++m) acc += t[k](i, m) * h(m, j);
        z(i, j) = acc;
      }
      if (ln) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < z.rows(); ++i) mean += z(i, j);
        mean /= z.rows();
        for (int i = 0; i < z.rows(); ++i) var += (z(i, j) - mean) * (z(i, j) - mean);
        var /= z.rows();
        for (int i = 0; i < z.rows(); ++i) {
          z(i, j) = (z(i, j) - mean) / std::sqrt(var + 1e-5) * t[k + 2](i, 0) + t[k + 3](i, 0);
        }
      }
      for (int i = 0; i < z.rows(); ++i) z(i, j) = z(i, j) / (1.0 + std::exp(-z(i, j)));
    }
    k += ln ? 4 : 2;
    h = z;
  }
  Matrix out(t[k].rows(), h.cols());
  for (int j = 0; j < h.cols(); ++j) {
    for (int i = 0; i < t[k].rows(); ++i) {
      double acc = t[k + 1](i, 0);
      for (int m = 0; m < h.rows(); ++m) acc += t[k](i, m) * h(m, j);
      out(i, j) = acc;
    }
  }
  return out;
}

TEST(Mlp, ZeroNetworkGivesZeros) {
  Mlp net(3, 2, {.hidden = {5, 4}, .layer_norm = false});
  EXPECT_TRUE(net.Evaluate(Matrix::Random(3, 6)).isZero(0.0));
}

TEST(Mlp, IdentityHead) {
  Mlp net(3, 3, {.hidden = {}});
  net.tensors()[0] = Matrix::Identity(3, 3);
  const Matrix x = Matrix::Random(3, 4);
  EXPECT_EQ(net.Evaluate(x), x);
}

TEST(Mlp, MatchesIndependentDenseForward) {
  for (const bool ln : {false, true}) {
    Mlp net(4, 3, {.hidden = {7, 5}, .layer_norm = ln, .hidden_gain = 1.3, .head_gain = 0.8});
    Rng rng(1, 0);
    net.Initialize(rng);
    // non-trivial biases and norm parameters
    Vector flat = net.Flatten();
    Rng jitter(2, 0);
    flat += 0.3 * jitter.Normal(static_cast<int>(flat.size()), 1);
    net.Assign(flat);
    Rng inputs(3, 0);
    const Matrix x = inputs.Normal(4, 6);
    EXPECT_LT((net.Evaluate(x) - DenseForward(net, x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mlp, ParameterGradientMatchesFiniteDifferences) {
  Mlp net(3, 2, {.hidden = {6, 4}, .layer_norm = true});
  Rng rng(4, 0);
  net.Initialize(rng);
  Vector flat = net.Flatten();
  flat += 0.2 * Rng(5, 0).Normal(static_cast<int>(flat.size()), 1);
  net.Assign(flat);
  const Matrix x = Rng(6, 0).Normal(3, 5);
  const Matrix w = Rng(7, 0).Normal(2, 5);

  Tape tape;
  const MlpBinding b = net.Bind(tape, true);
  const std::pair<NodeRef, Matrix> seeds[] = {{net.Forward(tape, b, tape.Constant(x)), w}};
  tape.Backward(seeds);
  const Vector ad = net.Gradient(tape, b);

  const double h = 1e-6;
  for (int i = 0; i < flat.size(); ++i) {
    Mlp probe = net;
    Vector p = flat;
    p(i) += h;
    probe.Assign(p);
    const double up = (probe.Evaluate(x).array() * w.array()).sum();
    p(i) -= 2 * h;
    probe.Assign(p);
    const double down = (probe.Evaluate(x).array() * w.array()).sum();
    const double fd = (up - down) / (2 * h);
    EXPECT_LT(std::abs(ad(i) - fd) / std::max(1.0, std::abs(fd)), 1e-5) << "parameter " << i;
  }
}

TEST(Mlp, FlattenAssignRoundTrip) {
  Mlp net(2, 2, {.hidden = {3}});
  Rng rng(0, 0);
  net.Initialize(rng);
  const Vector flat = net.Flatten();
  Mlp other(2, 2, {.hidden = {3}});
  other.Assign(flat);
  EXPECT_EQ(other.Flatten(), flat);
  EXPECT_EQ(net.Manifest("p.").front().name, "p.layer0.weight");
  EXPECT_EQ(net.Manifest("p.").back().name, "p.head.bias");
  EXPECT_THROW(other.Assign(Vector::Zero(3)), std::invalid_argument);
}

TEST(Mlp, OrthogonalInitHasOrthonormalRows) {
  Mlp net(8, 2, {.hidden = {4}, .layer_norm = false});
  Rng rng(9, 0);
  net.Initialize(rng);
  const Matrix& w = net.tensors()[0];  // 4 x 8
  EXPECT_LT((w * w.transpose() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AdamW, DefaultBetas) {
  const AdamWOptions o;
  EXPECT_EQ(o.beta1, 0.7);
  EXPECT_EQ(o.beta2, 0.95);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  AdamW opt(3, {.weight_decay = 0.1});
  Vector p(3);
  p << 1.0, -2.0, 0.5;
  const Vector before = p;
  opt.Step(p, Vector::Zero(3), 0.01);
  EXPECT_LT((p - before * (1.0 - 0.01 * 0.1)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AdamW, ScalarStepMatchesHandFormula) {
  AdamW opt(1, {.beta1 = 0.7, .beta2 = 0.95, .eps = 1e-8, .weight_decay = 0.0});
  Vector p = Vector::Constant(1, 1.0);
  opt.Step(p, Vector::Constant(1, 1.0), 1e-3);
  // m = 0.3, v = 0.05; bias corrections 0.3 and 0.05 give mhat = vhat = 1
  const double m_hat = (1.0 - 0.7) * 1.0 / (1.0 - 0.7);
  const double v_hat = (1.0 - 0.95) * 1.0 / (1.0 - 0.95);
  EXPECT_NEAR(p(0), 1.0 - 1e-3 * m_hat / (std::sqrt(v_hat) + 1e-8), 1e-15);

  // second step with g = -0.5
  opt.Step(p, Vector::Constant(1, -0.5), 1e-3);
  const double m2 = 0.7 * 0.3 + 0.3 * -0.5;
  const double v2 = 0.95 * 0.05 + 0.05 * 0.25;
  const double expect2 = (1.0 - 1e-3 / (1.0 + 1e-8)) -
                         1e-3 * (m2 / (1 - 0.49)) / (std::sqrt(v2 / (1 - 0.9025)) + 1e-8);
  EXPECT_NEAR(p(0), expect2, 1e-15);
}

TEST(AdamW, CopiedStateIsDeterministic) {
  AdamW a(4, {});
  Vector p = Rng(1, 1).Normal(4, 1);
  a.Step(p, Rng(1, 2).Normal(4, 1), 1e-2);
  AdamW b = a;
  Vector pa = p, pb = p;
  const Vector g = Rng(1, 3).Normal(4, 1);
  a.Step(pa, g, 1e-2);
  b.Step(pb, g, 1e-2);
  EXPECT_EQ(pa, pb);
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  AdamW opt(2, {});
  Vector p = Vector::Ones(2);
  Vector g(2);
  g << 1.0, std::nan("");
  EXPECT_THROW(opt.Step(p, g, 1e-3), NonFiniteError);
  EXPECT_EQ(p, Vector::Ones(2));
  EXPECT_EQ(opt.step(), 0);
}

TEST(ClipGradNorm, UnderThresholdUnchanged) {
  Vector g(2);
  g << 0.18, 0.24;  // norm 0.3
  const Vector before = g;
  EXPECT_NEAR(ClipGradNorm(g), 0.3, 1e-15);
  EXPECT_EQ(g, before);
}

TEST(ClipGradNorm, ThreeFourFive) {
  Vector g(2);
  g << 3.0, 4.0;
  EXPECT_EQ(ClipGradNorm(g, 0.5), 5.0);
  EXPECT_NEAR(g(0), 0.3, 1e-15);
  EXPECT_NEAR(g(1), 0.4, 1e-15);
  EXPECT_NEAR(g.norm(), 0.5, 1e-15);
}

TEST(ClipGradNorm, DefaultCapAndBoundProperty) {
  Rng rng(8, 0);
  for (int i = 0; i < 200; ++i) {
    Vector g = rng.Normal(10, 1) * std::exp(rng.Uniform(-5.0, 5.0));
    ClipGradNorm(g);
    EXPECT_LE(g.norm(), 0.5 + 1e-12);
  }
}

TEST(LrSchedule, LinearEndpoints) {
  LrSchedule s{.kind = ScheduleKind::kLinear, .initial = 2e-3, .total_steps = 100};
  EXPECT_EQ(s.Rate(0), 2e-3);
  EXPECT_EQ(s.Rate(100), 0.0);
  EXPECT_NEAR(s.Rate(50), 1e-3, 1e-18);
}

TEST(LrSchedule, ExponentialEndpoints) {
  LrSchedule s{.kind = ScheduleKind::kExponential, .initial = 5e-4, .total_steps = 10,
               .final_ratio = 0.01};
  EXPECT_EQ(s.Rate(0), 5e-4);
  EXPECT_NEAR(s.Rate(10), 5e-6, 1e-20);
  EXPECT_NEAR(s.Rate(5), 5e-5, 1e-18);
}

TEST(LrSchedule, KlAdaptive) {
  LrSchedule s{.kind = ScheduleKind::kKlAdaptive, .initial = 1e-3, .total_steps = 10,
               .kl_target = 0.008};
  EXPECT_NEAR(s.Rate(0, 0.002), 1.5e-3, 1e-18);  // low KL raises the rate
  EXPECT_NEAR(s.Rate(1, 0.008), 1.5e-3, 1e-18);  // in band: unchanged
  EXPECT_NEAR(s.Rate(2, 0.02), 1e-3, 1e-18);     // high KL lowers it
  EXPECT_THROW(s.Rate(3), std::invalid_argument);
}

TEST(LrSchedule, ParseNames) {
  for (auto k : {ScheduleKind::kConstant, ScheduleKind::kLinear, ScheduleKind::kExponential,
                 ScheduleKind::kKlAdaptive}) {
    EXPECT_EQ(ParseSchedule(ScheduleName(k)), k);
  }
  EXPECT_THROW(ParseSchedule("cosine"), std::invalid_argument);
}

}  // namespace
}  // namespace rpo
