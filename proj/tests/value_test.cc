#include <cmath>

#include <gtest/gtest.h>

#include "rpo/value.h"

namespace rpo {
namespace {

DoubleCritic MakeCritics(double head_gain, std::uint64_t seed) {
  MlpOptions o;
  o.hidden = {32, 32};
  o.head_gain = head_gain;
  DoubleCritic c(3, o);
  c.Initialize(Rng(seed, 0), Rng(seed, 1));
  return c;
}

TEST(DoubleCritic, VBarIsTheMeanOfBothNetworks) {
  const DoubleCritic c = MakeCritics(1.0, 1);
  const Matrix s = Rng(1, 2).Normal(3, 10);
  const Matrix expect = 0.5 * (c.net(0).Evaluate(s) + c.net(1).Evaluate(s));
  EXPECT_LT((c.VBar(s) - expect).cwiseAbs().maxCoeff(), 1e-15);

  Tape tape;
  const NodeRef v = c.RecordVBar(tape, tape.Constant(s));
  EXPECT_LT((tape.Value(v) - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DoubleCritic, NetworksAreIndependent) {
  const DoubleCritic c = MakeCritics(1.0, 2);
  EXPECT_GT((c.net(0).Flatten() - c.net(1).Flatten()).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(DoubleCritic, SwappingNetworksLeavesVBarUnchanged) {
  DoubleCritic c = MakeCritics(1.0, 3);
  DoubleCritic swapped = c;
  swapped.net(0).Assign(c.net(1).Flatten());
  swapped.net(1).Assign(c.net(0).Flatten());
  const Matrix s = Rng(3, 2).Normal(3, 10);
  EXPECT_LT((c.VBar(s) - swapped.VBar(s)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DoubleCritic, ZeroHeadsPredictZero) {
  const DoubleCritic c = MakeCritics(0.0, 4);
  const Matrix s = Rng(4, 2).Normal(3, 10);
  EXPECT_EQ(c.VBar(s).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DoubleCritic, ZeroTargetsGiveZeroLoss) {
  DoubleCritic c = MakeCritics(0.0, 5);
  const Matrix s = Rng(5, 2).Normal(3, 64);
  Rng rng(5, 3);
  CriticTrainOptions o;
  o.epochs = 3;
  const std::vector<double> trace = c.Train(s, Matrix::Zero(1, 64), o, rng, 1e-3);
  ASSERT_EQ(trace.size(), 3u);
  for (double loss : trace) EXPECT_EQ(loss, 0.0);
}

TEST(DoubleCritic, FullBatchLossDecreases) {
  DoubleCritic c = MakeCritics(1.0, 6);
  const Matrix s = Rng(6, 2).Normal(3, 128);
  const Matrix y = s.row(0).array().sin() + 0.5 * s.row(1).array();
  Rng rng(6, 3);
  CriticTrainOptions o;
  o.epochs = 40;
  o.minibatches = 1;
  const std::vector<double> trace = c.Train(s, y, o, rng, 1e-3);
  for (int k = 1; k < 5; ++k) EXPECT_LT(trace[k], trace[k - 1]) << "epoch " << k;
  EXPECT_LT(trace.back(), 0.5 * trace.front());
}

TEST(DoubleCritic, TrainingIsDeterministic) {
  const Matrix s = Rng(7, 2).Normal(3, 64);
  const Matrix y = s.row(2);
  auto run = [&] {
    DoubleCritic c = MakeCritics(1.0, 7);
    Rng rng(7, 3);
    c.Train(s, y, {}, rng, 1e-3);
    return c.net(0).Flatten();
  };
  EXPECT_EQ(run(), run());
}

TEST(DoubleCritic, RejectsBadTargets) {
  DoubleCritic c = MakeCritics(1.0, 8);
  const Matrix s = Rng(8, 2).Normal(3, 4);
  Rng rng(8, 3);
  EXPECT_THROW(c.Train(s, Matrix::Zero(1, 3), {}, rng, 1e-3), std::invalid_argument);
  Matrix bad = Matrix::Zero(1, 4);
  bad(0, 2) = std::nan("");
  EXPECT_THROW(c.Train(s, bad, {}, rng, 1e-3), NonFiniteError);
}

}  // namespace
}  // namespace rpo
