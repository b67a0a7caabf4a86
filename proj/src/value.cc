#include "rpo/value.h"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rpo {
namespace {

std::vector<int> Shuffled(int n, Rng& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.Below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

}  // namespace

DoubleCritic::DoubleCritic(int state_dim, MlpOptions options, AdamWOptions adam) {
  for (int i = 0; i < 2; ++i) {
    nets_[i] = Mlp(state_dim, 1, options);
    optimizers_[i] = AdamW(nets_[i].NumParameters(), adam);
  }
}

void DoubleCritic::Initialize(Rng first, Rng second) {
  nets_[0].Initialize(first);
  nets_[1].Initialize(second);
}

Matrix DoubleCritic::VBar(const Matrix& states) const {
  return 0.5 * (nets_[0].Evaluate(states) + nets_[1].Evaluate(states));
}

NodeRef DoubleCritic::RecordVBar(Tape& tape, NodeRef states) const {
  const NodeRef v1 = nets_[0].Forward(tape, nets_[0].Bind(tape, false), states);
  const NodeRef v2 = nets_[1].Forward(tape, nets_[1].Bind(tape, false), states);
  return tape.Scale(tape.Add(v1, v2), 0.5);
}

std::vector<double> DoubleCritic::Train(const Matrix& states, const Matrix& targets,
                                        const CriticTrainOptions& options, Rng& rng,
                                        double lr) {
  const int n = static_cast<int>(states.cols());
  if (targets.rows() != 1 || targets.cols() != n) {
    throw std::invalid_argument("critic: targets must be (1 x batch)");
  }
  if (!targets.allFinite()) throw NonFiniteError("critic: non-finite targets");
  const int chunks = std::max(1, std::min(options.minibatches, n));

  std::vector<double> trace;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const std::vector<int> order = Shuffled(n, rng);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int c = 0; c < chunks; ++c) {
      const int begin = c * n / chunks;
      const int end = (c + 1) * n / chunks;
      const int m = end - begin;
      if (m == 0) continue;
      Matrix batch(states.rows(), m);
      Matrix y(1, m);
      for (int k = 0; k < m; ++k) {
        batch.col(k) = states.col(order[begin + k]);
        y(0, k) = targets(0, order[begin + k]);
      }
      for (int i = 0; i < 2; ++i) {
        Tape tape;
        const MlpBinding binding = nets_[i].Bind(tape, true);
        const NodeRef v = nets_[i].Forward(tape, binding, tape.Constant(batch));
        const NodeRef loss =
            tape.Scale(tape.Sum(tape.Square(tape.Sub(v, tape.Constant(y)))), 1.0 / m);
        const double value = tape.ScalarValue(loss);
        if (!std::isfinite(value)) throw NonFiniteError("critic: non-finite loss");
        tape.Backward(loss);
        Vector grad = nets_[i].Gradient(tape, binding);
        ClipGradNorm(grad, options.grad_clip);
        Vector params = nets_[i].Flatten();
        optimizers_[i].Step(params, grad, lr);
        nets_[i].Assign(params);
        loss_sum += value;
        ++loss_count;
      }
    }
    trace.push_back(loss_count ? loss_sum / loss_count : 0.0);
  }
  return trace;
}

}  // namespace rpo
