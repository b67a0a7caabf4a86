#ifndef RPO_VALUE_H_
#define RPO_VALUE_H_

#include <array>
#include <vector>

#include "rpo/nn.h"
#include "rpo/rng.h"
#include "rpo/tape.h"

namespace rpo {

struct CriticTrainOptions {
  int epochs = 32;
  int minibatches = 4;
  double grad_clip = 0.5;
};

// Two value networks with identical architecture and independent
// parameters; their mean bootstraps returns and TD-lambda targets.
class DoubleCritic {
 public:
  DoubleCritic() = default;
  DoubleCritic(int state_dim, MlpOptions options, AdamWOptions adam = {});

  // each network draws from its own stream
  void Initialize(Rng first, Rng second);

  Mlp& net(int i) { return nets_.at(i); }
  const Mlp& net(int i) const { return nets_.at(i); }
  int state_dim() const { return nets_[0].input_dim(); }

  // (V1(s) + V2(s)) / 2, (1 x batch)
  Matrix VBar(const Matrix& states) const;
  // same on a tape, with parameters as constants
  NodeRef RecordVBar(Tape& tape, NodeRef states) const;

  // Regresses both networks toward the frozen targets with minibatched
  // AdamW steps. Returns the per-epoch mean squared error averaged over
  // minibatches and the two networks. Throws NonFiniteError on a
  // non-finite loss.
  std::vector<double> Train(const Matrix& states, const Matrix& targets,
                            const CriticTrainOptions& options, Rng& rng, double lr);

 private:
  std::array<Mlp, 2> nets_;
  std::array<AdamW, 2> optimizers_;
};

}  // namespace rpo

#endif  // RPO_VALUE_H_
