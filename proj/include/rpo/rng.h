#ifndef RPO_RNG_H_
#define RPO_RNG_H_

#include <cstdint>

#include "rpo/tape.h"

namespace rpo {

// Counter-based generator: draw i of stream (key, stream) is a pure
// function of (key, stream, i), so streams never shift each other.
class Rng {
 public:
  Rng() = default;
  Rng(std::uint64_t key, std::uint64_t stream) : key_(key), stream_(stream) {}

  std::uint64_t NextU64();
  // uniform on [0, 1)
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Box-Muller; one normal per pair of uniforms
  double Normal();
  Matrix Normal(int rows, int cols);
  // uniform integer in [0, n)
  std::uint64_t Below(std::uint64_t n);

  // independent child stream
  Rng Split(std::uint64_t child) const;

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

// stream indices derived from one run seed
enum class Stream : std::uint64_t {
  kEnvReset = 0,
  kPolicyNoise = 1,
  kInit = 2,
  kMinibatch = 3,
  kEval = 4,
};

struct RngRoots {
  Rng env_reset;
  Rng policy_noise;
  Rng init;
  Rng minibatch;
  Rng eval;
};

RngRoots SeedEverything(std::uint64_t seed);

}  // namespace rpo

#endif  // RPO_RNG_H_
