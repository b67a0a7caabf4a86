#include "rpo/rng.h"

#include <cmath>
#include <numbers>

namespace rpo {
namespace {

std::uint64_t Mix(std::uint64_t z) {
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::NextU64() {
  const std::uint64_t c = counter_++;
  return Mix(Mix(key_ ^ Mix(stream_)) + Mix(c));
}

double Rng::Uniform() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

double Rng::Normal() {
  // 1 - u keeps the log argument in (0, 1]
  const double u1 = 1.0 - Uniform();
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Matrix Rng::Normal(int rows, int cols) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = Normal();
  }
  return m;
}

std::uint64_t Rng::Below(std::uint64_t n) {
  // rejection keeps the draw unbiased
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = NextU64();
  while (x >= limit) x = NextU64();
  return x % n;
}

Rng Rng::Split(std::uint64_t child) const {
  return Rng(Mix(key_ + 0x632be59bd9b4e019ULL * (stream_ + 1)), child);
}

RngRoots SeedEverything(std::uint64_t seed) {
  auto make = [seed](Stream s) { return Rng(seed, static_cast<std::uint64_t>(s)); };
  return {make(Stream::kEnvReset), make(Stream::kPolicyNoise), make(Stream::kInit),
          make(Stream::kMinibatch), make(Stream::kEval)};
}

}  // namespace rpo
