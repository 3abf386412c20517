#pragma once

#include <cstdint>
#include <random>

namespace gvn {

// splitmix64 step; stateless seed scrambler used to derive substream seeds.
std::uint64_t mix_seed(std::uint64_t x);

// mt19937_64 engine with explicit conversions to double. The standard pins
// the engine's output sequence exactly; the conversions below avoid
// std::*_distribution, whose output is implementation-defined, so streams
// reproduce bit-for-bit across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * kInv53;
  }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_open() {
    return static_cast<double>((engine_() >> 11) + 1) * kInv53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two engine draws.
  double normal();

  // Uniform index in [0, n); requires n > 0.
  std::size_t index(std::size_t n);

  // Independent generator for (seed, stream id). Pure function of the seed,
  // so substreams can be taken in any order or in parallel.
  Rng substream(std::uint64_t stream) const {
    return Rng(mix_seed(seed_ ^ mix_seed(stream + 0x9E3779B97F4A7C15ull)));
  }

 private:
  static constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace gvn
