#include "gvn/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace gvn {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double Rng::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform();
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
  // Lemire multiply-shift; bias is < 2^-64 per draw.
  const unsigned __int128 wide =
      static_cast<unsigned __int128>(engine_()) * static_cast<unsigned __int128>(n);
  return static_cast<std::size_t>(wide >> 64);
}

}  // namespace gvn
