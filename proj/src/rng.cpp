#include "agra/core/rng.hpp"

#include <cmath>

namespace agra {

double Rng::normal() {
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int Rng::uniform_int(int n) {
  if (n <= 0) return 0;
  uint32_t bound = static_cast<uint32_t>(n);
  uint32_t threshold = (0u - bound) % bound;
  for (;;) {
    uint32_t r = next_u32();
    if (r >= threshold) return static_cast<int>(r % bound);
  }
}

uint64_t derive_seed(uint64_t base, std::string_view tag) {
  uint64_t h = 14695981039346656037ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  // SplitMix-style finalization of the combined value.
  uint64_t z = base + 0x9E3779B97F4A7C15ULL * h;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace agra
