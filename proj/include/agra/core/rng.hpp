#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace agra {

// PCG32 (XSH-RR variant). Chosen over std::mt19937 because the state is two
// u64s, which makes checkpointing the generator trivial and keeps streams
// reproducible across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0) {
    inc_ = (stream << 1u) | 1u;
    state_ = 0u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  static Rng restore(uint64_t state, uint64_t inc) {
    Rng r(0, 0);
    r.state_ = state;
    r.inc_ = inc;
    return r;
  }

  uint64_t state() const { return state_; }
  uint64_t inc() const { return inc_; }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Standard normal via Box-Muller. Always draws two uniforms and returns the
  // cosine branch; no cached spare, so the stream position is a pure function
  // of the number of calls.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  int uniform_int(int n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 1;
};

// Stable seed derivation for independent sub-streams ("sampler", "init", ...).
// FNV-1a over the tag folded into the base seed, so sub-streams never depend
// on call order.
uint64_t derive_seed(uint64_t base, std::string_view tag);

}  // namespace agra
