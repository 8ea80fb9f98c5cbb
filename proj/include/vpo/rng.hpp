#pragma once

#include <cstdint>
#include <random>

namespace vpo {

// Mixes up to three 64-bit values into one well-spread seed (splitmix64
// finalizer chain). Used to derive independent named substreams so that
// adding or removing one consumer never shifts the draws of another.
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0);

// Seeded random stream with explicit substream derivation. normal() uses
// Box-Muller over raw 53-bit uniforms, so the byte-level sequence depends
// only on the seed, not on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  double normal();

  // Derived stream keyed off this stream's *seed* only; independent of how
  // much has been consumed from the parent.
  Rng substream(uint64_t a, uint64_t b = 0) const {
    return Rng(mix_seed(seed_, a, b));
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

// Named substream tags shared by the training code. Keeping them in one
// place is what makes the online trainer and the offline dataset builder
// reproduce each other's draws when their indices line up.
namespace stream {
inline constexpr uint64_t kCandidates = 1;
inline constexpr uint64_t kDpo = 2;
inline constexpr uint64_t kEval = 3;
inline constexpr uint64_t kPretrain = 4;
inline constexpr uint64_t kRefl = 5;
inline constexpr uint64_t kInit = 6;
inline constexpr uint64_t kData = 7;
}  // namespace stream

}  // namespace vpo
