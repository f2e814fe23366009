#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace fedlr {

// Splittable counter-based generator. Every random draw in the simulator comes
// from a stream keyed by (master seed, purpose tag, round, client); there is no
// ambient RNG anywhere, which is what makes runs bitwise reproducible at any
// worker count: a stream's output depends only on its key, never on which
// thread consumed a neighboring stream first.
//
// The stream itself is splitmix64 (Vigna's public-domain finalizer over a
// Weyl sequence), i.e. output(i) = mix(key + i * golden), so it is a true
// counter generator: cheap to seed, no warm-up, 2^64 period per key.

namespace purpose {
// Stable stream tags. Values are part of the reproducibility contract: changing
// one changes every downstream draw.
inline constexpr std::uint64_t kModelInit = 1;    // global item matrix init
inline constexpr std::uint64_t kUserInit = 2;     // per-user embedding init
inline constexpr std::uint64_t kCohort = 3;       // cohort permutation, round -> epoch
inline constexpr std::uint64_t kProjection = 4;   // frozen random projection
inline constexpr std::uint64_t kSelection = 5;    // per-client row selection
inline constexpr std::uint64_t kLocalRank = 6;    // per-client local rank draw
inline constexpr std::uint64_t kTrainShuffle = 7; // minibatch order
inline constexpr std::uint64_t kTrainNeg = 8;     // training negatives
inline constexpr std::uint64_t kEvalNeg = 9;      // held-out eval negatives
inline constexpr std::uint64_t kKeygen = 10;      // crypto keygen primes
inline constexpr std::uint64_t kEncNoise = 11;    // encryption randomness
inline constexpr std::uint64_t kSynthetic = 12;   // test-only data generation
}  // namespace purpose

class Rng {
 public:
  explicit Rng(std::uint64_t key) : state_(key) {}

  // Derives an independent stream from the four key words. mix64 is bijective,
  // so distinct (seed, purpose, round, user) tuples never collide by
  // construction of the chained absorb step.
  static Rng keyed(std::uint64_t seed, std::uint64_t purpose_tag,
                   std::uint64_t round = 0, std::uint64_t user = 0) {
    std::uint64_t k = mix64(seed + 0x9e3779b97f4a7c15ull);
    k = mix64(k ^ mix64(purpose_tag + 0xbf58476d1ce4e5b9ull));
    k = mix64(k ^ mix64(round + 0x94d049bb133111ebull));
    k = mix64(k ^ mix64(user + 0x2545f4914f6cdd1dull));
    return Rng(k);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
  }

  // Uniform in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, bound) by rejection; exact, no modulo bias.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::next_below: bound must be positive");
    const std::uint64_t threshold = (0ull - bound) % bound;  // 2^64 mod bound
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Standard normal via Box-Muller; caches the paired deviate.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - u keeps the argument of log strictly positive.
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * kPi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Fisher-Yates; unbiased given next_below.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedlr
