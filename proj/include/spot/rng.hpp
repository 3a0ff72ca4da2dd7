#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace spot {

/// Seedable, splittable counter-free generator (splitmix64 core).
///
/// All randomness in the project flows through named streams derived from
/// one base seed, so any point of a run can be replayed from (seed, epoch,
/// step) alone. State is one u64 and serializes trivially.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no cached second draw, so state stays
  /// a single word).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  /// Child generator decorrelated from this one by `tag`.
  Rng split(std::uint64_t tag) const { return Rng(mix(state_, tag)); }

  std::uint64_t state() const { return state_; }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Stream for a named purpose at a point in a run, e.g.
  /// derive(seed, {kMaskStream, step}).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = mix(seed, 0x5EED5EED5EED5EEDULL);
    for (std::uint64_t t : tags) s = mix(s, t);
    return Rng(s);
  }

 private:
  std::uint64_t state_;
};

// Stream ids for derive(); fixed so checkpointed runs replay exactly.
namespace stream {
constexpr std::uint64_t kInit = 1;      // parameter initialization
constexpr std::uint64_t kShuffle = 2;   // per-epoch dataset order
constexpr std::uint64_t kMask = 3;      // per-step drop masks
constexpr std::uint64_t kNoise = 4;     // noise-replacement draws
constexpr std::uint64_t kBuffer = 5;    // history buffer sampling
constexpr std::uint64_t kAugment = 6;   // crop/resize augmentation
constexpr std::uint64_t kEval = 7;      // held-out evaluation masks
constexpr std::uint64_t kLatent = 8;    // generator latents (GAN baseline)
constexpr std::uint64_t kProbe = 9;     // probe folds
constexpr std::uint64_t kData = 10;     // synthetic dataset generation
}  // namespace stream

}  // namespace spot
