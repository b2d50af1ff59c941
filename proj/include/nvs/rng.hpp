#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

namespace nvs {

// All randomness flows from one root seed, split per purpose with fork().
// Normal sampling is hand-rolled (Box-Muller) because
// std::normal_distribution is implementation-defined; mt19937_64 itself is
// bit-exact everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives an independent child stream; same (seed, tag) always yields the
  // same child.
  Rng fork(std::uint64_t tag) const {
    return Rng(mix(seed_of(engine_) ^ mix(tag, 0x9e3779b97f4a7c15ull), 0xd6e8feb86659fd93ull));
  }

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

 private:
  explicit Rng(const std::mt19937_64& e) : engine_(e) {}

  static std::uint64_t mix(std::uint64_t x, std::uint64_t c) {
    x += c;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  // fork() needs a stable value derived from the current stream position
  // without disturbing it; hashing a copy's next output does that.
  static std::uint64_t seed_of(std::mt19937_64 copy) { return copy(); }

  std::mt19937_64 engine_;
};

// Stable purpose tags for fork().
namespace seed_tag {
inline constexpr std::uint64_t kWeightInit = 1;
inline constexpr std::uint64_t kSceneGen = 2;
inline constexpr std::uint64_t kViewSampling = 3;
inline constexpr std::uint64_t kBatchSampling = 4;
}  // namespace seed_tag

}  // namespace nvs
