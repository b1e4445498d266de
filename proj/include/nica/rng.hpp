#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nica {

// Purpose tags for derived random streams.  Keeping every consumer on its own
// keyed stream makes runs reproducible bit-for-bit, lets workers draw in any
// order, and lets a resumed run re-derive exactly the randomness it needs.
enum class StreamTag : std::uint64_t {
  TauDraw = 1,
  LatentField = 2,
  ObservationNoise = 3,
  Shuffle = 4,
  ModelInit = 5,
  ElboUniform = 6,
  ElboNormal = 7,
  IcaInit = 8,
  Misc = 9,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic random stream with explicitly defined uniform and normal
/// mappings (the standard library distributions are implementation-defined,
/// which would break reproducibility guarantees).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform on (0, 1); never returns an exact endpoint.
  double uniform() {
    while (true) {
      double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
      if (u > 0.0 && u < 1.0) return u;
    }
  }

  /// Standard normal via Box-Muller, one cached value per pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Derives an independent stream from a root seed and up to three key words.
inline Rng make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0,
                       std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return Rng(h);
}

}  // namespace nica
