// Seeded random number generation with a bit-exact draw sequence.
//
// std::mt19937_64 output is fully pinned by the standard, but the standard
// distributions are not, so uniform draws are mapped here by hand. Everything
// downstream (init, shuffling, synthetic data) goes through this class so a
// seed reproduces a run exactly.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace aggcn {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], both inclusive.
  int uniform_int(int lo, int hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % range);
  }

  // Child generator for an independent, labeled stream of the same root seed.
  Rng derive(std::string_view label) const {
    return Rng(detail::splitmix64(seed_ ^ detail::fnv1a64(label)));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

// Fisher-Yates with our own draws; std::shuffle is implementation-defined.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace aggcn
