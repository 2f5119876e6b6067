#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace cw {

// Deterministic random source. mt19937_64 is fully specified by the standard
// and the float/normal/shuffle constructions below avoid the
// implementation-defined std distributions, so a seed pins every stream
// bit-for-bit on any conforming toolchain.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_seed_(seed), engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1), 53-bit resolution
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // [0, n)
  int uniform_int(int n) {
    return n <= 1 ? 0 : static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller; one fresh pair of uniforms per draw
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream; stable under unrelated draws from the parent.
  Rng fork(uint64_t stream) const { return Rng(mix(base_seed_, stream)); }

  static uint64_t mix(uint64_t a, uint64_t b) {
    // splitmix64 finalizer over the combined word
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  uint64_t base_seed_;
  std::mt19937_64 engine_;
};

}  // namespace cw
