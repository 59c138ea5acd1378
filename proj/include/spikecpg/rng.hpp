#pragma once

#include <cstdint>
#include <random>

namespace spikecpg {

// Seeded generator with platform-stable real sampling. std::uniform_real_distribution
// is implementation defined, so draws are built directly from the 64-bit output.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // [0, 1)
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // [0, n)
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return unit() < p; }

  // Derive an independent child stream; used to keep sub-structures stable when
  // unrelated parts of a build change.
  Rng fork(std::uint64_t salt) {
    std::uint64_t z = engine_() ^ (salt * 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

  template <typename Container>
  void shuffle(Container& c) {
    for (std::size_t i = c.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(c[i - 1], c[j]);
    }
  }

private:
  std::mt19937_64 engine_;
};

}  // namespace spikecpg
