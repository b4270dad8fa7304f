#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace debias {

// Portable random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the C++ standard; the integer and real conversions below are
// written out so the derived values are identical across standard libraries.
//
// Seeding: Rng(seed, stream) seeds the engine with splitmix64(seed ^ fnv1a(stream)),
// so independent consumers (labels, tokens, init, shuffling) draw from
// decorrelated streams of the same base seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string_view stream = {});

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, n), n > 0. Rejection sampling, no modulo bias.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform in [0, 1) with 53 random bits.
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace debias
