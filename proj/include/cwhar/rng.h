#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>

namespace cwhar {

/// SplitMix64 finalizer; used for seeding and for deriving stream keys.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix_keys(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

/// xoshiro256** with portable distributions.
///
/// Every draw is defined bit-exactly here (the standard library
/// distributions are implementation-defined), so a seed reproduces the same
/// stream on every platform. `Rng::stream(seed, {a, b})` gives independent
/// substreams keyed by integers, which makes per-sample content independent
/// of generation order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  std::uint64_t next_u64();
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Box–Muller, one variate per call.
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace cwhar
