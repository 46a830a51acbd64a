#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace kcmlab {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: the n-th draw of stream (seed, stream) is a pure
/// function of (seed, stream, n), so replicas are reproducible regardless of
/// scheduling. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double exponential(double rate) noexcept { return -std::log1p(-uniform()) / rate; }

  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; the bias is below 2^-64 * n and irrelevant here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

  std::uint64_t counter() const noexcept { return counter_; }

  // Fresh independent stream derived from this generator's key.
  CounterRng split(std::uint64_t stream) const noexcept { return CounterRng(key_, stream + 1); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace kcmlab
