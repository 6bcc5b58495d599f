#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>
#include <utility>

namespace bagcal {

/// Identifies the stream-derivation scheme; echoed in every output file.
inline constexpr std::string_view kStreamScheme = "splitmix64-counter/v1";

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// FNV-1a, used only to turn purpose tags into 64-bit keys.
constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Counter-based random stream. The output at position i is a pure function
/// of (key, i), and child streams are derived from (key, tag, index), so any
/// iteration's draws can be reproduced in isolation regardless of execution
/// order or thread count. Distributions are implemented here rather than
/// through <random> so results do not depend on the standard library vendor.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Stream(std::uint64_t seed) noexcept : key_(splitmix64(seed)) {}

  constexpr Stream derive(std::string_view tag, std::uint64_t index = 0) const noexcept {
    Stream child(0);
    child.key_ = splitmix64(key_ ^ splitmix64(hash_tag(tag) ^ splitmix64(index + 0x632BE59BD9B4E019ull)));
    return child;
  }

  constexpr std::uint64_t key() const noexcept { return key_; }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    return splitmix64(key_ + 0x9E3779B97F4A7C15ull * (++counter_));
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n), unbiased (rejection on the low remainder).
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = (*this)();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller (one value per call, two uniforms).
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by a Stream.
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, Stream& stream) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = stream.uniform_index(i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace bagcal
