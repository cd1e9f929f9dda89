#pragma once

#include <cstdint>

namespace skd {

/// Portable counter-based generator.
///
/// Output k of a stream is `mix64(key + k * 0x9E3779B97F4A7C15)`, where
/// `mix64` is the SplitMix64 finalizer and `key` is derived from
/// (seed, stream). Normals use Box-Muller on two consecutive uniforms, so
/// a draw sequence depends only on the seed, the stream id and the number
/// of values consumed; it never depends on the standard library.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal.
  double normal();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  /// Independent generator keyed by (this stream's key, id). Does not
  /// advance this generator.
  CounterRng substream(std::uint64_t id) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  CounterRng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

/// Sub-seed derivation used everywhere a component needs its own seed:
/// split_seed(seed, tag) = mix64(seed ^ mix64(tag + 1)).
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace skd
