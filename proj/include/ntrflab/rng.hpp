#pragma once

#include <cstdint>

namespace ntrflab {

/// Counter-based 64-bit generator.
///
/// Output k of a stream is `mix64(key + (k + 1) * 0x9E3779B97F4A7C15)`, i.e. the
/// SplitMix64 sequence started at `key`. Streams are addressed by
/// `(seed, stream id)` pairs so that independent pieces of work (examples,
/// layers, grid cells) draw from disjoint sequences regardless of scheduling.
///
/// Normal variates use the Marsaglia polar method; the second variate of each
/// accepted pair is cached and returned by the next call. Everything here is
/// integer arithmetic plus `log`/`sqrt`, so a given (seed, stream) reproduces
/// the same bits on any IEEE-754 platform with a correctly rounded libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound), unbiased (Lemire's rejection method).
  std::uint64_t below(std::uint64_t bound);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

std::uint64_t mix64(std::uint64_t x);

/// Derives a child seed from a parent seed and a list of coordinates.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace ntrflab
