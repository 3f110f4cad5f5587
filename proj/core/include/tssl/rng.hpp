#pragma once

#include <cstddef>
#include <cstdint>

namespace tssl {

/// Counter-based random stream: the n-th draw is a pure function of (key, n),
/// using the SplitMix64 finalizer. Streams are derived, never shared, so
/// batch-parallel consumers stay order-independent.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  /// Stream for one augmented view of one sample in one epoch.
  static RngStream derive(std::uint64_t global_seed, std::uint64_t epoch, std::uint64_t sample_index,
                          std::uint64_t view_index);

  /// Independent child stream; does not advance this one.
  RngStream split(std::uint64_t tag) const;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n); n must be positive.
  std::size_t uniform_index(std::size_t n);
  bool bernoulli(double p);
  /// Standard normal via Box-Muller (no cached second value).
  double normal();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Order-sensitive 64-bit mixing of two words.
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value);

}  // namespace tssl
