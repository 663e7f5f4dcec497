#pragma once

#include <cstdint>
#include <limits>

namespace mtm {

/// Well-known purposes a run draws randomness for. Each gets its own stream
/// so that changing how one purpose consumes numbers leaves the others intact.
enum class StreamId : std::uint64_t {
  init = 1,
  train_sampling = 2,
  perturbation = 3,
  validation = 4,
  evaluation = 5,
  synthetic = 6,
  noise = 7,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based generator: the n-th output is a pure function of
/// (key, n), where the key mixes the run seed with a stream path.
/// Satisfies UniformRandomBitGenerator, so it plugs into <random>.
class RngStream {
public:
  using result_type = std::uint64_t;

  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : key_(splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ull))) {}
  RngStream(std::uint64_t seed, StreamId stream)
      : RngStream(seed, static_cast<std::uint64_t>(stream)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    return splitmix64(key_ ^ splitmix64(counter_++));
  }

  /// Independent child stream, e.g. one per evaluation episode.
  RngStream derive(std::uint64_t child) const noexcept {
    RngStream r;
    r.key_ = splitmix64(key_ + 0x632BE59BD9B4E019ull * (child + 1));
    return r;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// +1 or -1 with equal probability.
  int rademacher() noexcept { return ((*this)() >> 63) ? 1 : -1; }

  std::uint64_t counter() const noexcept { return counter_; }
  std::uint64_t key() const noexcept { return key_; }

  friend bool operator==(const RngStream&, const RngStream&) = default;

private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

} // namespace mtm
