#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace demix {

/// Counter-based random stream. Draw i of the stream keyed by (seed, purpose)
/// is a pure function of (seed, purpose, counter + i), so independent purposes
/// never consume each other's draws.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t counter = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1].
  double uniform_open0();
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
  std::uint64_t below(std::uint64_t n);
  /// Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);

  std::uint64_t seed() const { return seed_; }
  const std::string& purpose() const { return purpose_; }
  std::uint64_t counter() const { return counter_; }

  /// A child stream keyed by this stream's purpose plus `suffix`.
  RngStream substream(std::string_view suffix, std::uint64_t counter = 0) const;

 private:
  std::uint64_t seed_;
  std::string purpose_;
  std::uint64_t key_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace demix
