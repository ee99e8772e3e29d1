#include "demix/numerics/rng.hpp"

#include "demix/numerics/hash.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace demix {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t counter)
    : seed_(seed), purpose_(purpose), key_(splitmix64(seed) ^ fnv1a64(purpose)), counter_(counter) {}

std::uint64_t RngStream::next_u64() {
  // Two rounds of mixing over (key, counter) keep nearby counters decorrelated.
  const std::uint64_t c = counter_++;
  return splitmix64(splitmix64(key_ ^ (c * 0xd1b54a32d192ed03ULL)) + c);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform_open0() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

double RngStream::normal() {
  const double u1 = uniform_open0();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below requires n > 0");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x < limit) return x % n;
  }
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma shape must be positive");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    const double u = uniform_open0();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = uniform_open0();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

RngStream RngStream::substream(std::string_view suffix, std::uint64_t counter) const {
  std::string p = purpose_;
  p += '/';
  p += suffix;
  return RngStream(seed_, p, counter);
}

}  // namespace demix
