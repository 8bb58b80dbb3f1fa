#pragma once
#include <cmath>
#include <cstdint>

namespace rcm {

// SplitMix64 finalizer. Serves both as a small fast PRNG step and as the
// mixer for counter-based streams (hash of (seed, stream, counter)).
inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t mix2(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(splitmix64(a) ^ (b * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
}

// Counter-based stream: the k-th variate of stream (seed, stream_id) is a pure
// function of (seed, stream_id, k), so results do not depend on scheduling.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream_id) : key_(mix2(seed, stream_id)) {}

  std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(++ctr_)); }

  // uniform on [0,1), 53-bit resolution
  double next_unit() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform on (0,1), never returns an exact endpoint
  double next_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Exp(1), strictly positive
  double next_exp() noexcept { return -std::log(next_open()); }

  // standard normal via Box-Muller (consumes two variates)
  double next_normal() noexcept {
    const double r = std::sqrt(-2.0 * std::log(next_open()));
    return r * std::cos(6.283185307179586476925286766559 * next_unit());
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

}  // namespace rcm
