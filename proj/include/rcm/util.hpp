#pragma once
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace rcm {

// Shortest round-trip decimal form; the same bytes on every run and any
// thread count, which is what the reproducibility contract needs.
inline std::string fmt_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

// x mod m into [0, m) for site indices.
inline std::int64_t imod(std::int64_t x, std::int64_t m) noexcept {
  std::int64_t r = x % m;
  return r < 0 ? r + m : r;
}

// t mod period into [0, period); period may be +inf (static), then t is returned.
// Reduce t into [0, period). std::fmod is exact, so the only rounding is the
// one shift by period for negative t.
inline double fmod_period(double t, double period) noexcept {
  if (!(period < std::numeric_limits<double>::infinity())) return t;
  double r = std::fmod(t, period);
  if (r < 0) r += period;
  if (r >= period) r -= period;
  return r == 0 ? 0.0 : r;
}

// Deterministic pairwise summation over an index range; the reduction tree
// depends only on the range, never on thread scheduling.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per worker.
// Callers write results into per-index slots, so output is scheduling-free.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    fn(0, n);
    return;
  }
  const unsigned k = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(k);
  const std::size_t chunk = (n + k - 1) / k;
  for (unsigned i = 0; i < k; ++i) {
    const std::size_t b = std::min<std::size_t>(i * chunk, n);
    const std::size_t e = std::min<std::size_t>(b + chunk, n);
    if (b == e) break;
    pool.emplace_back(fn, b, e);
  }
  for (auto& th : pool) th.join();
}

}  // namespace rcm
