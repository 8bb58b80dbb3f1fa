#pragma once
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "rcm/env.hpp"

namespace rcm::walk {

// One realized trajectory. sites[k] is the position right after jump_times[k]
// (cadlag: at a jump time the walker is already at the new site).
struct PathSample {
  double start_time = 0;
  std::int64_t start_site = 0;
  double horizon = 0;
  std::vector<double> jump_times;
  std::vector<std::int64_t> sites;

  std::int64_t site_at(double t) const;  // valid for t in [start_time, start_time+horizon]
};

enum class RecordMode { full_path, endpoint_only, dyadic_times };

struct WalkerConfig {
  double horizon = 0;
  std::uint64_t seed = 0;
  RecordMode record_mode = RecordMode::full_path;
  std::uint64_t max_jumps = 1'000'000'000;  // explosion guard
  int dyadic_levels = 8;                    // dyadic_times: 2^levels marks across the horizon
};

// First time h >= 0 with int_{t0}^{t0+h} mu_u(x) du = z, by exact inversion of
// the piecewise-linear cumulative rate (no quadrature).
double sample_holding(const env::DynamicConductanceField& f, double t0, std::int64_t x, double z);

// x+1 if u < w_t(x,x+1)/mu_t(x), else x-1.
std::int64_t sample_jump_target(const env::DynamicConductanceField& f, double t, std::int64_t x,
                                double u);

// Event-driven walk started at (s, x), run for cfg.horizon.
PathSample simulate(const env::DynamicConductanceField& f, double s, std::int64_t x,
                    const WalkerConfig& cfg);

// Same walk, observed only at the end (no path storage).
std::int64_t simulate_endpoint(const env::DynamicConductanceField& f, double s, std::int64_t x,
                               const WalkerConfig& cfg);

// Same walk, observed at s + offsets[i] (offsets ascending, within horizon).
std::vector<std::int64_t> simulate_marks(const env::DynamicConductanceField& f, double s,
                                         std::int64_t x, const WalkerConfig& cfg,
                                         std::span<const double> offsets);

// Diffusive rescaling X_{n^2 t}/n at the requested times (cadlag evaluation).
std::vector<double> rescale(const PathSample& path, std::int64_t n, std::span<const double> times);

// CSV dumps. Paths: (walker_id, jump_index, time, site) with jump_index 0 the
// start state. Endpoints: (walker_id, time, value).
void write_paths_csv(std::ostream& os, std::span<const PathSample> paths);
void write_endpoints_csv(std::ostream& os, std::span<const double> times,
                         std::span<const std::int64_t> sites_walker_major, std::size_t n_walkers);

}  // namespace rcm::walk
