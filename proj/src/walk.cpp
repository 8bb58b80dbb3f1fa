#include "rcm/walk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rcm/rng.hpp"
#include "rcm/util.hpp"

namespace rcm::walk {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_config(const WalkerConfig& cfg) {
  if (!(cfg.horizon >= 0) || !std::isfinite(cfg.horizon))
    throw std::invalid_argument("walk: horizon must be finite and >= 0");
  if (cfg.max_jumps == 0) throw std::invalid_argument("walk: max_jumps must be positive");
}

// Shared event loop. on_jump(t, x) fires once per executed jump, after the
// state moved; jumps landing strictly beyond the horizon are discarded.
template <class OnJump>
void run_walk(const env::DynamicConductanceField& f, double s, std::int64_t x0,
              const WalkerConfig& cfg, OnJump&& on_jump) {
  check_config(cfg);
  CounterRng rng(cfg.seed, 0);
  const double t_end = s + cfg.horizon;
  double t = s;
  std::int64_t x = x0;
  std::uint64_t jumps = 0;
  for (;;) {
    const double z = rng.next_exp();
    double tj = t + sample_holding(f, t, x, z);
    if (tj == t) tj = std::nextafter(tj, kInf);  // keep jump times strictly increasing
    if (!(tj <= t_end)) break;
    x = sample_jump_target(f, tj, x, rng.next_unit());
    t = tj;
    if (++jumps > cfg.max_jumps)
      throw std::runtime_error("walk: jump budget exceeded (explosion guard), max_jumps=" +
                               std::to_string(cfg.max_jumps));
    on_jump(t, x);
  }
}

}  // namespace

double sample_holding(const env::DynamicConductanceField& f, double t0, std::int64_t x, double z) {
  if (!(z >= 0) || !std::isfinite(z)) throw std::invalid_argument("walk: z must be finite and >= 0");
  if (z == 0) return 0.0;
  if (f.is_static()) return z / f.mu(t0, x);

  // Extended precision throughout the inversion: piece lengths and masses pick
  // up one rounding each in double, which across many segments would drift the
  // reconstruction integral well past the advertised few-ulp agreement.
  const double T = f.time_period();
  long double h = 0.0L;
  long double rem = z;
  // whole periods first: one period consumes a fixed mass
  const double period_mass = f.edge_period_mass(x - 1) + f.edge_period_mass(x);
  if (z >= period_mass) {
    const double k = std::floor(z / period_mass);
    h = static_cast<long double>(k) * T;
    rem -= static_cast<long double>(k) * period_mass;
    if (rem < 0) rem = 0;
  }

  env::DynamicConductanceField::EdgeCursor a(f, x - 1), b(f, x);
  // exact phase: fmod is exact, only the shift into [0, T) needs widening
  const double sig = std::fmod(t0 + f.time_offset(), T);
  long double cur = sig;
  if (sig < 0) cur += static_cast<long double>(T);
  double pos = static_cast<double>(cur);
  if (pos >= T) {
    pos = 0.0;
    cur = 0.0L;
  }
  a.seek(pos);
  b.seek(pos);
  const std::size_t guard = 4 * (a.piece_count() + b.piece_count() + 4);
  for (std::size_t it = 0; it < guard; ++it) {
    const long double rate = static_cast<long double>(a.value()) + b.value();
    const double next = std::min({a.next_change(), b.next_change(), T});
    const long double len = static_cast<long double>(next) - cur;
    const long double mass = rate * len;
    if (rem <= mass) {
      const long double dt = rem / rate;
      return static_cast<double>(h + (dt > 0 ? dt : 0.0L));
    }
    rem -= mass;
    h += len;
    if (next >= T) {
      pos = 0.0;
      cur = 0.0L;
      a.rewind();
      b.rewind();
    } else {
      pos = next;
      cur = next;
      if (a.next_change() == next) a.advance();
      if (b.next_change() == next) b.advance();
    }
  }
  throw std::runtime_error("walk: holding-time inversion failed to terminate");
}

std::int64_t sample_jump_target(const env::DynamicConductanceField& f, double t, std::int64_t x,
                                double u) {
  if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("walk: u must lie in [0,1)");
  const double wr = f.eval(t, env::Edge{x});
  const double wl = f.eval(t, env::Edge{x - 1});
  return u < wr / (wl + wr) ? x + 1 : x - 1;
}

PathSample simulate(const env::DynamicConductanceField& f, double s, std::int64_t x,
                    const WalkerConfig& cfg) {
  PathSample p;
  p.start_time = s;
  p.start_site = x;
  p.horizon = cfg.horizon;
  run_walk(f, s, x, cfg, [&p](double t, std::int64_t site) {
    p.jump_times.push_back(t);
    p.sites.push_back(site);
  });
  return p;
}

std::int64_t simulate_endpoint(const env::DynamicConductanceField& f, double s, std::int64_t x,
                               const WalkerConfig& cfg) {
  std::int64_t cur = x;
  run_walk(f, s, x, cfg, [&cur](double, std::int64_t site) { cur = site; });
  return cur;
}

std::vector<std::int64_t> simulate_marks(const env::DynamicConductanceField& f, double s,
                                         std::int64_t x, const WalkerConfig& cfg,
                                         std::span<const double> offsets) {
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (!(offsets[i] >= 0) || offsets[i] > cfg.horizon)
      throw std::out_of_range("walk: mark offset outside horizon");
    if (i > 0 && offsets[i] < offsets[i - 1])
      throw std::invalid_argument("walk: mark offsets must be ascending");
  }
  std::vector<std::int64_t> marks(offsets.size());
  std::int64_t cur = x;
  std::size_t i = 0;
  run_walk(f, s, x, cfg, [&](double t, std::int64_t site) {
    while (i < offsets.size() && s + offsets[i] < t) marks[i++] = cur;
    cur = site;
  });
  while (i < offsets.size()) marks[i++] = cur;
  return marks;
}

std::int64_t PathSample::site_at(double t) const {
  if (!(t >= start_time) || t > start_time + horizon)
    throw std::out_of_range("walk: time outside recorded horizon");
  const auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  const auto k = static_cast<std::size_t>(it - jump_times.begin());
  return k == 0 ? start_site : sites[k - 1];
}

std::vector<double> rescale(const PathSample& path, std::int64_t n, std::span<const double> times) {
  if (n < 1) throw std::invalid_argument("walk: rescaling index must be >= 1");
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  std::vector<double> out;
  out.reserve(times.size());
  for (double t : times) {
    if (!(t >= 0) || t * n2 > path.horizon)
      throw std::out_of_range("walk: rescaled time outside recorded horizon");
    out.push_back(static_cast<double>(path.site_at(path.start_time + n2 * t)) /
                  static_cast<double>(n));
  }
  return out;
}

void write_paths_csv(std::ostream& os, std::span<const PathSample> paths) {
  os << "walker_id,jump_index,time,site\n";
  for (std::size_t w = 0; w < paths.size(); ++w) {
    const PathSample& p = paths[w];
    os << w << ",0," << fmt_double(p.start_time) << ',' << p.start_site << '\n';
    for (std::size_t k = 0; k < p.jump_times.size(); ++k)
      os << w << ',' << (k + 1) << ',' << fmt_double(p.jump_times[k]) << ',' << p.sites[k] << '\n';
  }
}

void write_endpoints_csv(std::ostream& os, std::span<const double> times,
                         std::span<const std::int64_t> sites_walker_major, std::size_t n_walkers) {
  os << "walker_id,time,value\n";
  for (std::size_t w = 0; w < n_walkers; ++w)
    for (std::size_t i = 0; i < times.size(); ++i)
      os << w << ',' << fmt_double(times[i]) << ',' << sites_walker_major[w * times.size() + i]
         << '\n';
}

}  // namespace rcm::walk
