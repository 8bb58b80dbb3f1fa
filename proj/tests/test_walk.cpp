#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "rcm/env.hpp"
#include "rcm/rng.hpp"
#include "rcm/util.hpp"
#include "rcm/walk.hpp"

using namespace rcm;
using namespace rcm::env;
using namespace rcm::walk;

namespace {

DynamicConductanceField constant_field(double v, std::int64_t L = 4) {
  EnvironmentModel m;
  m.kind = ModelKind::constant;
  m.value = v;
  return build_environment(m, L, kStaticPeriod, 1);
}

DynamicConductanceField alternating_field() {
  EnvironmentModel m;
  m.kind = ModelKind::static_periodic;
  m.pattern = {1.0, 2.0};
  return build_environment(m, 2, kStaticPeriod, 1);
}

// rate mu = 1 for one time unit, then mu = 3 for three (period 4, mass 10)
DynamicConductanceField two_rate_field() {
  EnvironmentModel m;
  m.kind = ModelKind::time_periodic;
  m.slabs = {{1.0, {0.5}}, {3.0, {1.5}}};
  return build_environment(m, 2, 0.0, 1);
}

DynamicConductanceField markov_field(std::uint64_t seed, std::int64_t L = 4, double T = 64.0) {
  EnvironmentModel m;
  m.kind = ModelKind::markov_switching;
  m.marginal.kind = MarginalKind::two_point;
  m.marginal.kappa = 2.0;
  m.marginal.p_kappa = 0.5;
  m.switch_rate = 1.0;
  return build_environment(m, L, T, seed);
}

}  // namespace

TEST_SUITE("walk") {

TEST_CASE("holding time on a constant field is z over the total rate") {
  auto f = constant_field(1.0);
  CHECK(sample_holding(f, 0.0, 0, std::log(2.0)) == std::log(2.0) / 2);
  CHECK(sample_holding(f, -7.5, 3, 1.0) == 0.5);
  auto g = constant_field(2.5);
  CHECK(sample_holding(g, 0.3, 1, 1.0) == 1.0 / 5.0);
  CHECK(sample_holding(f, 0.0, 0, 0.0) == 0.0);
  CHECK_THROWS_AS(sample_holding(f, 0.0, 0, -1.0), std::invalid_argument);
}

TEST_CASE("holding time crosses rate changes by exact piecewise inversion") {
  auto f = two_rate_field();
  // from t=0: one unit of mass by t=1, the rest at rate 3
  CHECK(sample_holding(f, 0.0, 0, 2.0) == doctest::Approx(1.0 + 1.0 / 3).epsilon(1e-15));
  // from t=1.5: 7.5 of mass by the period end, then rate 1
  CHECK(sample_holding(f, 1.5, 0, 8.0) == doctest::Approx(3.0).epsilon(1e-15));
  // whole periods are skipped in closed form (mass 10 per period of length 4)
  CHECK(sample_holding(f, 0.0, 0, 1002.0) ==
        doctest::Approx(400.0 + 4.0 / 3).epsilon(1e-12));
}

TEST_CASE("integrating the jump rate over the holding interval recovers z") {
  auto f = markov_field(17);
  const double T = f.time_period();
  auto bnds = f.time_partition();
  CounterRng rng(5, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const double t0 = (rng.next_unit() - 0.5) * 300.0;
    const auto x = static_cast<std::int64_t>(rng.next_u64() % 9) - 4;
    const double z = rng.next_exp() * 4;
    const double h = sample_holding(f, t0, x, z);
    REQUIRE(h >= 0);
    // piece boundaries of t -> mu_t(x) inside (t0, t0+h), all periods unrolled;
    // extended precision keeps the oracle's own roundoff below the tolerance
    const long double te = static_cast<long double>(t0) + h;
    std::vector<long double> cuts{t0, te};
    for (double b : bnds) {
      const auto lo = static_cast<long>(std::floor((t0 - b) / T)) - 1;
      const auto hi = static_cast<long>(std::floor((t0 + h - b) / T)) + 1;
      for (long n = lo; n <= hi; ++n) {
        const long double c = static_cast<long double>(b) + static_cast<long double>(n) * T;
        if (c > t0 && c < te) cuts.push_back(c);
      }
    }
    std::sort(cuts.begin(), cuts.end());
    long double integral = 0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
      integral += static_cast<long double>(f.mu(static_cast<double>((cuts[i] + cuts[i + 1]) / 2), x)) *
                  (cuts[i + 1] - cuts[i]);
    // a double-valued h cannot resolve time below ulp(h), which is worth
    // mu * ulp(h) / 2 of mass; beyond that floor the inversion is ulp-exact
    const double ulp_z = std::nextafter(z, std::numeric_limits<double>::infinity()) - z;
    const double ulp_h = std::nextafter(h, std::numeric_limits<double>::infinity()) - h;
    const double tol = 4 * ulp_z + 0.5 * ulp_h * f.mu(t0 + h, x);
    CHECK(std::abs(static_cast<double>(integral) - z) <= tol);
  }
}

TEST_CASE("jump target follows the conductance ratio at the jump time") {
  auto f = alternating_field();
  // site 1: left edge weighs 1, right edge weighs 2
  CHECK(sample_jump_target(f, 0.0, 1, 0.0) == 2);
  CHECK(sample_jump_target(f, 0.0, 1, 0.66) == 2);
  CHECK(sample_jump_target(f, 0.0, 1, 0.67) == 0);
  auto g = constant_field(1.0);
  CHECK(sample_jump_target(g, 0.0, 0, 0.49) == 1);
  CHECK(sample_jump_target(g, 0.0, 0, 0.5) == -1);
  CHECK_THROWS_AS(sample_jump_target(g, 0.0, 0, 1.0), std::invalid_argument);
}

TEST_CASE("empirical jump direction frequency matches the ratio") {
  auto f = alternating_field();
  CounterRng rng(12, 0);
  const int n = 1000000;
  long right = 0;
  for (int i = 0; i < n; ++i)
    if (sample_jump_target(f, 0.0, 1, rng.next_unit()) == 2) ++right;
  CHECK(std::abs(static_cast<double>(right) / n - 2.0 / 3) < 0.002);
}

TEST_CASE("zero horizon yields an empty path") {
  auto f = markov_field(3);
  WalkerConfig cfg;
  cfg.horizon = 0;
  cfg.seed = 8;
  auto p = simulate(f, 2.5, -3, cfg);
  CHECK(p.jump_times.empty());
  CHECK(p.start_site == -3);
  CHECK(p.site_at(2.5) == -3);
}

TEST_CASE("paths are nearest-neighbor with strictly increasing jump times") {
  auto f = markov_field(21);
  WalkerConfig cfg;
  cfg.horizon = 50;
  for (std::uint64_t w = 0; w < 100; ++w) {
    cfg.seed = mix2(100, w);
    auto p = simulate(f, -3.0, 2, cfg);
    std::int64_t prev = p.start_site;
    double tprev = p.start_time;
    for (std::size_t k = 0; k < p.jump_times.size(); ++k) {
      CHECK(p.jump_times[k] > tprev);
      CHECK(p.jump_times[k] <= p.start_time + p.horizon);
      CHECK(std::abs(p.sites[k] - prev) == 1);
      tprev = p.jump_times[k];
      prev = p.sites[k];
    }
  }
}

TEST_CASE("unit conductances: jump count is Poisson with rate 2") {
  auto f = constant_field(1.0);
  WalkerConfig cfg;
  cfg.horizon = 10;
  const int n = 100000;
  long long total = 0;
  for (int w = 0; w < n; ++w) {
    cfg.seed = mix2(7, static_cast<std::uint64_t>(w));
    total += static_cast<long long>(simulate(f, 0, 0, cfg).jump_times.size());
  }
  const double mean = static_cast<double>(total) / n;
  CHECK(std::abs(mean - 20.0) < 0.2);  // 1 percent; the standard error is 0.014
}

TEST_CASE("unit conductances: endpoint variance is 2t") {
  auto f = constant_field(1.0);
  WalkerConfig cfg;
  cfg.horizon = 100;
  cfg.record_mode = RecordMode::endpoint_only;
  const int n = 100000;
  double s1 = 0, s2 = 0;
  for (int w = 0; w < n; ++w) {
    cfg.seed = mix2(40, static_cast<std::uint64_t>(w));
    const auto x = static_cast<double>(simulate_endpoint(f, 0, 0, cfg));
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.15);          // 3 standard errors
  CHECK(std::abs(var - 200.0) < 4.0);    // 2 percent
}

TEST_CASE("uniform start measure stays uniform (symmetric generator)") {
  auto run = [](const DynamicConductanceField& f, std::uint64_t salt) {
    const auto L = f.space_period();
    WalkerConfig cfg;
    cfg.horizon = 10;
    cfg.record_mode = RecordMode::endpoint_only;
    const int n = 80000;
    std::vector<long> counts(static_cast<std::size_t>(L), 0);
    for (int w = 0; w < n; ++w) {
      cfg.seed = mix2(salt, static_cast<std::uint64_t>(w));
      const auto y = simulate_endpoint(f, 0, w % L, cfg);
      ++counts[static_cast<std::size_t>(imod(y, L))];
    }
    const double e = static_cast<double>(n) / static_cast<double>(L);
    double chi2 = 0;
    for (long c : counts) chi2 += (c - e) * (c - e) / e;
    return chi2;
  };
  EnvironmentModel iid;
  iid.kind = ModelKind::static_iid;
  iid.marginal.kind = MarginalKind::uniform;
  iid.marginal.lo = 0.5;
  iid.marginal.hi = 4.0;
  auto f = build_environment(iid, 8, kStaticPeriod, 71);
  EnvironmentModel dyn;
  dyn.kind = ModelKind::time_periodic;
  dyn.slabs = {{2.0, {1.0, 3.0}}, {1.0, {2.0, 0.7}}};
  auto g = build_environment(dyn, 8, 0.0, 0);
  // 1 percent critical value for 7 degrees of freedom
  CHECK(run(f, 1001) < 18.475);
  CHECK(run(g, 1002) < 18.475);
}

TEST_CASE("a fixed seed reproduces the path; distinct seeds diverge") {
  auto f = markov_field(9);
  WalkerConfig cfg;
  cfg.horizon = 30;
  cfg.seed = 555;
  auto p = simulate(f, 1.0, 0, cfg);
  auto q = simulate(f, 1.0, 0, cfg);
  CHECK(p.jump_times == q.jump_times);
  CHECK(p.sites == q.sites);
  cfg.seed = 556;
  auto r = simulate(f, 1.0, 0, cfg);
  CHECK(p.jump_times != r.jump_times);
}

TEST_CASE("increments over disjoint windows are uncorrelated on a constant field") {
  auto f = constant_field(1.0);
  WalkerConfig cfg;
  cfg.horizon = 10;
  const double offs[] = {5.0, 10.0};
  const int n = 100000;
  double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
  for (int w = 0; w < n; ++w) {
    cfg.seed = mix2(60, static_cast<std::uint64_t>(w));
    auto m = simulate_marks(f, 0, 0, cfg, offs);
    const double d1 = static_cast<double>(m[0]);
    const double d2 = static_cast<double>(m[1] - m[0]);
    s1 += d1;
    s2 += d2;
    s11 += d1 * d1;
    s22 += d2 * d2;
    s12 += d1 * d2;
  }
  const double c11 = s11 / n - (s1 / n) * (s1 / n);
  const double c22 = s22 / n - (s2 / n) * (s2 / n);
  const double c12 = s12 / n - (s1 / n) * (s2 / n);
  CHECK(std::abs(c12 / std::sqrt(c11 * c22)) < 0.01);
}

TEST_CASE("endpoint and mark observers agree with the full path") {
  auto f = markov_field(33);
  WalkerConfig cfg;
  cfg.horizon = 25;
  const double offs[] = {0.0, 4.0, 13.7, 25.0};
  for (std::uint64_t w = 0; w < 300; ++w) {
    cfg.seed = mix2(70, w);
    auto p = simulate(f, -2.0, 1, cfg);
    CHECK(simulate_endpoint(f, -2.0, 1, cfg) == p.site_at(-2.0 + 25.0));
    auto m = simulate_marks(f, -2.0, 1, cfg, offs);
    for (int i = 0; i < 4; ++i) CHECK(m[static_cast<std::size_t>(i)] == p.site_at(-2.0 + offs[i]));
  }
}

TEST_CASE("diffusive rescaling evaluates the path at n^2 t over n") {
  PathSample p;
  p.start_time = 0;
  p.start_site = 0;
  p.horizon = 9;
  p.jump_times = {1.0, 2.0};
  p.sites = {1, 2};
  const double ts[] = {0.0, 1.0 / 9, 2.0 / 9, 1.0};
  auto r = rescale(p, 3, ts);
  REQUIRE(r.size() == 4);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(r[2] == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(r[3] == doctest::Approx(2.0 / 3).epsilon(1e-15));
  const double bad[] = {1.5};
  CHECK_THROWS_AS(rescale(p, 3, bad), std::out_of_range);
}

TEST_CASE("the explosion guard trips instead of looping") {
  auto f = constant_field(1.0);
  WalkerConfig cfg;
  cfg.horizon = 1e3;
  cfg.seed = 2;
  cfg.max_jumps = 10;
  CHECK_THROWS_AS(simulate(f, 0, 0, cfg), std::runtime_error);
}

TEST_CASE("csv writers emit the documented columns") {
  PathSample p;
  p.start_time = 0.5;
  p.start_site = -1;
  p.horizon = 2;
  p.jump_times = {1.25};
  p.sites = {0};
  std::ostringstream os;
  write_paths_csv(os, std::span<const PathSample>(&p, 1));
  CHECK(os.str() ==
        "walker_id,jump_index,time,site\n"
        "0,0,0.5,-1\n"
        "0,1,1.25,0\n");
  std::ostringstream es;
  const double times[] = {1.0, 2.0};
  const std::int64_t sites[] = {3, -4, 0, 1};
  write_endpoints_csv(es, times, sites, 2);
  CHECK(es.str() ==
        "walker_id,time,value\n"
        "0,1,3\n"
        "0,2,-4\n"
        "1,1,0\n"
        "1,2,1\n");
}

}  // TEST_SUITE
