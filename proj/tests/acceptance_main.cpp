// Acceptance gate: one pass/fail line per shipped criterion, exit 0 iff all
// pass. Sized to finish well inside 15 minutes on 4 cores and to leave slack
// on a single core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rcm/corrector.hpp"
#include "rcm/env.hpp"
#include "rcm/experiment.hpp"
#include "rcm/norms.hpp"
#include "rcm/rng.hpp"
#include "rcm/stats.hpp"
#include "rcm/util.hpp"

namespace {

using namespace rcm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Gate {
  int failures = 0;

  void line(int idx, const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << idx << ": " << name;
    if (!detail.empty()) std::cout << "  [" << detail << "]";
    std::cout << "\n" << std::flush;
    failures += pass ? 0 : 1;
  }
};

std::string fmt3(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

env::DynamicConductanceField constant_field(std::int64_t L) {
  env::EnvironmentModel m;
  m.kind = env::ModelKind::constant;
  m.value = 1.0;
  return env::build_environment(m, L, env::kStaticPeriod, 1);
}

env::DynamicConductanceField alternating_field() {
  env::EnvironmentModel m;
  m.kind = env::ModelKind::static_periodic;
  m.pattern = {1.0, 2.0};
  return env::build_environment(m, 2, env::kStaticPeriod, 1);
}

env::DynamicConductanceField random_ring(std::uint64_t seed, std::int64_t L) {
  env::EnvironmentModel m;
  m.kind = env::ModelKind::static_iid;
  m.marginal.kind = env::MarginalKind::uniform;
  m.marginal.lo = 0.5;
  m.marginal.hi = 4.0;
  return env::build_environment(m, L, env::kStaticPeriod, seed);
}

env::DynamicConductanceField two_slab_field(std::int64_t L, double d1, std::vector<double> p1,
                                            double d2, std::vector<double> p2) {
  env::EnvironmentModel m;
  m.kind = env::ModelKind::time_periodic;
  m.slabs.push_back({d1, std::move(p1)});
  m.slabs.push_back({d2, std::move(p2)});
  return env::build_environment(m, L, 0.0, 1);
}

env::DynamicConductanceField markov_field(std::uint64_t seed, std::int64_t L, double T) {
  env::EnvironmentModel m;
  m.kind = env::ModelKind::markov_switching;
  m.marginal.kind = env::MarginalKind::uniform;
  m.marginal.lo = 0.5;
  m.marginal.hi = 3.0;
  m.switch_rate = 1.0;
  return env::build_environment(m, L, T, seed);
}

stats::Ensemble make_ensemble(const env::DynamicConductanceField& f, std::size_t walkers,
                              double horizon, std::uint64_t seed, unsigned threads) {
  stats::EnsembleConfig cfg;
  cfg.n_walkers = walkers;
  cfg.horizon = horizon;
  cfg.seed = seed;
  cfg.threads = threads;
  const double offs[] = {0.0, 1.0};
  return stats::run_ensemble(f, cfg, offs);
}

double harmonic_sigma2(const env::DynamicConductanceField& f, std::int64_t L) {
  double inv = 0;
  for (std::int64_t e = 0; e < L; ++e) inv += 1.0 / f.eval(0.0, env::Edge{e});
  return 2.0 * static_cast<double>(L) / inv;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main() {
  const auto t_suite = Clock::now();
  const unsigned threads =
      std::clamp(std::thread::hardware_concurrency(), 1u, 4u);
  std::cout << "acceptance gate (" << threads << " worker threads)\n";

  Gate gate;

  // the martingale criterion reuses the ensembles and tables built along the
  // way; every ensemble records marks at offsets 0 and 1. mart_pairs holds
  // pointers into these vectors, so the reserves must cover all pushes
  std::vector<std::pair<const stats::Ensemble*, const corrector::HarmonicTable*>> mart_pairs;
  std::vector<stats::Ensemble> keep_ens;
  std::vector<corrector::HarmonicTable> keep_tab;
  keep_ens.reserve(16);
  keep_tab.reserve(16);

  // 1. homogeneous environment: sigma^2 = 2 from 1e5 walkers at t = 100
  try {
    const auto t0 = Clock::now();
    const auto f = constant_field(4);
    keep_ens.push_back(make_ensemble(f, 100'000, 100.0, 202, threads));
    keep_tab.push_back(corrector::solve_static(f, 4));
    const auto est = stats::estimate_sigma2(keep_ens.back(), 100.0);
    const double rel = std::abs(est.value - 2.0) / 2.0;
    const double secs = seconds_since(t0);
    mart_pairs.push_back({&keep_ens.back(), &keep_tab.back()});
    gate.line(1, "homogeneous variance oracle", rel <= 0.02 && secs < 60.0,
              "sigma2=" + fmt3(est.value) + " rel=" + fmt3(rel) + " " + fmt3(secs) + "s");
  } catch (const std::exception& e) {
    gate.line(1, "homogeneous variance oracle", false, e.what());
  }

  // 2. five random static rings: Monte Carlo vs 2L / sum(1/w) at t = 1e4,
  //    and the stationary harmonic coordinate solves its equation exactly
  try {
    const std::int64_t ring_L[5] = {8, 16, 8, 16, 8};
    double worst_rel = 0, worst_resid = 0;
    for (int i = 0; i < 5; ++i) {
      const auto f = random_ring(301 + static_cast<std::uint64_t>(i), ring_L[i]);
      const double ref = harmonic_sigma2(f, ring_L[i]);
      keep_tab.push_back(corrector::solve_static(f, ring_L[i]));
      worst_resid = std::max(worst_resid, corrector::pde_residual(keep_tab.back()));
      keep_ens.push_back(make_ensemble(f, 16'000, 1e4, 320 + static_cast<std::uint64_t>(i), threads));
      const auto est = stats::estimate_sigma2(keep_ens.back(), 1e4);
      worst_rel = std::max(worst_rel, std::abs(est.value - ref) / ref);
      mart_pairs.push_back({&keep_ens.back(), &keep_tab.back()});
    }
    gate.line(2, "static-ring homogenization oracle", worst_rel <= 0.03 && worst_resid < 1e-10,
              "worst rel=" + fmt3(worst_rel) + " worst residual=" + fmt3(worst_resid));
  } catch (const std::exception& e) {
    gate.line(2, "static-ring homogenization oracle", false, e.what());
  }

  // 3. three time-periodic two-slab fields: closed-form variance against both
  //    Var(X_t)/t and the empirical quadratic variation, residual < 1e-9
  try {
    const env::DynamicConductanceField fields[3] = {
        two_slab_field(2, 1.0, {1.0, 2.0}, 1.0, {2.0, 1.0}),
        two_slab_field(4, 0.5, {1.0, 2.0, 3.0, 4.0}, 1.5, {4.0, 3.0, 2.0, 1.0}),
        two_slab_field(3, 1.0, {2.0, 1.0, 3.0}, 2.0, {3.0, 2.0, 1.0}),
    };
    const std::int64_t Ls[3] = {2, 4, 3};
    double worst_mc = 0, worst_qv = 0, worst_resid = 0;
    for (int i = 0; i < 3; ++i) {
      keep_tab.push_back(
          corrector::solve_dynamic(fields[i], Ls[i], fields[i].time_period(), 1e-9));
      const auto& tab = keep_tab.back();
      worst_resid = std::max(worst_resid, corrector::pde_residual(tab));
      const double ref = corrector::variance_formula(tab);
      keep_ens.push_back(
          make_ensemble(fields[i], 20'000, 400.0, 410 + static_cast<std::uint64_t>(i), threads));
      const auto est = stats::estimate_sigma2(keep_ens.back(), 400.0);
      worst_mc = std::max(worst_mc, std::abs(est.value - ref) / ref);
      const auto qv = stats::qv_match(keep_ens.back(), tab, 400.0);
      worst_qv = std::max(worst_qv, std::abs(qv.ratio - 1.0));
      mart_pairs.push_back({&keep_ens.back(), &tab});
    }
    gate.line(3, "two-slab variance formula vs Monte Carlo and QV",
              worst_mc <= 0.03 && worst_qv <= 0.03 && worst_resid < 1e-9,
              "worst mc rel=" + fmt3(worst_mc) + " worst qv dev=" + fmt3(worst_qv) +
                  " worst residual=" + fmt3(worst_resid));
  } catch (const std::exception& e) {
    gate.line(3, "two-slab variance formula vs Monte Carlo and QV", false, e.what());
  }

  // 4. martingale increments of Phi(t, X_t) average to zero on every field
  //    above; tilting the slope to 1.1 is detected beyond 5 standard errors
  try {
    const double grid[] = {0.0};
    const double lags[] = {1.0};
    double worst_z = 0;
    for (const auto& [ens, tab] : mart_pairs) {
      for (const auto& r : stats::martingale_residual(*ens, *tab, grid, lags))
        worst_z = std::max(worst_z, r.stderr_ > 0 ? std::abs(r.mean) / r.stderr_ : 1e300);
    }
    const auto fa = alternating_field();
    stats::EnsembleConfig cc;
    cc.n_walkers = 400'000;
    cc.horizon = 1.0;
    cc.seed = 31;
    cc.threads = threads;
    const double offs[] = {0.0, 1.0};
    const auto control_ens = stats::run_ensemble(fa, cc, offs);
    auto tilted = corrector::solve_static(fa, 2);
    tilted.slope = 1.1;
    const auto res = stats::martingale_residual(control_ens, tilted, grid, lags);
    const double control_z = std::abs(res[0].mean) / res[0].stderr_;
    gate.line(4, "martingale residuals with tilted negative control",
              worst_z <= 3.0 && control_z > 5.0,
              "worst z=" + fmt3(worst_z) + " over " + std::to_string(mart_pairs.size()) +
                  " fields, control z=" + fmt3(control_z));
  } catch (const std::exception& e) {
    gate.line(4, "martingale residuals with tilted negative control", false, e.what());
  }

  // 5. rescaled endpoints X_{n^2}/n pass a KS test against N(0, sigma^2) at
  //    n = 30, m = 5000 on three field classes; the KS threshold itself
  //    rejects a true null at 5 +- 1.5 percent
  try {
    const double n = 30.0, horizon = 900.0;
    const std::size_t m = 5000;
    struct KsCase {
      const char* name;
      env::DynamicConductanceField field;
      double sigma2;
      std::uint64_t seed;
    };
    const auto ring = random_ring(302, 8);
    const auto slab = two_slab_field(2, 1.0, {1.0, 2.0}, 1.0, {2.0, 1.0});
    KsCase cases[3] = {
        {"constant", constant_field(4), 2.0, 505},
        {"static-random", ring, harmonic_sigma2(ring, 8), 506},
        {"two-slab", slab,
         corrector::variance_formula(corrector::solve_dynamic(slab, 2, 2.0)), 507},
    };
    bool all = true;
    std::string detail;
    for (auto& kc : cases) {
      stats::EnsembleConfig cfg;
      cfg.n_walkers = m;
      cfg.horizon = horizon;
      cfg.seed = kc.seed;
      cfg.threads = threads;
      const auto ens = stats::run_ensemble(kc.field, cfg);
      std::vector<double> sample(m);
      for (std::size_t w = 0; w < m; ++w)
        sample[w] = static_cast<double>(ens.mark(w, 0)) / n;
      const auto ks = stats::ks_gaussian(sample, kc.sigma2);
      all = all && ks.pass;
      detail += std::string(kc.name) + " d=" + fmt3(ks.d) + " ";
    }
    std::size_t rejects = 0;
    const std::size_t reps = 1000, msize = 500;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      CounterRng rng(777, rep);
      std::vector<double> sample(msize);
      for (auto& v : sample) v = rng.next_normal();
      rejects += stats::ks_gaussian(sample, 1.0).pass ? 0 : 1;
    }
    const double rate = static_cast<double>(rejects) / static_cast<double>(reps);
    all = all && rate >= 0.035 && rate <= 0.065;
    gate.line(5, "rescaled-endpoint normality and KS self-test", all,
              detail + "self-test rate=" + fmt3(rate));
  } catch (const std::exception& e) {
    gate.line(5, "rescaled-endpoint normality and KS self-test", false, e.what());
  }

  // 6. corrector sublinearity profiles: exactly zero on a homogeneous ring,
  //    the hand value 1/6 at n = 2 on the alternating ring, and decaying in n
  //    on markov-switching fields when L grows with n
  try {
    const std::int64_t small_n[3] = {2, 4, 8};
    const auto zero_pts = corrector::sublinearity_profile(constant_field(4), small_n);
    bool zeros = true;
    for (const auto& p : zero_pts) zeros = zeros && p.linf < 1e-14 && p.l1 < 1e-14;

    const std::int64_t two[1] = {2};
    const auto alt_pts = corrector::sublinearity_profile(alternating_field(), two);
    const bool alt_ok = std::abs(alt_pts[0].linf - 1.0 / 6.0) < 1e-12 &&
                        std::abs(alt_pts[0].l1 - 1.0 / 15.0) < 1e-12;

    std::vector<double> lx, linf_y, l1_y;
    for (const std::int64_t n : {4, 8, 16, 32}) {
      const auto f = markov_field(600 + static_cast<std::uint64_t>(n), 2 * n, 4.0);
      const std::int64_t one[1] = {n};
      const auto pts = corrector::sublinearity_profile(f, one);
      lx.push_back(std::log(static_cast<double>(n)));
      linf_y.push_back(std::log(pts[0].linf));
      l1_y.push_back(std::log(pts[0].l1));
    }
    const auto finf = stats::fit_line(lx, linf_y);
    const auto f1 = stats::fit_line(lx, l1_y);
    gate.line(6, "corrector sublinearity profiles",
              zeros && alt_ok && finf.slope < 0 && f1.slope < 0,
              "alt linf(2)=" + fmt3(alt_pts[0].linf) + " markov slopes " + fmt3(finf.slope) +
                  " / " + fmt3(f1.slope));
  } catch (const std::exception& e) {
    gate.line(6, "corrector sublinearity profiles", false, e.what());
  }

  // 7. the parabolic Sobolev inequality holds on 1e3 randomized instances and
  //    reproduces the worked point-mass values (1, 12)
  try {
    const auto ones = constant_field(4);
    const norms::SpaceTimeBox wbox{0.0, 1.0, -1, 1};
    const norms::SpaceTimeFn delta{[](double, std::int64_t x) { return x == 0 ? 1.0 : 0.0; },
                                   {}};
    const auto w = norms::sobolev_check(ones, delta, wbox, norms::Exponent(1.0));
    const bool worked = std::abs(w.lhs - 1.0) < 1e-12 && std::abs(w.rhs - 12.0) < 1e-12;

    const double qgrid[4] = {1.0, 2.0, 5.0, 0.0};
    std::size_t violations = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
      CounterRng rng(888, i);
      const int n = 1 + static_cast<int>(rng.next_unit() * 4);
      const auto box = norms::box_Q(n);
      const auto f = markov_field(2000 + i, 8, 4.0);
      const int pieces = 1 + static_cast<int>(rng.next_unit() * 3);
      std::vector<double> breaks;
      for (int k = 1; k < pieces; ++k) breaks.push_back(box.t1 * rng.next_unit());
      std::sort(breaks.begin(), breaks.end());
      const auto sites = static_cast<std::size_t>(box.site_count());
      std::vector<std::vector<double>> vals(static_cast<std::size_t>(pieces),
                                            std::vector<double>(sites));
      for (auto& row : vals)
        for (auto& v : row) v = 2 * rng.next_unit() - 1;
      const norms::SpaceTimeFn u{
          [box, breaks, vals](double t, std::int64_t x) {
            if (x < box.site_lo || x > box.site_hi) return 0.0;
            std::size_t k = 0;
            while (k < breaks.size() && t >= breaks[k]) ++k;
            return vals[k][static_cast<std::size_t>(x - box.site_lo)];
          },
          breaks};
      const double qv = qgrid[std::min(3, static_cast<int>(rng.next_unit() * 4))];
      const auto rep = norms::sobolev_check(
          f, u, box, qv == 0 ? norms::Exponent::infinity() : norms::Exponent(qv));
      violations += rep.holds ? 0 : 1;
    }
    gate.line(7, "parabolic Sobolev property suite", worked && violations == 0,
              "worked=(" + fmt3(w.lhs) + ", " + fmt3(w.rhs) + ") violations=" +
                  std::to_string(violations) + "/1000");
  } catch (const std::exception& e) {
    gate.line(7, "parabolic Sobolev property suite", false, e.what());
  }

  // 8. moment-condition checkers: the (4,1)/(3,1) facts, the p > 3 boundary
  //    at q = 1, the d = 1 display agreement, the static reduction to p > 1,
  //    and the feasibility-region CSV artifact
  try {
    using norms::Exponent;
    const Exponent inf = Exponent::infinity();
    bool ok = norms::condition_1d(Exponent(4.0), Exponent(1.0)) &&
              !norms::condition_1d(Exponent(3.0), Exponent(1.0));
    for (int i = 0; i <= 500 && ok; ++i) {
      const double p = 1.0 + 7.0 * i / 500.0;
      ok = norms::condition_1d(Exponent(p), Exponent(1.0)) == (p > 3.0);
    }
    CounterRng rng(999, 0);
    for (int i = 0; i < 100 && ok; ++i) {
      const double p = 1.0 + 7.0 * rng.next_unit();
      const double display = 1.0 / (p - 1.0) + 1.0 / (p - 1.0) + 1.0;  // d = 1, q = 1
      ok = (display < 2.0) == norms::condition_1d(Exponent(p), Exponent(1.0));
    }
    ok = ok && norms::condition_int(inf, inf, inf, std::nullopt, 1);
    for (int i = 0; i <= 100 && ok; ++i) {
      const double p = 1.0 + 5.0 * i / 100.0;
      ok = norms::condition_int(Exponent(p), inf, inf, std::nullopt, 1) == (p > 1.0);
    }

    const fs::path dir = fs::temp_directory_path() / "rcm_acceptance" / "conditions";
    fs::remove_all(dir);
    experiment::RunOptions opt;
    opt.out_dir = dir.string();
    const auto res = experiment::run(experiment::json{{"experiment", "check-conditions"}}, opt);
    const std::string region = slurp(dir / "region.csv");
    std::size_t rows = 0;
    for (char ch : region) rows += ch == '\n';
    ok = ok && res.status == 0 && rows == 50 * 51 + 1;
    gate.line(8, "moment-condition checkers and region artifact", ok,
              "region rows=" + std::to_string(rows ? rows - 1 : 0));
  } catch (const std::exception& e) {
    gate.line(8, "moment-condition checkers and region artifact", false, e.what());
  }

  // 9. rerunning one config reproduces every output byte, with any thread
  //    count, and the whole gate fits the wall-clock budget
  try {
    const auto cfg = experiment::parse_config_text(R"({
      "experiment": "verify-qip",
      "environment": {"model": "time-periodic", "slabs": [
        {"duration": 1.0, "pattern": [1.0, 2.0]},
        {"duration": 1.0, "pattern": [2.0, 1.0]}]},
      "sizes": {"L": 2, "walkers": 2000, "horizon": 6.0},
      "seeds": {"environment": 3, "walkers": 5},
      "tolerances": {"sigma2_rel": 0.2, "qv_rel": 0.2, "martingale_se": 4.0}
    })");
    const fs::path base = fs::temp_directory_path() / "rcm_acceptance";
    const fs::path d1 = base / "rerun_a", d2 = base / "rerun_b";
    fs::remove_all(d1);
    fs::remove_all(d2);
    experiment::RunOptions o1, o2;
    o1.out_dir = d1.string();
    o1.threads = 1;
    o2.out_dir = d2.string();
    o2.threads = 4;
    const auto r1 = experiment::run(cfg, o1);
    const auto r2 = experiment::run(cfg, o2);
    bool identical = r1.status == 0 && r2.status == 0;
    for (const char* name : {"report.json", "endpoints.csv", "residuals.csv"})
      identical = identical && slurp(d1 / name) == slurp(d2 / name) && !slurp(d1 / name).empty();
    const double total = seconds_since(t_suite);
    gate.line(9, "byte-identical reruns within the time budget", identical && total < 900.0,
              std::string("identical=") + (identical ? "yes" : "no") + " total=" + fmt3(total) +
                  "s");
  } catch (const std::exception& e) {
    gate.line(9, "byte-identical reruns within the time budget", false, e.what());
  }

  std::cout << (9 - gate.failures) << "/9 criteria passed in " << fmt3(seconds_since(t_suite))
            << "s\n";
  return gate.failures == 0 ? 0 : 1;
}
