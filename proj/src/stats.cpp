#include "rcm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "rcm/rng.hpp"
#include "rcm/util.hpp"

namespace rcm::stats {

namespace {

void require(bool ok, const char* m) {
  if (!ok) throw std::invalid_argument(std::string("stats: ") + m);
}

// X at start_time + offset for every walker, from marks when recorded, else
// replayed from the stored paths
std::vector<std::int64_t> sites_at(const Ensemble& ens, double offset) {
  require(offset >= 0 && offset <= ens.cfg.horizon, "time outside the ensemble horizon");
  const auto n = ens.cfg.n_walkers;
  std::vector<std::int64_t> out(n);
  const auto it = std::find(ens.mark_offsets.begin(), ens.mark_offsets.end(), offset);
  if (it != ens.mark_offsets.end()) {
    const auto i = static_cast<std::size_t>(it - ens.mark_offsets.begin());
    for (std::size_t w = 0; w < n; ++w) out[w] = ens.mark(w, i);
    return out;
  }
  require(!ens.paths.empty(), "time not recorded and no full paths kept");
  for (std::size_t w = 0; w < n; ++w)
    out[w] = ens.paths[w].site_at(ens.cfg.start_time + offset);
  return out;
}

// psi rows cached per distinct evaluation time
class PsiCache {
 public:
  explicit PsiCache(const corrector::HarmonicTable& tb) : tb_(tb) {}

  double phi(double t, std::int64_t x) {
    auto it = rows_.find(t);
    if (it == rows_.end()) it = rows_.emplace(t, tb_.psi_at(t)).first;
    const auto L = tb_.space_period();
    return tb_.slope * static_cast<double>(x) + it->second[static_cast<std::size_t>(imod(x, L))];
  }

 private:
  const corrector::HarmonicTable& tb_;
  std::map<double, std::vector<double>> rows_;
};

void check_same_field(const Ensemble& ens, const corrector::HarmonicTable& tb) {
  require(ens.field.digest() == tb.field.digest(), "table was solved on a different field");
}

}  // namespace

Ensemble run_ensemble(const env::DynamicConductanceField& field, const EnsembleConfig& cfg,
                      std::span<const double> mark_offsets) {
  require(cfg.n_walkers >= 1, "need at least one walker");
  require(cfg.horizon > 0 && std::isfinite(cfg.horizon), "horizon must be positive");
  Ensemble ens;
  ens.field = field;
  ens.cfg = cfg;
  for (std::size_t i = 0; i < mark_offsets.size(); ++i) {
    const double o = mark_offsets[i];
    require(o >= 0 && o <= cfg.horizon, "mark offsets must lie in [0, horizon]");
    require(i == 0 || mark_offsets[i - 1] < o, "mark offsets must be strictly ascending");
    ens.mark_offsets.push_back(o);
  }
  if (ens.mark_offsets.empty() || ens.mark_offsets.back() != cfg.horizon)
    ens.mark_offsets.push_back(cfg.horizon);

  const auto n_marks = ens.mark_offsets.size();
  ens.marks.resize(cfg.n_walkers * n_marks);
  if (cfg.keep_paths) ens.paths.resize(cfg.n_walkers);

  parallel_for(cfg.n_walkers, std::max(1u, cfg.threads), [&](std::size_t b, std::size_t e) {
    for (std::size_t w = b; w < e; ++w) {
      walk::WalkerConfig wc;
      wc.horizon = cfg.horizon;
      wc.seed = mix2(cfg.seed, static_cast<std::uint64_t>(w));
      wc.max_jumps = cfg.max_jumps;
      if (cfg.keep_paths) {
        wc.record_mode = walk::RecordMode::full_path;
        ens.paths[w] = walk::simulate(field, cfg.start_time, cfg.start_site, wc);
        for (std::size_t i = 0; i < n_marks; ++i)
          ens.marks[w * n_marks + i] =
              ens.paths[w].site_at(cfg.start_time + ens.mark_offsets[i]);
      } else {
        wc.record_mode = walk::RecordMode::endpoint_only;
        const auto m = walk::simulate_marks(field, cfg.start_time, cfg.start_site, wc,
                                            ens.mark_offsets);
        std::copy(m.begin(), m.end(),
                  ens.marks.begin() + static_cast<std::ptrdiff_t>(w * n_marks));
      }
    }
  });
  return ens;
}

Estimate estimate_sigma2(const Ensemble& ens, double t) {
  require(ens.cfg.n_walkers >= 1000, "variance estimation needs at least 1000 walkers");
  require(t > 0, "elapsed time must be positive");
  const auto sites = sites_at(ens, t);
  const auto n = static_cast<double>(sites.size());
  std::vector<double> d(sites.size()), d2(sites.size());
  for (std::size_t w = 0; w < sites.size(); ++w) {
    d[w] = static_cast<double>(sites[w] - ens.cfg.start_site);
    d2[w] = d[w] * d[w];
  }
  const double s1 = pairwise_sum(d);
  const double s2 = pairwise_sum(d2);
  const double var = (s2 - s1 * s1 / n) / (n - 1);

  Estimate est;
  est.value = var / t;
  // delete-one jackknife on the variance estimator
  std::vector<double> loo(sites.size());
  for (std::size_t w = 0; w < sites.size(); ++w) {
    const double s1w = s1 - d[w], s2w = s2 - d2[w];
    loo[w] = (s2w - s1w * s1w / (n - 1)) / (n - 2) / t;
  }
  const double lbar = pairwise_sum(loo) / n;
  double acc = 0;
  for (double v : loo) acc += (v - lbar) * (v - lbar);
  est.stderr_ = std::sqrt((n - 1) / n * acc);
  return est;
}

double gaussian_cdf(double x, double sigma2) {
  require(sigma2 > 0 && std::isfinite(sigma2), "variance must be positive");
  return 0.5 * (1 + std::erf(x / std::sqrt(2 * sigma2)));
}

KsResult ks_gaussian(std::span<const double> sample, double sigma2) {
  require(!sample.empty(), "empty sample");
  require(sigma2 > 0 && std::isfinite(sigma2), "variance must be positive");
  std::vector<double> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  const auto m = static_cast<double>(s.size());
  KsResult r;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = gaussian_cdf(s[i], sigma2);
    r.d = std::max(r.d, std::max(f - static_cast<double>(i) / m,
                                 static_cast<double>(i + 1) / m - f));
  }
  r.threshold = 1.36 / std::sqrt(m);
  r.pass = r.d < r.threshold;
  return r;
}

std::vector<LagResidual> martingale_residual(const Ensemble& ens,
                                             const corrector::HarmonicTable& table,
                                             std::span<const double> grid,
                                             std::span<const double> lags) {
  require(!grid.empty() && !lags.empty(), "need at least one window start and one lag");
  check_same_field(ens, table);
  PsiCache cache(table);
  const double s0 = ens.cfg.start_time;
  std::vector<LagResidual> out;
  out.reserve(lags.size());
  for (const double lag : lags) {
    require(lag > 0, "lags must be positive");
    for (const double g : grid)
      require(g >= 0 && g + lag <= ens.cfg.horizon, "window exceeds the ensemble horizon");
    const auto n = ens.cfg.n_walkers;
    std::vector<double> sum(n, 0.0), sumsq(n, 0.0);
    for (const double g : grid) {
      const double t0 = s0 + g, t1 = s0 + g + lag;
      const auto x0 = sites_at(ens, g);
      const auto x1 = sites_at(ens, g + lag);
      for (std::size_t w = 0; w < n; ++w) {
        const double inc = cache.phi(t1, x1[w]) - cache.phi(t0, x0[w]);
        sum[w] += inc;
        sumsq[w] += inc * inc;
      }
    }
    const auto cnt = static_cast<double>(n * grid.size());
    const double s1 = pairwise_sum(sum);
    const double s2 = pairwise_sum(sumsq);
    LagResidual r;
    r.lag = lag;
    r.count = n * grid.size();
    r.mean = s1 / cnt;
    const double var = (s2 - s1 * s1 / cnt) / (cnt - 1);
    r.stderr_ = std::sqrt(std::max(0.0, var) / cnt);
    out.push_back(r);
  }
  return out;
}

QvReport qv_match(const Ensemble& ens, const corrector::HarmonicTable& table, double t) {
  require(t > 0 && t <= ens.cfg.horizon, "t must lie in (0, horizon]");
  check_same_field(ens, table);
  PsiCache cache(table);
  const double s0 = ens.cfg.start_time;
  const auto x0 = sites_at(ens, 0.0);
  const auto xt = sites_at(ens, t);
  std::vector<double> sq(ens.cfg.n_walkers);
  for (std::size_t w = 0; w < sq.size(); ++w) {
    const double dm = cache.phi(s0 + t, xt[w]) - cache.phi(s0, x0[w]);
    sq[w] = dm * dm;
  }
  QvReport rep;
  rep.empirical = pairwise_sum(sq) / static_cast<double>(sq.size()) / t;
  rep.formula = corrector::variance_formula(table);
  rep.ratio = rep.empirical / rep.formula;
  return rep;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "need matching samples of size >= 2");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  require(denom > 0, "x values must not be all equal");
  LineFit fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res += e * e;
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  fit.r2 = ss_tot == 0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return fit;
}

}  // namespace rcm::stats
