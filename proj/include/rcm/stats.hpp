#pragma once
#include <cstdint>
#include <span>
#include <vector>

#include "rcm/corrector.hpp"
#include "rcm/env.hpp"
#include "rcm/walk.hpp"

namespace rcm::stats {

struct EnsembleConfig {
  std::size_t n_walkers = 0;
  double horizon = 0;
  std::uint64_t seed = 0;
  double start_time = 0;
  std::int64_t start_site = 0;
  unsigned threads = 1;
  std::uint64_t max_jumps = 1'000'000'000;
  bool keep_paths = false;
};

// Independent walkers in one quenched field, observed at the requested mark
// offsets (the horizon is always appended). marks is walker-major; results are
// a pure function of (field, cfg, offsets), whatever the thread count.
struct Ensemble {
  env::DynamicConductanceField field;
  EnsembleConfig cfg;
  std::vector<double> mark_offsets;
  std::vector<std::int64_t> marks;
  std::vector<walk::PathSample> paths;  // populated iff cfg.keep_paths

  std::int64_t mark(std::size_t walker, std::size_t i) const {
    return marks[walker * mark_offsets.size() + i];
  }
};

Ensemble run_ensemble(const env::DynamicConductanceField& field, const EnsembleConfig& cfg,
                      std::span<const double> mark_offsets = {});

struct Estimate {
  double value = 0;
  double stderr_ = 0;
};

// Var(X at elapsed time t)/t with a delete-one jackknife standard error. t must
// be a recorded mark offset unless paths were kept. Needs >= 1000 walkers.
Estimate estimate_sigma2(const Ensemble& ens, double t);

double gaussian_cdf(double x, double sigma2);

struct KsResult {
  double d = 0;
  double threshold = 0;
  bool pass = false;
};

// One-sample Kolmogorov-Smirnov distance against N(0, sigma2) with the
// asymptotic 95% threshold 1.36/sqrt(m) (calibrated for m >= 100).
KsResult ks_gaussian(std::span<const double> sample, double sigma2);

struct LagResidual {
  double lag = 0;
  double mean = 0;
  double stderr_ = 0;
  std::size_t count = 0;
};

// Mean martingale increment Phi(t+h, X_{t+h}) - Phi(t, X_t) for each lag h,
// pooled over window starts start_time + grid. Reads recorded marks, falling
// back to full paths when a window edge was not marked. Needs a table
// solved on the very same field.
std::vector<LagResidual> martingale_residual(const Ensemble& ens,
                                             const corrector::HarmonicTable& table,
                                             std::span<const double> grid,
                                             std::span<const double> lags);

struct QvReport {
  double empirical = 0;
  double formula = 0;
  double ratio = 0;
};

// mean of (M_t - M_0)^2 / t against the cell-problem variance
QvReport qv_match(const Ensemble& ens, const corrector::HarmonicTable& table, double t);

struct LineFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace rcm::stats
