#pragma once
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace rcm::env {

// Nearest-neighbour bond {left, left+1} on the integer line.
struct Edge {
  std::int64_t left = 0;
};

enum class MarginalKind { point, uniform, two_point, pareto, inverse_pareto };

// Single-weight law. Field use:
//   point:          value
//   uniform:        [lo, hi], 0 < lo <= hi
//   two_point:      {1, kappa}, P(kappa) = p_kappa
//   pareto:         density alpha*x^-(alpha+1) on [1,inf); E[w^p] finite iff p < alpha
//   inverse_pareto: reciprocal of the above, values in (0,1]; E[w^-q] finite iff q < alpha
struct Marginal {
  MarginalKind kind = MarginalKind::point;
  double value = 1.0;
  double lo = 1.0, hi = 1.0;
  double kappa = 2.0;
  double p_kappa = 0.5;
  double alpha = 2.0;
};

enum class ModelKind { constant, static_iid, static_periodic, markov_switching, time_periodic };

struct EnvironmentModel {
  ModelKind kind = ModelKind::constant;
  double value = 1.0;           // constant
  Marginal marginal;            // static_iid, markov_switching
  double switch_rate = 1.0;     // markov_switching: per-edge resampling clock rate
  std::vector<double> pattern;  // static_periodic: cyclic edge values

  struct Slab {
    double duration = 1.0;
    std::vector<double> pattern;  // cyclic edge values while this slab is active
  };
  std::vector<Slab> slabs;  // time_periodic
};

inline constexpr double kStaticPeriod = std::numeric_limits<double>::infinity();

// Space- and time-periodic positive edge weights, piecewise constant and
// right-continuous in time. Immutable after construction; shifts are lazy
// offsets so shifted evaluation is bit-identical to evaluating the base
// field at the shifted arguments.
class DynamicConductanceField {
 public:
  double eval(double t, Edge e) const noexcept;
  double mu(double t, std::int64_t x) const noexcept;  // sum of incident weights
  double nu(double t, std::int64_t x) const noexcept;  // sum of reciprocal incident weights

  DynamicConductanceField shift(double s, std::int64_t z) const;

  std::int64_t space_period() const noexcept;
  double time_period() const noexcept;  // kStaticPeriod when static
  bool is_static() const noexcept;
  std::uint64_t seed() const noexcept;
  double time_offset() const noexcept { return t_off_; }
  std::int64_t space_offset() const noexcept { return x_off_; }

  // Sorted union of all change times of this (shifted) view, reduced to
  // [0, T); always starts at 0. Static fields report {0}.
  std::vector<double> time_partition() const;

  // Total integral of the weight of edge {x, x+1} over one period.
  double edge_period_mass(std::int64_t x) const noexcept;

  // Cheap identity fingerprint used to detect table/ensemble/field mismatches.
  std::uint64_t digest() const noexcept;

  std::string serialize() const;
  static DynamicConductanceField deserialize(const std::string& text);

  // Walks the piecewise-constant weight of one edge without allocation.
  class EdgeCursor {
   public:
    EdgeCursor(const DynamicConductanceField& f, std::int64_t left_site) noexcept;
    // value active at base-reduced time r in [0, T)
    void seek(double r) noexcept;
    double value() const noexcept { return (*vals_)[k_]; }
    double next_change() const noexcept;  // boundary ending the current piece, T if last
    void advance() noexcept;              // move to the next piece (no wrap)
    void rewind() noexcept { k_ = 0; }    // back to the piece starting at 0
    std::size_t piece_count() const noexcept { return bnds_->size(); }
   private:
    const std::vector<double>* bnds_;
    const std::vector<double>* vals_;
    std::size_t k_ = 0;
  };

  friend class EdgeCursor;

 private:
  struct Core;
  std::shared_ptr<const Core> core_;
  double t_off_ = 0.0;
  std::int64_t x_off_ = 0;

  friend DynamicConductanceField build_environment(const EnvironmentModel&, std::int64_t, double,
                                                   std::uint64_t);
};

// Realizes a field: draws and stores the full change-point tables so that
// evaluation is pure lookup and serialization is audit-complete.
DynamicConductanceField build_environment(const EnvironmentModel& model, std::int64_t space_period,
                                          double time_period, std::uint64_t seed);

void validate(const Marginal& m);  // throws std::invalid_argument

}  // namespace rcm::env
