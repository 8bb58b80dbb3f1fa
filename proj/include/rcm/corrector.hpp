#pragma once
#include <cstdint>
#include <memory>
#include <ostream>
#include <span>
#include <vector>

#include "rcm/env.hpp"

namespace rcm::corrector {

struct SlabBasis;

// Space-time harmonic coordinate Phi(t, x) = slope*x + psi(t, x mod L) on the
// periodic cell: d/dt Phi + L_t Phi = 0, psi periodic in space and time,
// normalized so Phi(0, 0) = 0. Tables are immutable after solving and safe
// for concurrent reads.
struct HarmonicTable {
  env::DynamicConductanceField field;
  std::vector<double> slab_times;        // ascending change points in [0, T); {0} when static
  std::vector<std::vector<double>> psi;  // psi[k][x] at t = slab_times[k]
  double slope = 1.0;
  double tol = 1e-9;

  bool is_static() const { return field.is_static(); }
  std::int64_t space_period() const {
    return psi.empty() ? 0 : static_cast<std::int64_t>(psi.front().size());
  }

  // psi(t, .) as a full site vector; t is folded into [0, T)
  std::vector<double> psi_at(double t) const;
  double phi(double t, std::int64_t x) const;
  double chi(double t, std::int64_t x) const;  // x - Phi(t, x)

  std::shared_ptr<const SlabBasis> basis;  // per-slab propagator data
};

// chi on the same grid, derived from a solved table
struct CorrectorTable {
  HarmonicTable table;
  std::vector<std::vector<double>> chi;  // chi[k][x] = -psi[k][x]

  double chi_at(double t, std::int64_t x) const { return table.chi(t, x); }
};

CorrectorTable make_corrector(HarmonicTable table);

// How per-slab propagator exponentials are evaluated. automatic picks the
// dense eigendecomposition up to L = 64 and the uniformization series above.
enum class PropagatorRoute { automatic, dense, uniformized };

// Time-constant field: Phi(x) = c * sum_{0<=j<x} 1/w(j, j+1), c = L / sum_j 1/w_j.
// L Phi = 0 exactly at every site.
HarmonicTable solve_static(const env::DynamicConductanceField& field, std::int64_t L);

// Periodic-in-time field: integrates d/dt psi = -L_t psi - g backward in time
// slab by slab (g(x) = w_t(x,x+1) - w_t(x-1,x)), closing the period with a
// monodromy solve on mean-zero vectors. Throws if the independent residual
// check of the result exceeds tol.
HarmonicTable solve_dynamic(const env::DynamicConductanceField& field, std::int64_t L, double T,
                            double tol = 1e-9,
                            PropagatorRoute route = PropagatorRoute::automatic);

// sigma^2 = (1/(T L)) int_0^T sum_x [w_t(x,x+1) dPhi_r^2 + w_t(x,x-1) dPhi_l^2] dt,
// evaluated in closed form per slab (static fields: the instantaneous value).
double variance_formula(const HarmonicTable& table);

// Independent check of d/dt Phi + L_t Phi = 0: re-integrates every slab with a
// classical RK4 stepper built only from the field and the stored grid values,
// and reports the worst mismatch normalized by (1 + max |psi|).
double pde_residual(const HarmonicTable& table);

// max_x | [chi(t,x) - chi(t,0)] - chi_shift(0,x) | where chi_shift comes from an
// independent solve on shift(field, t, 0).
double chi_split_check(const env::DynamicConductanceField& field, const CorrectorTable& table,
                       double t);

// Telescoping consistency of the periodic extension: one-step increments
// (recomputed from the conductances for static tables, read off the grid for a
// t = slab_times[0] slice otherwise) prefix-summed over [-2L, 2L] against
// chi differences. Returns the worst absolute gap.
double cocycle_check(const HarmonicTable& table);

struct SublinearityPoint {
  std::int64_t n = 0;
  double linf = 0;  // max over Q(n) = [0, n^2] x {-n..n} of |chi/n|
  double l1 = 0;    // (1,1)-average of |chi/n| over Q(n)
};

std::vector<SublinearityPoint> sublinearity_profile(const env::DynamicConductanceField& field,
                                                    std::span<const std::int64_t> n_values);

// rows: slab_time, site, phi, chi
void write_table_csv(std::ostream& os, const HarmonicTable& table);

}  // namespace rcm::corrector
