#pragma once
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "rcm/env.hpp"

namespace rcm::norms {

// Exponent in (0, inf]. Infinity is a dedicated marker so max semantics never
// go through a large-float pow.
class Exponent {
 public:
  Exponent(double v);  // throws std::invalid_argument unless 0 < v < inf
  static Exponent infinity() noexcept {
    Exponent e;
    e.inf_ = true;
    return e;
  }
  bool is_inf() const noexcept { return inf_; }
  double value() const;  // finite exponents only

  friend bool operator==(const Exponent& a, const Exponent& b) noexcept {
    return a.inf_ == b.inf_ && (a.inf_ || a.v_ == b.v_);
  }

 private:
  Exponent() = default;
  double v_ = 1.0;
  bool inf_ = false;
};

struct NormSpec {
  Exponent p{1.0};  // space exponent
  Exponent q{1.0};  // time exponent
};

// Compact time interval times a contiguous block of sites (inclusive bounds).
struct SpaceTimeBox {
  double t0 = 0, t1 = 1;
  std::int64_t site_lo = 0, site_hi = 0;

  double length() const noexcept { return t1 - t0; }
  std::int64_t site_count() const noexcept { return site_hi - site_lo + 1; }
};

// Q(n) = [0, n^2] x {-n, ..., n}
SpaceTimeBox box_Q(std::int64_t n);

// Space-time function sampled on box grids. If time_breaks is nonempty the
// function is piecewise constant in t between consecutive breaks and the time
// integrals are exact; otherwise they fall back to composite midpoint with
// step <= 1. Pieces longer than 1 are subdivided either way.
struct SpaceTimeFn {
  std::function<double(double t, std::int64_t x)> eval;
  std::vector<double> time_breaks;
};

// field change times replicated over [a, b]; empty for static fields
std::vector<double> field_time_breaks(const env::DynamicConductanceField& field, double a,
                                      double b);

// ((1/|I|) int_I ((1/|B|) sum_B |u|^p)^{q/p} dt)^{1/q}, inf exponents as maxima
double st_norm(const SpaceTimeFn& u, const NormSpec& spec, const SpaceTimeBox& box);

// sum over edges touching [site_lo, site_hi] of w_t(e) (grad f)^2, where f is
// read as 0 outside the site block. squared = false gives the absolute-value
// reading |grad f| instead of the square.
double dirichlet_energy(const env::DynamicConductanceField& field, double t,
                        const std::function<double(std::int64_t)>& f, std::int64_t site_lo,
                        std::int64_t site_hi, bool squared = true);

struct SobolevReport {
  double lhs = 0;  // ||u^2||_{inf, q'/(q'+1), Q}
  double rhs = 0;  // |B|^2 ||nu||_{1,q',Q} (1/|I|) int_I E_t(u_t)/|B| dt
  bool holds = false;
};

// u(t, .) must be supported in box.site range. strict = true evaluates the
// Dirichlet term with unsquared gradients.
SobolevReport sobolev_check(const env::DynamicConductanceField& field, const SpaceTimeFn& u,
                            const SpaceTimeBox& box, Exponent q_prime, bool strict = false);

// 1/(p-1) + 1/((p-1) q) < 1; p <= 1 is false by convention
bool condition_1d(Exponent p, Exponent q);

// 1/(p-1) + 1/((p-1) q) + 1/q < 2/d for d >= 2
bool condition_d(Exponent p, Exponent q, int d);

// split-integrability variant: (1/p)(p'/(p'-1))((q'+1)/q') < 1 for d = 1, with
// an extra + 1/q < 2/d for d >= 2 (q required there, unused otherwise)
bool condition_int(Exponent p, Exponent p_prime, Exponent q_prime, std::optional<Exponent> q,
                   int d);

// Both sides of the localized energy estimate and of the interpolation
// inequality for u on Q(n), with the cut-off eta = 1 on B(floor(sigma n)),
// supported in B(n), linear in between. Constants are reported, not asserted.
struct EnergyReport {
  double lhs_avg = 0;       // |||u|^{2a}||_{1, inf, Q(sigma n)}
  double lhs_energy = 0;    // int_{I(sigma n)} E_t(eta |u_t|^a) / |B(n)| dt
  double rhs = 0;           // ||mu||_{p, p', Q(n)} |||u|^{2a}||_{p*, p*', Q(n)}^{g/(2a)}
  double implied_constant = 0;  // (lhs_avg + lhs_energy) / rhs, 0 when rhs = 0
  double interp_lhs = 0;    // |||u|^{2a}||_{a p*, a p*', Q(sigma n)}
  double interp_rhs = 0;    // lhs_avg + |||u|^{2a}||_{inf, q'/(q'+1), Q(sigma n)}
  double alpha_interp = 0;  // 1/p* + q'/(p* (q'+1)), the exponent the interpolation step wants
};

EnergyReport energy_quantities(const env::DynamicConductanceField& field, const SpaceTimeFn& u,
                               double sigma, double alpha, Exponent p, Exponent p_prime,
                               Exponent q_prime, std::int64_t n);

}  // namespace rcm::norms
