#include "rcm/norms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rcm/util.hpp"

namespace rcm::norms {

namespace {

void require(bool ok, const char* m) {
  if (!ok) throw std::invalid_argument(std::string("norms: ") + m);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// normalized p-norm of u(t, .) over the site block
double space_norm(const SpaceTimeFn& u, double t, const SpaceTimeBox& box, const Exponent& p) {
  if (p.is_inf()) {
    double mx = 0;
    for (std::int64_t x = box.site_lo; x <= box.site_hi; ++x)
      mx = std::max(mx, std::abs(u.eval(t, x)));
    return mx;
  }
  const double pe = p.value();
  double acc = 0;
  for (std::int64_t x = box.site_lo; x <= box.site_hi; ++x)
    acc += std::pow(std::abs(u.eval(t, x)), pe);
  return std::pow(acc / static_cast<double>(box.site_count()), 1 / pe);
}

// time pieces of the box interval: given breaks they are the slabs (further
// split to length <= 1), otherwise a uniform composite-midpoint partition
std::vector<std::pair<double, double>> time_pieces(const SpaceTimeBox& box,
                                                   const std::vector<double>& breaks) {
  std::vector<double> cuts{box.t0};
  for (double b : breaks)
    if (b > box.t0 && b < box.t1) cuts.push_back(b);
  cuts.push_back(box.t1);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], b = cuts[i + 1];
    const int sub = std::max(1, static_cast<int>(std::ceil(b - a)));
    const double h = (b - a) / sub;
    for (int j = 0; j < sub; ++j) out.emplace_back(a + j * h, a + (j + 1) * h);
  }
  return out;
}

// (1/|I|) int_I s(t)^q dt routed through the same piece list as the caller
double time_norm(const std::vector<std::pair<double, double>>& pieces, double length,
                 const Exponent& q, const std::function<double(double)>& s) {
  if (q.is_inf()) {
    double mx = 0;
    for (const auto& [a, b] : pieces) mx = std::max(mx, s((a + b) / 2));
    return mx;
  }
  const double qe = q.value();
  double acc = 0;
  for (const auto& [a, b] : pieces) acc += (b - a) * std::pow(s((a + b) / 2), qe);
  return std::pow(acc / length, 1 / qe);
}

Exponent conjugate(const Exponent& p) {
  if (p.is_inf()) return Exponent(1.0);
  if (p.value() == 1.0) return Exponent::infinity();
  return Exponent(p.value() / (p.value() - 1));
}

Exponent scaled(const Exponent& p, double factor) {
  if (p.is_inf()) return p;
  return Exponent(p.value() * factor);
}

// q'/(q'+1), the time exponent on the Sobolev left side
Exponent sobolev_time_exponent(const Exponent& q_prime) {
  if (q_prime.is_inf()) return Exponent(1.0);
  return Exponent(q_prime.value() / (q_prime.value() + 1));
}

std::vector<double> merged_breaks(const env::DynamicConductanceField& field,
                                  const SpaceTimeFn& u, const SpaceTimeBox& box) {
  auto breaks = field_time_breaks(field, box.t0, box.t1);
  breaks.insert(breaks.end(), u.time_breaks.begin(), u.time_breaks.end());
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  return breaks;
}

void validate_box(const SpaceTimeBox& box) {
  require(box.t1 > box.t0, "box needs a nondegenerate time interval");
  require(box.site_hi >= box.site_lo, "box needs at least one site");
}

}  // namespace

Exponent::Exponent(double v) : v_(v) {
  require(std::isfinite(v) && v > 0, "exponent must be positive and finite (use infinity())");
}

double Exponent::value() const {
  require(!inf_, "infinite exponent has no finite value");
  return v_;
}

SpaceTimeBox box_Q(std::int64_t n) {
  require(n >= 1, "box scale must be >= 1");
  return {0.0, static_cast<double>(n) * static_cast<double>(n), -n, n};
}

std::vector<double> field_time_breaks(const env::DynamicConductanceField& field, double a,
                                      double b) {
  std::vector<double> out;
  if (field.is_static()) return out;
  const double T = field.time_period();
  const auto part = field.time_partition();
  for (double base = std::floor(a / T) * T; base < b; base += T)
    for (double t : part) {
      const double c = base + t;
      if (c > a && c < b) out.push_back(c);
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double st_norm(const SpaceTimeFn& u, const NormSpec& spec, const SpaceTimeBox& box) {
  validate_box(box);
  const auto pieces = time_pieces(box, u.time_breaks);
  return time_norm(pieces, box.length(), spec.q,
                   [&](double t) { return space_norm(u, t, box, spec.p); });
}

double dirichlet_energy(const env::DynamicConductanceField& field, double t,
                        const std::function<double(std::int64_t)>& f, std::int64_t site_lo,
                        std::int64_t site_hi, bool squared) {
  require(site_hi >= site_lo, "site block is empty");
  const auto at = [&](std::int64_t x) { return (x < site_lo || x > site_hi) ? 0.0 : f(x); };
  double acc = 0;
  for (std::int64_t e = site_lo - 1; e <= site_hi; ++e) {
    const double grad = at(e + 1) - at(e);
    acc += field.eval(t, env::Edge{e}) * (squared ? grad * grad : std::abs(grad));
  }
  return acc;
}

SobolevReport sobolev_check(const env::DynamicConductanceField& field, const SpaceTimeFn& u,
                            const SpaceTimeBox& box, Exponent q_prime, bool strict) {
  validate_box(box);
  const auto breaks = merged_breaks(field, u, box);
  const auto pieces = time_pieces(box, breaks);
  const double cells = static_cast<double>(box.site_count());

  SpaceTimeFn u2{[&](double t, std::int64_t x) {
                   const double v = u.eval(t, x);
                   return v * v;
                 },
                 breaks};
  SobolevReport rep;
  rep.lhs = st_norm(u2, {Exponent::infinity(), sobolev_time_exponent(q_prime)}, box);

  const SpaceTimeFn nu{[&](double t, std::int64_t x) { return field.nu(t, x); }, breaks};
  const double nu_norm = st_norm(nu, {Exponent(1.0), q_prime}, box);

  double energy = 0;
  for (const auto& [a, b] : pieces) {
    const double mid = (a + b) / 2;
    energy += (b - a) * dirichlet_energy(
                            field, mid, [&](std::int64_t x) { return u.eval(mid, x); },
                            box.site_lo, box.site_hi, !strict);
  }
  const double energy_avg = energy / box.length() / cells;

  rep.rhs = cells * cells * nu_norm * energy_avg;
  rep.holds = rep.lhs <= rep.rhs * (1 + 1e-12);
  return rep;
}

bool condition_1d(Exponent p, Exponent q) {
  if (p.is_inf()) return true;  // both terms vanish
  if (p.value() <= 1) return false;
  const double a = 1 / (p.value() - 1);
  const double b = q.is_inf() ? 0 : a / q.value();
  return a + b < 1;
}

bool condition_d(Exponent p, Exponent q, int d) {
  require(d >= 2, "condition_d needs d >= 2 (use condition_1d)");
  const double qq = q.is_inf() ? 0 : 1 / q.value();
  if (p.is_inf()) return qq < 2.0 / d;
  if (p.value() <= 1) return false;
  const double a = 1 / (p.value() - 1);
  const double b = q.is_inf() ? 0 : a / q.value();
  return a + b + qq < 2.0 / d;
}

bool condition_int(Exponent p, Exponent p_prime, Exponent q_prime, std::optional<Exponent> q,
                   int d) {
  require(d >= 1, "dimension must be >= 1");
  const double f1 = p.is_inf() ? 0 : 1 / p.value();
  // bounded conductances (p = inf) satisfy every space requirement, so the
  // degenerate p' = 1 factor never gets to blow the product up
  double lhs;
  if (f1 == 0) {
    lhs = 0;
  } else {
    const double f2 = p_prime.is_inf()
                          ? 1
                          : (p_prime.value() == 1 ? kInf
                                                  : p_prime.value() / (p_prime.value() - 1));
    const double f3 = q_prime.is_inf() ? 1 : (q_prime.value() + 1) / q_prime.value();
    lhs = f1 * f2 * f3;
  }
  if (d == 1) return lhs < 1;
  require(q.has_value(), "condition_int needs the walk exponent q when d >= 2");
  const double qq = q->is_inf() ? 0 : 1 / q->value();
  return lhs + qq < 2.0 / d;
}

EnergyReport energy_quantities(const env::DynamicConductanceField& field, const SpaceTimeFn& u,
                               double sigma, double alpha, Exponent p, Exponent p_prime,
                               Exponent q_prime, std::int64_t n) {
  require(sigma > 0 && sigma < 1, "sigma must lie in (0, 1)");
  require(alpha >= 1, "alpha must be >= 1");
  require(n >= 2, "box scale must be >= 2");
  const auto nd = static_cast<double>(n);
  const std::int64_t m = static_cast<std::int64_t>(std::floor(sigma * nd));
  const SpaceTimeBox inner{0.0, sigma * nd * nd, -m, m};
  const SpaceTimeBox outer = box_Q(n);

  const SpaceTimeFn u2a{[&, alpha](double t, std::int64_t x) {
                          return std::pow(std::abs(u.eval(t, x)), 2 * alpha);
                        },
                        u.time_breaks};
  EnergyReport rep;
  rep.lhs_avg = st_norm(u2a, {Exponent(1.0), Exponent::infinity()}, inner);

  // cut-off: 1 on B(m), 0 outside B(n), linear ramp with slope 1/(n - m)
  const auto eta = [=](std::int64_t x) {
    const auto ax = static_cast<double>(x < 0 ? -x : x);
    if (ax <= static_cast<double>(m)) return 1.0;
    if (ax >= nd) return 0.0;
    return (nd - ax) / (nd - static_cast<double>(m));
  };
  const auto breaks = merged_breaks(field, u, inner);
  double energy = 0;
  for (const auto& [a, b] : time_pieces(inner, breaks)) {
    const double mid = (a + b) / 2;
    energy += (b - a) * dirichlet_energy(
                            field, mid,
                            [&](std::int64_t x) {
                              return eta(x) * std::pow(std::abs(u.eval(mid, x)), alpha);
                            },
                            outer.site_lo, outer.site_hi, true);
  }
  rep.lhs_energy = energy / static_cast<double>(outer.site_count());

  const SpaceTimeFn mu{[&](double t, std::int64_t x) { return field.mu(t, x); },
                       field_time_breaks(field, outer.t0, outer.t1)};
  const double mu_norm = st_norm(mu, {p, p_prime}, outer);
  const Exponent ps = conjugate(p), pps = conjugate(p_prime);
  const double u_norm = st_norm(u2a, {ps, pps}, outer);
  const double gamma = u_norm >= 1 ? 1 : 1 - 1 / alpha;
  rep.rhs = u_norm == 0 ? 0 : mu_norm * std::pow(u_norm, gamma / (2 * alpha));
  rep.implied_constant = rep.rhs > 0 ? (rep.lhs_avg + rep.lhs_energy) / rep.rhs : 0;

  rep.interp_lhs = st_norm(u2a, {scaled(ps, alpha), scaled(pps, alpha)}, inner);
  rep.interp_rhs =
      rep.lhs_avg + st_norm(u2a, {Exponent::infinity(), sobolev_time_exponent(q_prime)}, inner);

  const double inv_ps = ps.is_inf() ? 0 : 1 / ps.value();
  const double qfac = q_prime.is_inf() ? 1 : q_prime.value() / (q_prime.value() + 1);
  rep.alpha_interp = inv_ps + qfac * inv_ps;
  return rep;
}

}  // namespace rcm::norms
