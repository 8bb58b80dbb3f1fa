#include "rcm/corrector.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "rcm/util.hpp"

namespace rcm::corrector {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Per-slab generator data. The dense route stores the eigendecomposition of
// the (symmetric) generator; the uniformization route applies the propagator
// as a Poisson-weighted power series of P = I + L/Lambda.
struct SlabBasis {
  struct Slab {
    double t0 = 0, t1 = 0;
    VectorXd w;      // w[e] = omega(e, e+1)
    VectorXd g;      // (L Pi)(x) = w[x] - w[x-1]
    double W1 = 0;   // sum of edge weights
    double Lambda = 0;  // max vertex rate; uniformization constant
    MatrixXd V;      // dense route only
    VectorXd lam;
    VectorXd b;      // V^T g
  };
  std::vector<Slab> slabs;
  double T = 0;
  bool uniformized = false;
};

namespace {

constexpr double kSeriesCut = 0.25;  // |lambda*dt| below which series forms are used
constexpr double kUniChunk = 16.0;   // max Lambda*dt per uniformization substep
constexpr int kDenseMaxL = 64;
constexpr std::int64_t kMaxSolveL = 4096;

[[noreturn]] void fail(const std::string& m) { throw std::runtime_error("corrector: " + m); }

void require(bool ok, const char* m) {
  if (!ok) throw std::invalid_argument(std::string("corrector: ") + m);
}

// (L v)(x) = w[x](v[x+1] - v[x]) + w[x-1](v[x-1] - v[x]), indices mod L
void apply_gen(const VectorXd& w, const VectorXd& v, VectorXd& out) {
  const Index L = v.size();
  for (Index x = 0; x < L; ++x) {
    const Index xp = (x + 1 == L) ? 0 : x + 1;
    const Index xm = (x == 0) ? L - 1 : x - 1;
    out[x] = w[x] * (v[xp] - v[x]) + w[xm] * (v[xm] - v[x]);
  }
}

// int_0^dt e^{lam u} du
double coef_I1(double lam, double dt) {
  if (lam == 0) return dt;
  return std::expm1(lam * dt) / lam;
}

// int_0^dt (e^{lam u} - 1)/lam du; series below the cut to dodge cancellation
double coef_G(double lam, double dt) {
  const double eta = lam * dt;
  if (std::abs(eta) < kSeriesCut) {
    double term = 0.5, acc = 0.5;  // dt^2 sum_{k>=0} eta^k/(k+2)!
    for (int k = 1; k < 60; ++k) {
      term *= eta / (k + 2);
      acc += term;
      if (std::abs(term) < 1e-20 * std::abs(acc)) break;
    }
    return dt * dt * acc;
  }
  return (coef_I1(lam, dt) - dt) / lam;
}

// lam * int_0^dt e^{2 lam u} du
double coef_J1(double lam, double dt) { return std::expm1(2 * lam * dt) / 2; }

// int_0^dt (e^{2 lam u} - e^{lam u}) du
double coef_J2(double lam, double dt) {
  const double eta = lam * dt;
  if (std::abs(eta) < kSeriesCut) {
    double acc = 0, etak = 1, fact = 1, pow2 = 1;  // dt sum_{k>=1} (2^k-1) eta^k/(k+1)!
    for (int k = 1; k < 80; ++k) {
      etak *= eta;
      pow2 *= 2;
      fact *= k + 1;
      const double term = (pow2 - 1) * etak / fact;
      acc += term;
      if (std::abs(term) < 1e-20 * (std::abs(acc) + 1e-300)) break;
    }
    return dt * acc;
  }
  return std::expm1(2 * eta) / (2 * lam) - std::expm1(eta) / lam;
}

// (1/lam) int_0^dt (e^{lam u} - 1)^2 du
double coef_J3(double lam, double dt) {
  if (lam == 0) return 0;
  const double eta = lam * dt;
  if (std::abs(eta) < kSeriesCut) {
    double acc = 0, etak = 1, fact = 2, pow2 = 2;  // dt^2 sum_{k>=2} (2^k-2) eta^{k-1}/(k+1)!
    for (int k = 2; k < 80; ++k) {
      etak *= eta;
      pow2 *= 2;
      fact *= k + 1;
      const double term = (pow2 - 2) * etak / fact;
      acc += term;
      if (std::abs(term) < 1e-20 * (std::abs(acc) + 1e-300)) break;
    }
    return dt * dt * acc;
  }
  const double i2 = std::expm1(2 * eta) / (2 * lam);
  const double i1 = std::expm1(eta) / lam;
  return (i2 - 2 * i1 + dt) / lam;
}

// y = exp(dt L) v by uniformization. Per substep a = Lambda*h <= 16; the
// series stops once the cumulative Poisson mass is within 1e-16 of 1, and for
// k >= a the weights decay at least geometrically, so the dropped operator
// mass is below ~2e-16 (P is a contraction in the max norm).
VectorXd uni_exp(const SlabBasis::Slab& s, double dt, VectorXd v) {
  if (dt <= 0) return v;
  const int nsub = std::max(1, static_cast<int>(std::ceil(s.Lambda * dt / kUniChunk)));
  const double h = dt / nsub;
  const double a = s.Lambda * h;
  VectorXd pk(v.size()), acc(v.size()), tmp(v.size());
  for (int sub = 0; sub < nsub; ++sub) {
    double coef = std::exp(-a);
    double cum = coef;
    pk = v;
    acc = coef * pk;
    for (int k = 1; k < 8000; ++k) {
      apply_gen(s.w, pk, tmp);
      pk += tmp / s.Lambda;
      coef *= a / k;
      cum += coef;
      acc += coef * pk;
      if (1 - cum < 1e-16 && k >= a) break;
    }
    v = acc;
  }
  return v;
}

// y = F(dt) v = int_0^dt exp(u L) v du, F coefficients Q_k = P(Pois(a) >= k+1).
// Composed over substeps via F(t + h) = F(t) + exp(t L) F(h). The truncated
// tail satisfies sum_{j>k} Q_j <= 2 Q_k once k >= 2a.
VectorXd uni_F(const SlabBasis::Slab& s, double dt, VectorXd v) {
  VectorXd out = VectorXd::Zero(v.size());
  if (dt <= 0) return out;
  const int nsub = std::max(1, static_cast<int>(std::ceil(s.Lambda * dt / kUniChunk)));
  const double h = dt / nsub;
  const double a = s.Lambda * h;
  VectorXd pk(v.size()), tmp(v.size()), facc(v.size());
  for (int sub = 0; sub < nsub; ++sub) {
    double pois = std::exp(-a);
    double q = 1 - pois;
    pk = v;
    facc = q * pk;
    for (int k = 1; k < 8000; ++k) {
      apply_gen(s.w, pk, tmp);
      pk += tmp / s.Lambda;
      pois *= a / k;
      q -= pois;
      if (q <= 0) break;
      facc += q * pk;
      if (q < 1e-17 && k >= 2 * a) break;
    }
    out += facc / s.Lambda;
    if (sub + 1 < nsub) v = uni_exp(s, h, std::move(v));
  }
  return out;
}

// psi at distance dt before the slab end, given psi at the slab end
VectorXd propagate_back(const SlabBasis& basis, std::size_t k, double dt, const VectorXd& psi_end) {
  const auto& s = basis.slabs[k];
  if (dt <= 0) return psi_end;
  if (!basis.uniformized) {
    VectorXd a = s.V.transpose() * psi_end;
    for (Index i = 0; i < a.size(); ++i)
      a[i] = std::exp(s.lam[i] * dt) * a[i] + coef_I1(s.lam[i], dt) * s.b[i];
    return s.V * a;
  }
  return uni_exp(s, dt, psi_end) + uni_F(s, dt, s.g);
}

std::shared_ptr<SlabBasis> build_basis(const env::DynamicConductanceField& f, std::int64_t L,
                                       double T, bool uniformized) {
  auto basis = std::make_shared<SlabBasis>();
  basis->T = T;
  basis->uniformized = uniformized;
  const auto times = f.time_partition();
  for (std::size_t k = 0; k < times.size(); ++k) {
    SlabBasis::Slab s;
    s.t0 = times[k];
    s.t1 = (k + 1 < times.size()) ? times[k + 1] : T;
    s.w.resize(L);
    for (std::int64_t e = 0; e < L; ++e) s.w[e] = f.eval(s.t0, env::Edge{e});
    s.g.resize(L);
    for (std::int64_t x = 0; x < L; ++x) s.g[x] = s.w[x] - s.w[(x + L - 1) % L];
    s.W1 = s.w.sum();
    for (std::int64_t x = 0; x < L; ++x)
      s.Lambda = std::max(s.Lambda, s.w[x] + s.w[(x + L - 1) % L]);
    if (!uniformized) {
      MatrixXd M = MatrixXd::Zero(L, L);
      for (Index x = 0; x < L; ++x) {
        const Index xp = (x + 1 == L) ? 0 : x + 1;
        const Index xm = (x == 0) ? L - 1 : x - 1;
        M(x, xp) += s.w[x];
        M(x, xm) += s.w[xm];
        M(x, x) -= s.w[x] + s.w[xm];
      }
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
      if (es.info() != Eigen::Success) fail("slab eigendecomposition failed");
      s.V = es.eigenvectors();
      s.lam = es.eigenvalues();
      s.b = s.V.transpose() * s.g;
    }
    basis->slabs.push_back(std::move(s));
  }
  return basis;
}

struct GlRule {
  std::array<double, 16> x{}, w{};
};

// 16-point Gauss-Legendre rule on [-1, 1], Newton on the Legendre recurrence
const GlRule& gl16() {
  static const GlRule rule = [] {
    GlRule r;
    const int m = 16;
    for (int i = 0; i < m / 2; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (m + 0.5));
      double dp = 0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1, p1 = x;
        for (int j = 2; j <= m; ++j) {
          const double p2 = ((2 * j - 1) * x * p1 - (j - 1) * p0) / j;
          p0 = p1;
          p1 = p2;
        }
        dp = m * (x * p1 - p0) / (x * x - 1);
        const double step = p1 / dp;
        x -= step;
        if (std::abs(step) < 1e-15) break;
      }
      const double wt = 2 / ((1 - x * x) * dp * dp);
      r.x[i] = -x;
      r.x[m - 1 - i] = x;
      r.w[i] = r.w[m - 1 - i] = wt;
    }
    return r;
  }();
  return rule;
}

Eigen::Map<const VectorXd> as_vec(const std::vector<double>& v) {
  return {v.data(), static_cast<Index>(v.size())};
}

}  // namespace

std::vector<double> HarmonicTable::psi_at(double t) const {
  if (is_static() || !basis) return psi.at(0);
  const double T = basis->T;
  const double tf = fmod_period(t, T);
  const auto it = std::upper_bound(slab_times.begin(), slab_times.end(), tf);
  const auto k = static_cast<std::size_t>(it - slab_times.begin()) - 1;
  if (tf == slab_times[k]) return psi[k];
  const double t1 = (k + 1 < slab_times.size()) ? slab_times[k + 1] : T;
  const VectorXd v = propagate_back(*basis, k, t1 - tf, as_vec(psi[(k + 1) % psi.size()]));
  return {v.data(), v.data() + v.size()};
}

double HarmonicTable::phi(double t, std::int64_t x) const {
  const auto L = space_period();
  return slope * static_cast<double>(x) + psi_at(t)[static_cast<std::size_t>(imod(x, L))];
}

double HarmonicTable::chi(double t, std::int64_t x) const {
  const auto L = space_period();
  return 0.0 - psi_at(t)[static_cast<std::size_t>(imod(x, L))];
}

CorrectorTable make_corrector(HarmonicTable table) {
  CorrectorTable ct;
  ct.chi.reserve(table.psi.size());
  for (const auto& row : table.psi) {
    std::vector<double> c(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) c[i] = 0.0 - row[i];
    ct.chi.push_back(std::move(c));
  }
  ct.table = std::move(table);
  return ct;
}

HarmonicTable solve_static(const env::DynamicConductanceField& field, std::int64_t L) {
  require(field.is_static(), "solve_static needs a time-constant field");
  require(L == field.space_period(), "space period does not match the field");
  std::vector<double> w(static_cast<std::size_t>(L));
  double denom = 0;
  for (std::int64_t e = 0; e < L; ++e) {
    w[static_cast<std::size_t>(e)] = field.eval(0, env::Edge{e});
    denom += 1 / w[static_cast<std::size_t>(e)];
  }
  const double c = static_cast<double>(L) / denom;
  std::vector<double> psi0(static_cast<std::size_t>(L));
  double prefix = 0;
  for (std::int64_t x = 0; x < L; ++x) {
    psi0[static_cast<std::size_t>(x)] = c * prefix - static_cast<double>(x);
    prefix += 1 / w[static_cast<std::size_t>(x)];
  }
  HarmonicTable tb;
  tb.field = field;
  tb.slab_times = {0.0};
  tb.psi = {std::move(psi0)};
  return tb;
}

HarmonicTable solve_dynamic(const env::DynamicConductanceField& field, std::int64_t L, double T,
                            double tol, PropagatorRoute route) {
  require(L == field.space_period(), "space period does not match the field");
  require(L <= kMaxSolveL, "space period too large for the monodromy solve");
  require(tol > 0 && tol < 1, "tol must lie in (0, 1)");
  if (field.is_static()) return solve_static(field, L);
  require(T == field.time_period(), "time period does not match the field");

  const bool uni =
      route == PropagatorRoute::uniformized || (route == PropagatorRoute::automatic && L > kDenseMaxL);
  auto basis = build_basis(field, L, T, uni);
  const std::size_t K = basis->slabs.size();

  // one-period propagation psi(0) = A psi(T) + c, accumulated as At = A^T
  // (each slab propagator is symmetric, so At <- E_k At)
  MatrixXd At = MatrixXd::Identity(L, L);
  VectorXd c = VectorXd::Zero(L);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& s = basis->slabs[k];
    const double dt = s.t1 - s.t0;
    VectorXd fk;
    if (!uni) {
      VectorXd coef(L);
      for (Index i = 0; i < L; ++i) coef[i] = coef_I1(s.lam[i], dt) * s.b[i];
      fk = s.V * coef;
    } else {
      fk = uni_F(s, dt, s.g);
    }
    c += At.transpose() * fk;
    if (!uni) {
      MatrixXd tmp = s.V.transpose() * At;
      for (Index i = 0; i < L; ++i) tmp.row(i) *= std::exp(s.lam[i] * dt);
      At = s.V * tmp;
    } else {
      for (Index j = 0; j < L; ++j) At.col(j) = uni_exp(s, dt, At.col(j));
    }
  }

  // monodromy fixed point: (I - A) psi_T = c on mean-zero vectors; the rank-one
  // J/L term pins the mean without touching that subspace
  MatrixXd B = MatrixXd::Identity(L, L) - At.transpose();
  B.array() += 1.0 / static_cast<double>(L);
  Eigen::PartialPivLU<MatrixXd> lu(B);
  const VectorXd psi_T = lu.solve(c);
  const double mres = (B * psi_T - c).norm();
  if (!(mres <= 1e-8 * (1 + psi_T.norm()))) fail("monodromy system is numerically singular");

  std::vector<VectorXd> stored(K);
  VectorXd cur = psi_T;
  for (std::size_t k = K; k-- > 0;) {
    const auto& s = basis->slabs[k];
    cur = propagate_back(*basis, k, s.t1 - s.t0, cur);
    stored[k] = cur;
  }

  HarmonicTable tb;
  tb.field = field;
  tb.tol = tol;
  tb.basis = basis;
  tb.slab_times.reserve(K);
  for (const auto& s : basis->slabs) tb.slab_times.push_back(s.t0);
  const double shift = stored[0][0];  // Phi(0, 0) = 0
  tb.psi.reserve(K);
  for (auto& v : stored) {
    std::vector<double> row(v.data(), v.data() + v.size());
    for (auto& e : row) e -= shift;
    tb.psi.push_back(std::move(row));
  }
  tb.psi[0][0] = 0.0;

  const double res = pde_residual(tb);
  if (!(res <= tol))
    fail("slab residual " + std::to_string(res) + " exceeds tolerance " + std::to_string(tol));
  return tb;
}

double variance_formula(const HarmonicTable& tb) {
  const auto L = tb.space_period();
  const auto Ld = static_cast<double>(L);
  if (tb.is_static()) {
    const auto& p = tb.psi[0];
    double acc = 0;
    for (std::int64_t e = 0; e < L; ++e) {
      const double grad =
          tb.slope + p[static_cast<std::size_t>((e + 1) % L)] - p[static_cast<std::size_t>(e)];
      acc += tb.field.eval(0, env::Edge{e}) * grad * grad;
    }
    return 2 * acc / Ld;
  }
  const auto& basis = *tb.basis;
  const std::size_t K = basis.slabs.size();
  double acc = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& s = basis.slabs[k];
    const double dt = s.t1 - s.t0;
    const VectorXd psi_end = as_vec(tb.psi[(k + 1) % K]);
    if (!basis.uniformized) {
      // int over the slab of 2 W1 - 4 g.psi - 2 psi.L psi, mode by mode
      const VectorXd a = s.V.transpose() * psi_end;
      double slab = 2 * s.W1 * dt;
      for (Index i = 0; i < a.size(); ++i) {
        const double lam = s.lam[i], ai = a[i], bi = s.b[i];
        slab += -4 * bi * (ai * coef_I1(lam, dt) + bi * coef_G(lam, dt)) -
                2 * (ai * ai * coef_J1(lam, dt) + 2 * ai * bi * coef_J2(lam, dt) +
                     bi * bi * coef_J3(lam, dt));
      }
      acc += slab;
    } else {
      // Gauss-Legendre on chunks short enough for spectral accuracy
      const auto& gl = gl16();
      const int nch = std::max(1, static_cast<int>(std::ceil(s.Lambda * dt / 4)));
      const double h = dt / nch;
      for (int ch = 0; ch < nch; ++ch) {
        const double a0 = s.t0 + ch * h;
        for (int i = 0; i < 16; ++i) {
          const double t = a0 + (gl.x[i] + 1) / 2 * h;
          const VectorXd v = propagate_back(basis, k, s.t1 - t, psi_end);
          double integrand = 0;
          for (Index e = 0; e < L; ++e) {
            const Index ep = (e + 1 == L) ? 0 : e + 1;
            const double grad = tb.slope + v[ep] - v[e];
            integrand += s.w[e] * grad * grad;
          }
          acc += gl.w[i] * h / 2 * 2 * integrand;
        }
      }
    }
  }
  return acc / (basis.T * Ld);
}

double pde_residual(const HarmonicTable& tb) {
  const auto L = tb.space_period();
  const auto& f = tb.field;
  if (tb.is_static()) {
    const auto& p = tb.psi[0];
    double worst = 0;
    for (std::int64_t x = 0; x < L; ++x) {
      const double wr = f.eval(0, env::Edge{x});
      const double wl = f.eval(0, env::Edge{x - 1});
      const double dr =
          tb.slope + p[static_cast<std::size_t>((x + 1) % L)] - p[static_cast<std::size_t>(x)];
      const double dl =
          -tb.slope + p[static_cast<std::size_t>((x + L - 1) % L)] - p[static_cast<std::size_t>(x)];
      worst = std::max(worst, std::abs(wr * dr + wl * dl));
    }
    return worst;
  }

  // re-integrate each slab with RK4 from the stored end vector; step chosen so
  // the accumulated truncation error stays ~1e-10, well under default tol
  const double T = f.time_period();
  const std::size_t K = tb.slab_times.size();
  double scale = 1;
  for (const auto& row : tb.psi)
    for (double v : row) scale = std::max(scale, 1 + std::abs(v));
  double worst = 0;
  VectorXd w(L), g(L), k1(L), k2(L), k3(L), k4(L), tmp(L);
  for (std::size_t k = 0; k < K; ++k) {
    const double t0 = tb.slab_times[k];
    const double t1 = (k + 1 < K) ? tb.slab_times[k + 1] : T;
    for (std::int64_t e = 0; e < L; ++e) w[e] = f.eval(t0, env::Edge{e});
    double rate = 0;
    for (std::int64_t x = 0; x < L; ++x) {
      g[x] = w[x] - w[(x + L - 1) % L];
      rate = std::max(rate, 2 * (w[x] + w[(x + L - 1) % L]));
    }
    const int steps = std::max(1, static_cast<int>(std::ceil((t1 - t0) * rate / 0.003)));
    const double h = (t1 - t0) / steps;
    VectorXd phi = as_vec(tb.psi[(k + 1) % K]);
    for (int s = 0; s < steps; ++s) {
      apply_gen(w, phi, k1);
      k1 += g;
      tmp = phi + (h / 2) * k1;
      apply_gen(w, tmp, k2);
      k2 += g;
      tmp = phi + (h / 2) * k2;
      apply_gen(w, tmp, k3);
      k3 += g;
      tmp = phi + h * k3;
      apply_gen(w, tmp, k4);
      k4 += g;
      phi += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    const double diff = (phi - as_vec(tb.psi[k])).cwiseAbs().maxCoeff();
    worst = std::max(worst, diff);
  }
  return worst / scale;
}

double chi_split_check(const env::DynamicConductanceField& field, const CorrectorTable& ct,
                       double t) {
  const auto& tb = ct.table;
  const auto L = tb.space_period();
  require(t >= 0 && (field.is_static() || t < field.time_period()),
          "t must lie in the field's period");
  const auto shifted = field.shift(t, 0);
  const HarmonicTable tb2 = field.is_static()
                                ? solve_static(shifted, L)
                                : solve_dynamic(shifted, L, shifted.time_period(), tb.tol);
  const auto base = tb.psi_at(t);
  const double chi0 = 0.0 - base[0];
  double worst = 0;
  for (std::int64_t x = 0; x < L; ++x) {
    const double lhs = (0.0 - base[static_cast<std::size_t>(x)]) - chi0;
    const double rhs = 0.0 - tb2.psi[0][static_cast<std::size_t>(x)];
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

double cocycle_check(const HarmonicTable& tb) {
  const auto L = tb.space_period();
  const auto& base = tb.psi[0];
  const auto chi_tab = [&](std::int64_t x) {
    return 0.0 - base[static_cast<std::size_t>(imod(x, L))];
  };
  double c = 0;
  if (tb.is_static()) {
    double denom = 0;
    for (std::int64_t e = 0; e < L; ++e) denom += 1 / tb.field.eval(0, env::Edge{e});
    c = static_cast<double>(L) / denom;
  }
  double s = 0, dmin = 0, dmax = 0;  // D(-2L) = s - chi = 0 - chi(0) = 0
  s = chi_tab(-2 * L);
  dmin = dmax = s - chi_tab(-2 * L);
  for (std::int64_t x = -2 * L; x < 2 * L; ++x) {
    const double inc = tb.is_static() ? tb.slope - c / tb.field.eval(0, env::Edge{x})
                                      : chi_tab(x + 1) - chi_tab(x);
    s += inc;
    const double d = s - chi_tab(x + 1);
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  return dmax - dmin;
}

std::vector<SublinearityPoint> sublinearity_profile(const env::DynamicConductanceField& field,
                                                    std::span<const std::int64_t> n_values) {
  for (const auto n : n_values) require(n >= 1, "box sizes must be >= 1");
  const auto L = field.space_period();
  const HarmonicTable tb = field.is_static()
                               ? solve_static(field, L)
                               : solve_dynamic(field, L, field.time_period());
  std::vector<SublinearityPoint> out;
  out.reserve(n_values.size());
  for (const auto n : n_values) {
    // multiplicity of each residue among the sites -n..n (x = r + m L)
    std::vector<double> cnt(static_cast<std::size_t>(L), 0);
    for (std::int64_t r = 0; r < L; ++r) {
      const auto hi =
          static_cast<std::int64_t>(std::floor(static_cast<double>(n - r) / static_cast<double>(L)));
      const auto lo =
          static_cast<std::int64_t>(std::ceil(static_cast<double>(-n - r) / static_cast<double>(L)));
      cnt[static_cast<std::size_t>(r)] = static_cast<double>(std::max<std::int64_t>(0, hi - lo + 1));
    }
    const double sites = 2 * static_cast<double>(n) + 1;
    const auto site_stats = [&](const std::vector<double>& psi_v) {
      double mx = 0, sum = 0;
      for (std::int64_t r = 0; r < L; ++r) {
        const double a = std::abs(psi_v[static_cast<std::size_t>(r)]);
        if (cnt[static_cast<std::size_t>(r)] > 0) mx = std::max(mx, a);
        sum += cnt[static_cast<std::size_t>(r)] * a;
      }
      return std::pair<double, double>(mx, sum / sites);
    };
    const double n2 = static_cast<double>(n) * static_cast<double>(n);
    SublinearityPoint pt;
    pt.n = n;
    if (field.is_static()) {
      const auto st = site_stats(tb.psi[0]);
      pt.linf = st.first / static_cast<double>(n);
      pt.l1 = st.second / static_cast<double>(n);
    } else {
      const double T = field.time_period();
      // scan [0, limit]: max at slab starts and subdivision midpoints, plus the
      // midpoint-rule time integral of the site average
      const auto scan = [&](double limit) {
        double mx = 0, integral = 0;
        for (std::size_t k = 0; k < tb.slab_times.size() && tb.slab_times[k] < limit; ++k) {
          const double a = tb.slab_times[k];
          const double b = std::min(limit, (k + 1 < tb.slab_times.size()) ? tb.slab_times[k + 1] : T);
          mx = std::max(mx, site_stats(tb.psi[k]).first);
          const int sub = std::max(1, static_cast<int>(std::ceil((b - a) / 0.25)));
          const double h = (b - a) / sub;
          for (int j = 0; j < sub; ++j) {
            const auto st = site_stats(tb.psi_at(a + (j + 0.5) * h));
            mx = std::max(mx, st.first);
            integral += st.second * h;
          }
        }
        mx = std::max(mx, site_stats(tb.psi_at(limit)).first);
        return std::pair<double, double>(mx, integral);
      };
      double mx, integral;
      if (n2 <= T) {
        std::tie(mx, integral) = scan(n2);
      } else {
        const auto whole = scan(T);
        const double rem = std::fmod(n2, T);
        const auto part = scan(rem);
        mx = whole.first;
        integral = std::floor(n2 / T) * whole.second + part.second;
      }
      pt.linf = mx / static_cast<double>(n);
      pt.l1 = integral / (n2 * static_cast<double>(n));
    }
    out.push_back(pt);
  }
  return out;
}

void write_table_csv(std::ostream& os, const HarmonicTable& tb) {
  os << "slab_time,site,phi,chi\n";
  const auto L = tb.space_period();
  for (std::size_t k = 0; k < tb.slab_times.size(); ++k) {
    for (std::int64_t x = 0; x < L; ++x) {
      const double psi = tb.psi[k][static_cast<std::size_t>(x)];
      os << fmt_double(tb.slab_times[k]) << ',' << x << ','
         << fmt_double(tb.slope * static_cast<double>(x) + psi) << ',' << fmt_double(0.0 - psi)
         << '\n';
    }
  }
}

}  // namespace rcm::corrector
