#ifndef LENSLAB_RIGIDITY_HPP
#define LENSLAB_RIGIDITY_HPP

// Gauge experiments on the disc: boundary-fixing diffeomorphisms, their
// pullback metrics as tabulated charts, the split of the pullback
// perturbation into a linear potential part plus a quadratic remainder, ray
// integrals of that perturbation along data geodesics, and energy
// comparisons along blended-metric families. Together these measure how far
// two gauge-equivalent metrics can be told apart from boundary data.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lenslab/common.hpp"
#include "lenslab/geodesic.hpp"
#include "lenslab/lens.hpp"
#include "lenslab/metric.hpp"
#include "lenslab/tensor.hpp"
#include "lenslab/xray.hpp"

namespace lenslab {

// Raised when a requested amplitude leaves the diffeomorphism regime: the
// Jacobian of x + eps w(x) loses positivity somewhere on the check grid.
class diffeo_error : public solver_error {
 public:
  using solver_error::solver_error;
};

// Boundary-fixing map psi(x) = x + eps w(x) of the extended chart, with
// w = 0 on the unit circle. Offsets are taken in chart coordinates, which on
// these flat charts is the exponential construction exp_x(eps w) written
// out; the generator and its Jacobian are supplied analytically so pullbacks
// carry no sampling error of their own.
struct BoundaryFixingDiffeo {
  std::function<Vec2(const Vec2&)> w;   // generator, zero on |x| = 1
  std::function<Mat2(const Vec2&)> dw;  // dw(k, i) = d w^k / d x^i
  double eps = 0.0;

  Vec2 map(const Vec2& x) const { return x + eps * w(x); }

  // J(k, i) = d psi^k / d x^i.
  Mat2 jacobian(const Vec2& x) const {
    return Mat2(Mat2::Identity() + eps * dw(x));
  }

  BoundaryFixingDiffeo with_eps(double e) const {
    BoundaryFixingDiffeo d = *this;
    d.eps = e;
    return d;
  }

  // The workhorse family w = (1 - |x|^2) a with a constant direction a.
  // Quadratic in x, so every derived quantity has a short closed form.
  static BoundaryFixingDiffeo radial_bump(const Vec2& a, double eps) {
    BoundaryFixingDiffeo d;
    d.w = [a](const Vec2& x) { return Vec2((1.0 - x.squaredNorm()) * a); };
    d.dw = [a](const Vec2& x) { return Mat2(-2.0 * a * x.transpose()); };
    d.eps = eps;
    return d;
  }
};

namespace detail {

// The generator must vanish on the boundary circle or the map would move
// lens records instead of leaving them invariant.
inline void require_boundary_fixed(const BoundaryFixingDiffeo& psi) {
  for (int k = 0; k < 64; ++k) {
    double th = 2.0 * std::acos(-1.0) * k / 64.0;
    Vec2 x(std::cos(th), std::sin(th));
    if (psi.w(x).norm() > 1e-10)
      throw std::invalid_argument(
          "diffeo: generator does not vanish on the boundary circle");
  }
}

// Smallest Jacobian determinant over a grid covering the square of
// half-width `extent`. Positivity there keeps the offset map injective: it
// is then a local diffeomorphism fixing the boundary of a simply connected
// region.
inline double min_jacobian_det(const BoundaryFixingDiffeo& psi, double extent,
                               int n = 41) {
  double best = inf();
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      Vec2 x(-extent + 2.0 * extent * i / (n - 1),
             -extent + 2.0 * extent * j / (n - 1));
      best = std::min(best, psi.jacobian(x).determinant());
    }
  return best;
}

inline void require_diffeo(const BoundaryFixingDiffeo& psi, double extent) {
  require_boundary_fixed(psi);
  double d = min_jacobian_det(psi, extent);
  if (!(d > 0.0))
    throw diffeo_error("diffeo: Jacobian determinant reaches " +
                       format_double(d) + " on the check grid; amplitude " +
                       format_double(psi.eps) +
                       " is past the injectivity bound");
}

// Signed gap between two periodic coordinates, folded into half a period.
inline double periodic_gap(double a, double b, double period) {
  return std::remainder(a - b, period);
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x,
                           const std::vector<double>& y) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    double lx = std::log(x[k]), ly = std::log(y[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double n = static_cast<double>(x.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline void require_ladder(const std::vector<double>& ladder,
                           const char* who) {
  if (ladder.size() < 4)
    throw std::invalid_argument(std::string(who) +
                                ": ladder needs at least four amplitudes");
  for (double e : ladder)
    if (!(e > 0.0))
      throw std::invalid_argument(std::string(who) +
                                  ": ladder amplitudes must be positive");
}

}  // namespace detail

// Covariant components of the pulled-back metric at one point, from the
// analytic Jacobian: (psi* g)_ij = J^k_i g_kl(psi x) J^l_j. Points past the
// chart radius use the clamped metric so the sampler stays total on the
// extended square; inside the closed disc the map stays in the disc and the
// value is exact.
inline Mat2 pullback_matrix(const MetricChart& chart,
                            const BoundaryFixingDiffeo& psi, const Vec2& x) {
  Mat2 J = psi.jacobian(x);
  return J.transpose() * chart.metric_clamped(psi.map(x)) * J;
}

// Tabulated chart of psi* g. The sampler is analytic, so the only
// approximation in the returned chart is the table interpolation itself.
inline MetricChart pullback_metric(const MetricChart& chart,
                                   const BoundaryFixingDiffeo& psi,
                                   int table_n = 257) {
  detail::require_diffeo(psi, 1.0 + chart.margin());
  return MetricChart::tabulate(
      [&chart, psi](const Vec2& x) { return pullback_matrix(chart, psi, x); },
      table_n, chart.margin());
}

// Predicted linear response of the pullback at eps = 0: twice the
// symmetrized covariant differential of the lowered generator, scaled by
// eps. With v_j = eps g_jk w^k,
//   (dv)_ij = (d_i v_j + d_j v_i) / 2 - Gamma^k_ij v_k,
// and the returned matrix is 2 dv.
inline Mat2 linear_gauge_part(const MetricChart& chart,
                              const BoundaryFixingDiffeo& psi,
                              const Vec2& x) {
  MetricDerivs d = chart.derivs(x, 1);
  std::array<Mat2, 2> gamma = MetricChart::christoffel_from(d);
  Vec2 wv = psi.w(x);
  Mat2 dwv = psi.dw(x);
  Vec2 v = d.g * wv;
  Mat2 dv;  // dv(i, j) = d_i v_j before symmetrization
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = 0.0;
      for (int k = 0; k < 2; ++k)
        s += d.dg[i](j, k) * wv[k] + d.g(j, k) * dwv(k, i);
      dv(i, j) = s;
    }
  Mat2 out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double gv = 0.0;
      for (int k = 0; k < 2; ++k) gv += gamma[k](i, j) * v[k];
      out(i, j) = psi.eps * (dv(i, j) + dv(j, i) - 2.0 * gv);
    }
  return out;
}

// --- amplitude ladders ---------------------------------------------------------

// Grid norms of the pullback perturbation f = psi* g - g against its
// predicted linear part along a ladder of amplitudes, with log-log slopes.
// The remainder f - 2 dv should shrink quadratically, the linear part
// linearly.
struct SlopeReport {
  std::vector<double> eps;
  std::vector<double> remainder;    // |f - 2 dv|_L2 per ladder point
  std::vector<double> linear_part;  // |2 dv|_L2 per ladder point
  double remainder_slope = 0.0;
  double linear_slope = 0.0;
};

inline SlopeReport linearization_split(
    const MetricChart& chart, const BoundaryFixingDiffeo& family,
    const std::vector<double>& ladder = {0.08, 0.04, 0.02, 0.01},
    int grid_n = 65) {
  detail::require_ladder(ladder, "linearization_split");
  GridPtr grid = make_tensor_grid(grid_n);
  TensorCalculus calc(chart, grid);
  SlopeReport rep;
  rep.eps = ladder;
  for (double e : ladder) {
    BoundaryFixingDiffeo psi = family.with_eps(e);
    detail::require_diffeo(psi, 1.0 + chart.margin());
    auto rem_at = [&](const Vec2& q) {
      return Mat2(pullback_matrix(chart, psi, q) - chart.metric_clamped(q) -
                  linear_gauge_part(chart, psi, q));
    };
    SymTensorField rem = sample_tensor(
        grid, [&](const Vec2& q) { return rem_at(q)(0, 0); },
        [&](const Vec2& q) { return rem_at(q)(0, 1); },
        [&](const Vec2& q) { return rem_at(q)(1, 1); });
    SymTensorField lin = sample_tensor(
        grid, [&](const Vec2& q) { return linear_gauge_part(chart, psi, q)(0, 0); },
        [&](const Vec2& q) { return linear_gauge_part(chart, psi, q)(0, 1); },
        [&](const Vec2& q) { return linear_gauge_part(chart, psi, q)(1, 1); });
    rep.remainder.push_back(calc.l2_norm(rem));
    rep.linear_part.push_back(calc.l2_norm(lin));
  }
  rep.remainder_slope = detail::loglog_slope(rep.eps, rep.remainder);
  rep.linear_slope = detail::loglog_slope(rep.eps, rep.linear_part);
  return rep;
}

// Ray integrals of the pullback perturbation along the data geodesics of g.
// The linear part integrates to zero (it is potential with v = 0 on the
// boundary), so the whole integral is carried by the quadratic remainder:
// its maximum over paths should fall with slope close to two.
struct RayRemainderReport {
  std::vector<double> eps;
  std::vector<double> max_integral;   // max over paths of |I(psi* g - g)|
  std::vector<double> max_potential;  // same with only the linear part
  double slope = 0.0;
  int path_count = 0;
};

inline RayRemainderReport xray_gauge_remainder(
    const GeodesicFlow& flow, const ForwardSystem& sys,
    const BoundaryFixingDiffeo& family,
    const std::vector<double>& ladder = {0.08, 0.04, 0.02, 0.01},
    int store_every = 2) {
  detail::require_ladder(ladder, "xray_gauge_remainder");
  const MetricChart& chart = flow.chart();
  std::vector<BoundaryFixingDiffeo> psis;
  for (double e : ladder) {
    psis.push_back(family.with_eps(e));
    detail::require_diffeo(psis.back(), 1.0 + chart.margin());
  }
  const std::size_t m = sys.entries.size();
  std::vector<std::vector<double>> full(m), pot(m);
  parallel_for(m, [&](std::size_t p) {
    auto [x0, xi0] = enter_state(chart, sys.entries[p]);
    FlowOptions o;
    o.store_every = store_every;
    RayPath path = flow.shoot(x0, xi0, o);
    full[p].resize(psis.size());
    pot[p].resize(psis.size());
    for (std::size_t t = 0; t < psis.size(); ++t) {
      const BoundaryFixingDiffeo& psi = psis[t];
      full[p][t] = xray_eval(
          [&](const Vec2& q) {
            return Mat2(pullback_matrix(chart, psi, q) -
                        chart.metric_clamped(q));
          },
          path);
      pot[p][t] =
          xray_eval([&](const Vec2& q) { return linear_gauge_part(chart, psi, q); },
                    path);
    }
  });
  RayRemainderReport rep;
  rep.eps = ladder;
  rep.path_count = static_cast<int>(m);
  rep.max_integral.assign(ladder.size(), 0.0);
  rep.max_potential.assign(ladder.size(), 0.0);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t t = 0; t < ladder.size(); ++t) {
      rep.max_integral[t] = std::max(rep.max_integral[t], std::abs(full[p][t]));
      rep.max_potential[t] = std::max(rep.max_potential[t], std::abs(pot[p][t]));
    }
  rep.slope = detail::loglog_slope(rep.eps, rep.max_integral);
  return rep;
}

// --- energy along blended metrics ----------------------------------------------

// Energy of a stored path reparametrized to [0, 1], measured in an arbitrary
// chart: E = L * integral of <xi, xi>_G over arc length. For the chart the
// unit-speed path was shot in this equals length^2 up to quadrature error.
inline double energy(const MetricChart& metric, const RayPath& path) {
  detail::require_integrable(path);
  std::vector<double> qw = path_quadrature(path.samples);
  double acc = 0.0;
  for (std::size_t k = 0; k < path.samples.size(); ++k) {
    const RaySample& smp = path.samples[k];
    acc += qw[k] * metric.inner(smp.x, smp.xi, smp.xi);
  }
  return path.length * acc;
}

// Tabulated chart of the straight-line blend g + tau (psi* g - g), sampled
// from the analytic pullback.
inline MetricChart blend_metric(const MetricChart& chart,
                                const BoundaryFixingDiffeo& psi, double tau,
                                int table_n = 257) {
  return MetricChart::tabulate(
      [&chart, psi, tau](const Vec2& x) {
        Mat2 g = chart.metric_clamped(x);
        return Mat2(g + tau * (pullback_matrix(chart, psi, x) - g));
      },
      table_n, chart.margin());
}

// Taylor comparison of the blended-family energies. For each tau on a
// uniform grid the blend chart is tabulated and a geodesic is aimed from the
// entry point of the base ray to the base ray's exit point, so the family
// keeps fixed endpoints; E(tau) is the quadrature energy of that geodesic.
// The first-variation value E'(0) comes independently from the ray integral
// of the perturbation along the base geodesic. The report compares
//   lhs = E(1) - E(0) - E'(0)   against   rhs = integral of (1 - tau) E''
// with E'' estimated by second differences in tau. A shared-entry shot in
// the full pullback chart supplies the endpoint identity E(1) = E(0) on the
// side: lens data of gauge-equivalent metrics coincide, so the same entry
// reaches the same exit.
struct EnergyTaylorReport {
  std::vector<double> tau;
  std::vector<double> e;        // aimed-family energies
  double length0 = 0.0;         // base geodesic length in g
  double e_prime0 = 0.0;        // L * I(psi* g - g) along the base ray
  double lhs = 0.0;
  double rhs = 0.0;
  double endpoint_gap = 0.0;    // shared-entry E(1) minus family E(0)
  double exit_mismatch = 0.0;   // exit arc-length gap of the shared-entry shot
};

struct EnergyTaylorOptions {
  int tau_count = 5;       // odd, >= 3; uniform grid on [0, 1]
  int table_n = 257;
  int store_every = 2;
  double aim_tol = 1e-10;  // secant tolerance on the exit arc length
  int aim_max_iter = 60;
  FlowOptions flow;
};

inline EnergyTaylorReport energy_taylor(const MetricChart& chart,
                                        const BoundaryFixingDiffeo& psi,
                                        const BallPoint& bp,
                                        const EnergyTaylorOptions& opt = {}) {
  if (opt.tau_count < 3 || opt.tau_count % 2 == 0)
    throw std::invalid_argument(
        "energy_taylor: tau_count must be odd and at least three");
  detail::require_diffeo(psi, 1.0 + chart.margin());

  FlowOptions fo = opt.flow;
  fo.stop_at_boundary = true;
  fo.store_every = opt.store_every;

  // Base geodesic of g and its exit target.
  GeodesicFlow base_flow(chart);
  auto [x0, xi0] = enter_state(chart, bp);
  RayPath base = base_flow.shoot(x0, xi0, fo);
  if (base.status != RayStatus::exited)
    throw solver_error("energy_taylor: base ray did not exit");
  double s_target = exit_ballpoint(chart, base.end.x, base.end.xi).s;

  EnergyTaylorReport rep;
  rep.length0 = base.length;
  rep.e_prime0 =
      base.length *
      xray_eval(
          [&](const Vec2& q) {
            return Mat2(pullback_matrix(chart, psi, q) -
                        chart.metric_clamped(q));
          },
          base);

  // Aim a geodesic of the blend chart from the same entry point to the same
  // exit arc length; secant iteration on the entry direction.
  auto aimed_energy = [&](const MetricChart& blend) {
    GeodesicFlow flow(blend);
    double period = blend.boundary_length();
    auto resid = [&](double mu) {
      auto [x, xi] = enter_state(blend, BallPoint{bp.s, mu});
      RayPath p = flow.shoot(x, xi, fo);
      if (p.status != RayStatus::exited)
        throw solver_error("energy_taylor: family ray did not exit");
      double r = detail::periodic_gap(
          exit_ballpoint(blend, p.end.x, p.end.xi).s, s_target, period);
      return std::pair<double, RayPath>(r, std::move(p));
    };
    double mu0 = bp.mu;
    auto [r0, p0] = resid(mu0);
    if (std::abs(r0) <= opt.aim_tol) return energy(blend, p0);
    double mu1 = std::clamp(mu0 + 1e-4, -0.999, 0.999);
    auto [r1, p1] = resid(mu1);
    for (int it = 0; it < opt.aim_max_iter; ++it) {
      if (std::abs(r1) <= opt.aim_tol) return energy(blend, p1);
      double denom = r1 - r0;
      if (denom == 0.0) break;
      double mu2 = std::clamp(mu1 - r1 * (mu1 - mu0) / denom, -0.999, 0.999);
      mu0 = mu1;
      r0 = r1;
      auto [r2, p2] = resid(mu2);
      mu1 = mu2;
      r1 = r2;
      p1 = std::move(p2);
    }
    throw solver_error("energy_taylor: exit aim did not converge");
  };

  rep.tau.resize(opt.tau_count);
  rep.e.resize(opt.tau_count);
  for (int k = 0; k < opt.tau_count; ++k) {
    rep.tau[k] = static_cast<double>(k) / (opt.tau_count - 1);
    MetricChart blend = blend_metric(chart, psi, rep.tau[k], opt.table_n);
    rep.e[k] = aimed_energy(blend);
  }

  // Shared-entry shot in the full pullback chart for the endpoint identity.
  {
    MetricChart ghat = blend_metric(chart, psi, 1.0, opt.table_n);
    GeodesicFlow flow(ghat);
    auto [x, xi] = enter_state(ghat, bp);
    RayPath p = flow.shoot(x, xi, fo);
    if (p.status != RayStatus::exited)
      throw solver_error("energy_taylor: shared-entry ray did not exit");
    rep.exit_mismatch = std::abs(detail::periodic_gap(
        exit_ballpoint(ghat, p.end.x, p.end.xi).s, s_target,
        ghat.boundary_length()));
    rep.endpoint_gap = energy(ghat, p) - rep.e.front();
  }

  // Second differences in tau; one-sided copies at the ends. Simpson weights
  // close the (1 - tau) E'' integral on the same nodes.
  int kk = opt.tau_count;
  double dtau = 1.0 / (kk - 1);
  std::vector<double> curv(kk);
  for (int k = 1; k + 1 < kk; ++k)
    curv[k] = (rep.e[k - 1] - 2.0 * rep.e[k] + rep.e[k + 1]) / (dtau * dtau);
  curv[0] = curv[1];
  curv[kk - 1] = curv[kk - 2];
  double rhs = 0.0;
  for (int k = 0; k < kk; ++k) {
    double wgt = (k == 0 || k == kk - 1) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    rhs += wgt * (1.0 - rep.tau[k]) * curv[k];
  }
  rep.rhs = rhs * dtau / 3.0;
  rep.lhs = rep.e.back() - rep.e.front() - rep.e_prime0;
  return rep;
}

// --- lens invariance -----------------------------------------------------------

// Record-wise deviation between the lens datasets of two charts over the
// same grid (and jitter), the direct measurement of gauge invariance. The s
// gap is periodic in the boundary length.
struct LensGaugeReport {
  double max_s = 0.0;
  double max_mu = 0.0;
  double max_length = 0.0;
  int compared = 0;
  int status_mismatch = 0;
};

inline LensGaugeReport lens_gauge_deviation(const GeodesicFlow& flow_a,
                                            const GeodesicFlow& flow_b,
                                            const LensGrid& grid,
                                            const FlowOptions& opt = {},
                                            const JitterOptions& jit = {}) {
  LensDataset da = generate_lens_data(flow_a, grid, opt, jit);
  LensDataset db = generate_lens_data(flow_b, grid, opt, jit);
  double period = flow_a.chart().boundary_length();
  LensGaugeReport rep;
  for (std::size_t k = 0; k < da.records.size(); ++k) {
    const LensRecord& ra = da.records[k];
    const LensRecord& rb = db.records[k];
    if (ra.status != rb.status) {
      ++rep.status_mismatch;
      continue;
    }
    if (ra.status != RayStatus::exited) continue;
    rep.max_s = std::max(
        rep.max_s, std::abs(detail::periodic_gap(ra.out.s, rb.out.s, period)));
    rep.max_mu = std::max(rep.max_mu, std::abs(ra.out.mu - rb.out.mu));
    rep.max_length = std::max(rep.max_length, std::abs(ra.length - rb.length));
    ++rep.compared;
  }
  return rep;
}

}  // namespace lenslab

#endif  // LENSLAB_RIGIDITY_HPP
