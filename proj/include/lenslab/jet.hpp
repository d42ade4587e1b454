#ifndef LENSLAB_JET_HPP
#define LENSLAB_JET_HPP

#include "lenslab/lens.hpp"

// Recovery of the boundary 1-jet of the metric from travel times alone.
//
// Coordinates: x^1 is the Euclidean boundary angle theta, transported into a
// collar along inward normal geodesics, and x^n is the geodesic distance to
// the boundary. In these coordinates g_nn = 1 and g_1n = 0, so the metric near
// the boundary is determined by g_11(theta, x^n); the recovery targets
// g_11(theta, 0) and its first normal derivative.
//
// Scheme: tilt the boundary tangent at the anchor inward by a small parameter
// eps. The resulting short chord exits at a nearby source point y_eps, and the
// travel times tau from y_eps back to boundary points around the anchor form a
// patch tau(theta). The eikonal equation g^11 tau_theta^2 + tau_n^2 = 1 then
// gives, at the anchor:
//
//   order 0:  tau_theta^2 -> g_11 as eps -> 0;
//   order 1:  differentiating the eikonal in x^n,
//               (d_n g^11) tau_theta^2 = -(M + D),
//             with M = 2 g^11 tau_theta tau_{theta n} (measurable from the
//             patch) and D = 2 tau_n tau_{nn} (not measurable). On a strictly
//             convex boundary the source approaches the anchor as eps -> 0 and
//             the two terms converge to a common limit, so
//               d_n g^11 = lim -2 M / tau_theta^2,
//             and d_n g_11 = -(g_11)^2 d_n g^11. On the flat disc every
//             quantity in this chain is exact at every eps, which pins the
//             factor of two.
//
// Everything below consumes only scattering/length records, never interior
// values of the metric.

namespace lenslab {

struct JetOptions {
  std::vector<double> eps_ladder{0.08, 0.04, 0.02, 0.01};
  int patch_points = 21;      // travel-time samples per patch
  double window_lo = -0.6;    // patch window around the anchor, in units of
  double window_hi = 0.4;     //   the source offset beta
  int fit_degree = 3;         // tau(theta) fit degree
  double anchor_offset = 0.06;  // angle offset of the auxiliary g_11 anchors
  FlowOptions flow{};
};

struct PatchPoint {
  double u = 0.0;       // exit angle minus anchor angle
  double tau = 0.0;     // travel time from the source
  double s = 0.0;       // exit arc-length position
  double mu_out = 0.0;  // tangential component of the outgoing direction
};

// Travel times from one off-anchor source to boundary points near the anchor.
struct TravelTimePatch {
  double theta0 = 0.0;
  double eps = 0.0;
  double beta = 0.0;     // angular offset of the source from the anchor
  double theta_y = 0.0;  // source angle
  double s_y = 0.0;      // source arc-length position
  std::vector<PatchPoint> pts;  // sorted by u
};

struct JetDiagnostics {
  std::vector<double> eps;
  std::vector<double> g11_eps;       // order-0 value per rung
  std::vector<double> dn_ginv_eps;   // d_n g^11 estimate per rung
};

struct BoundaryJet {
  double theta0 = 0.0;
  double g11 = 0.0;
  double dn_g11 = 0.0;
  JetDiagnostics diag;
};

class JetRecovery {
public:
  explicit JetRecovery(GeodesicFlow flow, JetOptions opt = {})
      : flow_(std::move(flow)), opt_(std::move(opt)) {}

  const JetOptions& options() const { return opt_; }

  // Travel-time patch for one anchor and one tilt parameter.
  TravelTimePatch build_patch(double theta0, double eps) const {
    const MetricChart& chart = flow_.chart();
    TravelTimePatch patch;
    patch.theta0 = theta0;
    patch.eps = eps;

    double s0 = chart.arclength_from_theta(theta0);
    double mu_eps = 1.0 / std::sqrt(1.0 + eps * eps);
    LensRecord probe = scatter(flow_, {s0, mu_eps}, opt_.flow);
    if (probe.status != RayStatus::exited)
      throw solver_error("jet patch: tilted probe did not exit");
    patch.s_y = probe.out.s;
    patch.theta_y = chart.theta_from_arclength(probe.out.s);
    patch.beta = periodic_diff(patch.theta_y, theta0, 2.0 * kPi);
    if (!(patch.beta > 1e-9))
      throw solver_error("jet patch: source collapsed onto the anchor");
    if (patch.beta > 1.0)
      throw solver_error(
          "jet patch: probe exit did not localize near the anchor; "
          "the boundary is not strictly convex there");

    double mu_rev = std::clamp(-probe.out.mu, -1.0 + 1e-12, -1e-12);

    auto eval = [&](double mu) {
      mu = std::clamp(mu, -1.0 + 1e-12, -1e-3);
      LensRecord r = scatter(flow_, {patch.s_y, mu}, opt_.flow);
      if (r.status != RayStatus::exited)
        throw solver_error("jet patch: sweep ray did not exit");
      PatchPoint p;
      p.u = periodic_diff(chart.theta_from_arclength(r.out.s), theta0,
                          2.0 * kPi);
      p.tau = r.length;
      p.s = r.out.s;
      p.mu_out = r.out.mu;
      return p;
    };

    // The flat-disc relation mu = -cos((beta - u) / 2) seeds the secant
    // solves for the window edges; curved charts only perturb it.
    auto mu_guess = [&](double u) { return -std::cos(0.5 * (patch.beta - u)); };
    auto solve_edge = [&](double target_u) {
      double a = mu_rev;
      PatchPoint pa = eval(a);
      double b = mu_guess(target_u);
      if (std::abs(b - a) < 1e-15) b = a + (target_u > 0 ? -1e-9 : 1e-9);
      PatchPoint pb = eval(b);
      for (int it = 0; it < 30; ++it) {
        if (std::abs(pb.u - target_u) < 0.02 * patch.beta) break;
        double denom = pb.u - pa.u;
        if (std::abs(denom) < 1e-15)
          throw solver_error(
              "jet patch: exit angle does not respond to the launch "
              "direction; degenerate geometry");
        double c = b - (pb.u - target_u) * (b - a) / denom;
        c = std::clamp(c, -1.0 + 1e-12, -1e-3);
        a = b;
        pa = pb;
        b = c;
        pb = eval(b);
      }
      return std::make_pair(b, pb);
    };

    auto [mu_lo, p_lo] = solve_edge(opt_.window_lo * patch.beta);
    auto [mu_hi, p_hi] = solve_edge(opt_.window_hi * patch.beta);

    patch.pts.reserve(opt_.patch_points);
    for (int k = 0; k < opt_.patch_points; ++k) {
      double w = opt_.patch_points == 1
                     ? 0.5
                     : static_cast<double>(k) / (opt_.patch_points - 1);
      patch.pts.push_back(eval(mu_lo + w * (mu_hi - mu_lo)));
    }
    std::sort(patch.pts.begin(), patch.pts.end(),
              [](const PatchPoint& x, const PatchPoint& y) { return x.u < y.u; });

    double span = patch.pts.back().u - patch.pts.front().u;
    double want = (opt_.window_hi - opt_.window_lo) * patch.beta;
    if (span < 0.25 * want)
      throw solver_error("jet patch: travel-time patch is degenerate");
    return patch;
  }

  // Extrapolated boundary value g_11(theta0, 0).
  double g11(double theta0) const {
    std::vector<double> vals;
    for (double eps : opt_.eps_ladder)
      vals.push_back(order0(build_patch(theta0, eps)));
    return extrapolate(opt_.eps_ladder, vals);
  }

  BoundaryJet recover(double theta0) const {
    BoundaryJet jet;
    jet.theta0 = theta0;
    jet.diag.eps = opt_.eps_ladder;

    std::vector<TravelTimePatch> patches;
    for (double eps : opt_.eps_ladder) {
      patches.push_back(build_patch(theta0, eps));
      jet.diag.g11_eps.push_back(order0(patches.back()));
    }
    jet.g11 = extrapolate(opt_.eps_ladder, jet.diag.g11_eps);

    // Quadratic model of g_11 along the boundary near the anchor, from two
    // auxiliary order-0 recoveries; the eikonal inversion below needs g_11 at
    // every patch point, not just at the anchor.
    double d = opt_.anchor_offset;
    double gm = g11(theta0 - d);
    double gp = g11(theta0 + d);
    std::array<double, 3> parab = {jet.g11, (gp - gm) / (2.0 * d),
                                   (gp + gm - 2.0 * jet.g11) / (2.0 * d * d)};

    for (const auto& patch : patches)
      jet.diag.dn_ginv_eps.push_back(order1(patch, parab));
    double dn_ginv = extrapolate(opt_.eps_ladder, jet.diag.dn_ginv_eps);
    jet.dn_g11 = -jet.g11 * jet.g11 * dn_ginv;
    return jet;
  }

  // tau_theta(theta0)^2 for one patch.
  double order0(const TravelTimePatch& patch) const {
    Eigen::VectorXd c = fit_tau(patch);
    return c[1] * c[1];
  }

private:
  GeodesicFlow flow_;
  JetOptions opt_;

  Eigen::VectorXd fit_tau(const TravelTimePatch& patch) const {
    std::vector<double> u, tau;
    for (const auto& p : patch.pts) {
      u.push_back(p.u);
      tau.push_back(p.tau);
    }
    int deg = std::min<int>(opt_.fit_degree, static_cast<int>(u.size()) - 2);
    return polyfit(u, tau, deg);
  }

  // d_n g^11 estimate from one patch, given the quadratic boundary model of
  // g_11 around the anchor.
  double order1(const TravelTimePatch& patch,
                const std::array<double, 3>& parab) const {
    Eigen::VectorXd c = fit_tau(patch);
    double tau1 = c[1];
    std::vector<double> u, tn;
    for (const auto& p : patch.pts) {
      double tth = poly_deriv_eval(c, p.u);
      double g11_here = parab[0] + parab[1] * p.u + parab[2] * p.u * p.u;
      if (tth * tth / g11_here > 1.0 + 1e-3)
        throw solver_error(
            "jet recovery: eikonal visibility violated on the patch");
      // tau_n = -sqrt(1 - tau_theta^2 / g_11), evaluated through the first
      // variation identity tau_theta / sqrt(g_11) = mu_out. The direct form
      // cancels to O(beta^2) and would amplify the g_11 model error by
      // 1/beta^2 on the small rungs; mu_out carries the same information
      // without the subtraction.
      u.push_back(p.u);
      tn.push_back(-std::sqrt(std::max(0.0, 1.0 - p.mu_out * p.mu_out)));
    }
    Eigen::VectorXd cn = polyfit(u, tn, 2);
    double tau_1n = cn[1];
    // G^11(eps) = -2 M / tau_theta^2 with M = 2 g^11 tau_theta tau_{theta n}.
    return -4.0 * tau_1n / (parab[0] * tau1);
  }

  static double extrapolate(const std::vector<double>& eps,
                            const std::vector<double>& vals) {
    int deg = std::min<int>(2, static_cast<int>(eps.size()) - 1);
    Eigen::VectorXd c = polyfit(eps, vals, deg);
    return c[0];
  }
};

// Consistency identity of a travel-time patch: moving the receiver along the
// boundary changes tau at the rate mu_out of the connecting ray, so
// tau(p_i) - tau(p_0) must match the arc integral of mu_out. Returns the
// largest mismatch over the patch (trapezoid rule in arc length).
inline double patch_consistency_residual(const TravelTimePatch& patch,
                                         const MetricChart& chart) {
  double L = chart.boundary_length();
  double worst = 0.0;
  double acc = 0.0;
  for (std::size_t i = 1; i < patch.pts.size(); ++i) {
    const PatchPoint& a = patch.pts[i - 1];
    const PatchPoint& b = patch.pts[i];
    double ds = periodic_diff(b.s, a.s, L);
    acc += 0.5 * (a.mu_out + b.mu_out) * ds;
    worst = std::max(worst,
                     std::abs((b.tau - patch.pts[0].tau) - acc));
  }
  return worst;
}

}  // namespace lenslab

#endif  // LENSLAB_JET_HPP
