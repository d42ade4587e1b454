#ifndef LENSLAB_GEODESIC_HPP
#define LENSLAB_GEODESIC_HPP

#include <optional>

#include "lenslab/metric.hpp"

// Unit-speed geodesic flow on a metric chart: fixed-step RK4 on the
// first-order system x' = v, v'^k = -Gamma^k_ij v^i v^j, with per-step
// renormalization of |v|_g and bisection refinement of the boundary crossing.
// A scalar Jacobi field (J'' + K J = 0, J(0) = 0, J'(0) = 1) can be carried
// along to detect conjugate points.

namespace lenslab {

enum class RayStatus {
  exited,      // reached |x| = 1 from inside; end is the refined exit state
  trapped,     // exceeded the length cap without exiting
  left_chart,  // free-mode ray reached the edge of the extended chart
  completed,   // free-mode ray reached the requested length
};

inline const char* status_name(RayStatus s) {
  switch (s) {
    case RayStatus::exited: return "exited";
    case RayStatus::trapped: return "trapped";
    case RayStatus::left_chart: return "left_chart";
    case RayStatus::completed: return "completed";
  }
  return "?";
}

struct RaySample {
  double t = 0.0;  // arc length from the start
  Vec2 x = Vec2::Zero();
  Vec2 xi = Vec2::Zero();
  double J = 0.0;
  double Jp = 0.0;
};

struct RayPath {
  RayStatus status = RayStatus::trapped;
  double length = 0.0;  // +inf for trapped rays
  RaySample start, end;
  std::vector<RaySample> samples;  // filled when store_every > 0
  // First interior zero of the Jacobi field, by linear interpolation between
  // steps; only tracked when the flow runs with_jacobi.
  std::optional<double> first_jacobi_zero;
};

struct FlowOptions {
  double h = 1e-3;                // integrator step (arc length)
  double l_max = 50.0;            // trapping cap
  bool stop_at_boundary = true;   // false: free flight in the extended chart
  double fixed_length = 0.0;      // free-mode target arc length
  bool with_jacobi = false;
  int store_every = 0;            // 0: endpoints only; k: every k-th step
};

class GeodesicFlow {
public:
  explicit GeodesicFlow(MetricChart chart) : chart_(std::move(chart)) {}

  const MetricChart& chart() const { return chart_; }

  // Normalize v to unit g-length at x.
  Vec2 unit(const Vec2& x, const Vec2& v) const {
    return v / chart_.norm(x, v);
  }

  RayPath shoot(const Vec2& x0, const Vec2& v0, const FlowOptions& opt) const {
    State s;
    s.x = x0;
    s.v = unit(x0, v0);
    s.J = 0.0;
    s.Jp = 1.0;

    RayPath path;
    path.start = make_sample(0.0, s);
    if (opt.store_every > 0) path.samples.push_back(path.start);

    // Free-mode rays stop a step short of the chart edge so that RK4 stage
    // points never leave the chart.
    const double r_edge = 1.0 + chart_.margin() - 2.0 * opt.h;
    double t = 0.0;
    double prev_J = 0.0;
    bool jacobi_armed = false;
    long step_index = 0;

    while (true) {
      if (t >= opt.l_max) {
        path.status = RayStatus::trapped;
        path.length = inf();
        path.end = make_sample(t, s);
        break;
      }
      if (!opt.stop_at_boundary && t >= opt.fixed_length - 1e-15) {
        path.status = RayStatus::completed;
        path.length = t;
        path.end = make_sample(t, s);
        break;
      }

      double h = opt.h;
      if (!opt.stop_at_boundary) h = std::min(h, opt.fixed_length - t);

      State next = rk4_step(s, h, opt.with_jacobi);
      double r2 = next.x.squaredNorm();

      if (opt.stop_at_boundary && r2 > 1.0) {
        double alpha = refine_crossing(s, h, 1.0, opt.with_jacobi);
        State exit_state = rk4_step(s, alpha * h, opt.with_jacobi);
        exit_state.v = unit(exit_state.x, exit_state.v);
        double t_exit = t + alpha * h;
        path.status = RayStatus::exited;
        path.length = t_exit;
        path.end = make_sample(t_exit, exit_state);
        if (opt.with_jacobi && !path.first_jacobi_zero && jacobi_armed) {
          if (sign_change(prev_J, exit_state.J)) {
            path.first_jacobi_zero =
                t + zero_fraction(prev_J, exit_state.J) * alpha * h;
          } else if (exit_state.Jp != 0.0) {
            // A zero sitting numerically on the exit (or just beyond it)
            // produces no sign change; one Newton step from the endpoint
            // recovers it. Only zeros within a few steps of the end count,
            // and the trivial J(0) = 0 of short rays must not qualify.
            double tz = t_exit - exit_state.J / exit_state.Jp;
            if (std::abs(tz - t_exit) <= 10.0 * opt.h && tz > 0.5 * t_exit) {
              path.first_jacobi_zero = tz;
            }
          }
        }
        if (opt.store_every > 0) path.samples.push_back(path.end);
        break;
      }
      if (!opt.stop_at_boundary && r2 > r_edge * r_edge) {
        double alpha = refine_crossing(s, h, r_edge, opt.with_jacobi);
        State edge_state = rk4_step(s, alpha * h, opt.with_jacobi);
        edge_state.v = unit(edge_state.x, edge_state.v);
        double t_edge = t + alpha * h;
        path.status = RayStatus::left_chart;
        path.length = t_edge;
        path.end = make_sample(t_edge, edge_state);
        if (opt.store_every > 0) path.samples.push_back(path.end);
        break;
      }

      next.v = unit(next.x, next.v);
      t += h;
      ++step_index;
      if (opt.with_jacobi) {
        if (!jacobi_armed && std::abs(next.J) > 1e-9) jacobi_armed = true;
        if (jacobi_armed && !path.first_jacobi_zero &&
            sign_change(prev_J, next.J)) {
          path.first_jacobi_zero = t - h + zero_fraction(prev_J, next.J) * h;
        }
        prev_J = next.J;
      }
      s = next;
      if (opt.store_every > 0 && step_index % opt.store_every == 0) {
        path.samples.push_back(make_sample(t, s));
      }
    }

    if (opt.store_every > 0 && (path.samples.empty() ||
                                path.samples.back().t != path.end.t)) {
      path.samples.push_back(path.end);
    }
    return path;
  }

private:
  struct State {
    Vec2 x = Vec2::Zero();
    Vec2 v = Vec2::Zero();
    double J = 0.0;
    double Jp = 0.0;
  };

  struct Deriv {
    Vec2 dx = Vec2::Zero();
    Vec2 dv = Vec2::Zero();
    double dJ = 0.0;
    double dJp = 0.0;
  };

  MetricChart chart_;

  static RaySample make_sample(double t, const State& s) {
    RaySample r;
    r.t = t;
    r.x = s.x;
    r.xi = s.v;
    r.J = s.J;
    r.Jp = s.Jp;
    return r;
  }

  Deriv eval(const State& s, bool with_jacobi) const {
    Deriv d;
    d.dx = s.v;
    MetricDerivs md = chart_.derivs(s.x, with_jacobi ? 2 : 1);
    auto gamma = MetricChart::christoffel_from(md);
    d.dv = -Vec2(s.v.dot(gamma[0] * s.v), s.v.dot(gamma[1] * s.v));
    if (with_jacobi) {
      d.dJ = s.Jp;
      d.dJp = -gauss_from(md) * s.J;
    }
    return d;
  }

  // Brioschi curvature from an already-evaluated metric jet.
  static double gauss_from(const MetricDerivs& d) {
    const double E = d.g(0, 0), F = d.g(0, 1), G = d.g(1, 1);
    const double Eu = d.dg[0](0, 0), Ev = d.dg[1](0, 0);
    const double Fu = d.dg[0](0, 1), Fv = d.dg[1](0, 1);
    const double Gu = d.dg[0](1, 1), Gv = d.dg[1](1, 1);
    const double Evv = d.d2g[1][1](0, 0);
    const double Guu = d.d2g[0][0](1, 1);
    const double Fuv = d.d2g[0][1](0, 1);
    Eigen::Matrix3d M1, M2;
    M1 << -0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev,
          Fv - 0.5 * Gu,                E,        F,
          0.5 * Gv,                     F,        G;
    M2 << 0.0,      0.5 * Ev, 0.5 * Gu,
          0.5 * Ev, E,        F,
          0.5 * Gu, F,        G;
    double det_g = E * G - F * F;
    return (M1.determinant() - M2.determinant()) / (det_g * det_g);
  }

  State rk4_step(const State& s, double h, bool with_jacobi) const {
    auto advance = [](const State& a, const Deriv& d, double dt) {
      State r;
      r.x = a.x + dt * d.dx;
      r.v = a.v + dt * d.dv;
      r.J = a.J + dt * d.dJ;
      r.Jp = a.Jp + dt * d.dJp;
      return r;
    };
    Deriv k1 = eval(s, with_jacobi);
    Deriv k2 = eval(advance(s, k1, 0.5 * h), with_jacobi);
    Deriv k3 = eval(advance(s, k2, 0.5 * h), with_jacobi);
    Deriv k4 = eval(advance(s, k3, h), with_jacobi);
    State r;
    r.x = s.x + h / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
    r.v = s.v + h / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
    r.J = s.J + h / 6.0 * (k1.dJ + 2.0 * k2.dJ + 2.0 * k3.dJ + k4.dJ);
    r.Jp = s.Jp + h / 6.0 * (k1.dJp + 2.0 * k2.dJp + 2.0 * k3.dJp + k4.dJp);
    return r;
  }

  // Fraction alpha in (0, 1] such that the RK4 substep of size alpha*h from s
  // lands on |x| = radius, found by bisection on |x|^2 - radius^2. The start
  // may itself lie on the circle (boundary launches), which counts as the
  // inside bracket.
  double refine_crossing(const State& s, double h, double radius,
                         bool with_jacobi) const {
    double lo = 0.0, hi = 1.0;
    double r2_target = radius * radius;
    for (int it = 0; it < 120; ++it) {
      double mid = 0.5 * (lo + hi);
      State m = rk4_step(s, mid * h, with_jacobi);
      double r = m.x.squaredNorm() - r2_target;
      // Near-tangential exits cross the circle quadratically, so |r| alone
      // does not pin the crossing; require the bracket to be tight as well.
      if (std::abs(r) < 1e-12 && hi - lo < 1e-9) return mid;
      if (r > 0.0) {
        hi = mid;
      } else {
        lo = mid;
      }
      if (hi - lo < 1e-15) break;
    }
    return hi;
  }

  static bool sign_change(double a, double b) {
    return (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0);
  }

  static double zero_fraction(double a, double b) {
    return a / (a - b);
  }
};

}  // namespace lenslab

#endif  // LENSLAB_GEODESIC_HPP
