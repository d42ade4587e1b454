#ifndef LENSLAB_METRIC_HPP
#define LENSLAB_METRIC_HPP

#include <array>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "lenslab/common.hpp"

// Riemannian metric charts on the closed unit disc, extended smoothly to a
// margin |x| <= 1 + delta so that integrators may overshoot the boundary and
// travel-time constructions may probe from just outside. Four families are
// provided: the flat metric, conformal multiples e^{2 phi} of the flat metric,
// a constant-curvature family written in geodesic polar form about the origin,
// and metrics tabulated on a Cartesian grid (used for pullbacks and for data
// loaded from CSV).

namespace lenslab {

enum class MetricFamily { euclidean, conformal, polar_normal, tabulated };

inline const char* family_name(MetricFamily f) {
  switch (f) {
    case MetricFamily::euclidean: return "euclidean";
    case MetricFamily::conformal: return "conformal";
    case MetricFamily::polar_normal: return "polar_normal";
    case MetricFamily::tabulated: return "tabulated";
  }
  return "?";
}

// Scalar conformal factor phi with optional analytic first and second
// derivatives. When the closures are absent, derivatives fall back to
// fourth-order finite differences of the value closure.
struct ConformalProfile {
  std::function<double(const Vec2&)> value;
  std::function<Vec2(const Vec2&)> gradient;  // may be empty
  std::function<Mat2(const Vec2&)> hessian;   // may be empty
  std::string tag;                            // identifies the profile in fingerprints
};

// phi = amplitude * (1 - |x|^2) + offset. Vanishes on the boundary circle when
// offset = 0; the offset variant exercises charts whose boundary length
// differs from 2*pi.
inline ConformalProfile conformal_bump(double amplitude, double offset = 0.0) {
  ConformalProfile p;
  p.value = [amplitude, offset](const Vec2& x) {
    return amplitude * (1.0 - x.squaredNorm()) + offset;
  };
  p.gradient = [amplitude](const Vec2& x) -> Vec2 { return -2.0 * amplitude * x; };
  p.hessian = [amplitude](const Vec2&) -> Mat2 {
    return -2.0 * amplitude * Mat2::Identity();
  };
  std::ostringstream os;
  os << "bump:" << format_double(amplitude) << ":" << format_double(offset);
  p.tag = os.str();
  return p;
}

// phi = log(2 lambda) - log(1 + lambda^2 |x|^2): the round metric of Gauss
// curvature +1 in (scaled) stereographic coordinates. The unit disc is the
// spherical cap of angular radius 2 atan(lambda); lambda = 1 gives the full
// hemisphere, whose boundary circle is a closed geodesic (only marginally
// convex), while lambda < 1 gives a strictly convex cap.
inline ConformalProfile stereographic_sphere(double lambda = 1.0) {
  if (!(lambda > 0.0))
    throw std::invalid_argument("stereographic profile: lambda must be positive");
  ConformalProfile p;
  double l2 = lambda * lambda;
  p.value = [lambda, l2](const Vec2& x) {
    return std::log(2.0 * lambda) - std::log1p(l2 * x.squaredNorm());
  };
  p.gradient = [l2](const Vec2& x) -> Vec2 {
    return -2.0 * l2 / (1.0 + l2 * x.squaredNorm()) * x;
  };
  p.hessian = [l2](const Vec2& x) -> Mat2 {
    double w = 1.0 + l2 * x.squaredNorm();
    return -2.0 * l2 / w * Mat2::Identity() +
           4.0 * l2 * l2 / (w * w) * (x * x.transpose());
  };
  p.tag = lambda == 1.0 ? "sphere" : "sphere:" + format_double(lambda);
  return p;
}

// Metric value together with its first and second coordinate derivatives.
// dg[k](i,j) = d g_ij / d x^k and d2g[l][k] = d^2 g / d x^l d x^k.
struct MetricDerivs {
  Mat2 g;
  std::array<Mat2, 2> dg;
  std::array<std::array<Mat2, 2>, 2> d2g;
};

// Outward-facing boundary data at arc-length parameter s: the point on the
// unit circle, the g-unit tangent t in the direction of increasing s, and the
// g-unit inward normal nu. (t, nu) is g-orthonormal.
struct BoundaryFrame {
  double s = 0.0;
  double theta = 0.0;  // Euclidean angle of the point
  Vec2 x = Vec2::Zero();
  Vec2 t = Vec2::Zero();
  Vec2 nu = Vec2::Zero();
};

namespace detail {

// Entire functions behind the constant-curvature family. With a = 4 K |x|^2,
//   F(a) = (1 - cos sqrt(a)) / a      (cosh for a < 0)
//   G(a) = (1 - 2 F(a)) / a
// the metric is g_ij = S delta_ij + T x_i x_j with S = 2 F, T = 4 K G; this is
// dr^2 + (sin(sqrt(K) r)^2 / K) dtheta^2 written in Cartesian coordinates.
// Both are analytic across a = 0, so small |a| uses the power series.
struct CurvatureKernels {
  double F, Fp, Fpp, G, Gp, Gpp;
};

inline CurvatureKernels curvature_kernels(double a) {
  CurvatureKernels k{};
  if (std::abs(a) < 0.5) {
    // F = sum (-a)^m / (2m+2)!, and friends, truncated far below roundoff.
    double fact = 2.0;  // (2m+2)! running value, m = 0
    double pw = 1.0;    // a^m
    for (int m = 0; m <= 14; ++m) {
      double c = ((m & 1) ? -1.0 : 1.0) / fact;
      k.F += c * pw;
      if (m >= 1) k.Fp += c * m * pw / a;
      if (m >= 2) k.Fpp += c * m * (m - 1) * pw / (a * a);
      if (m >= 1) k.G += 2.0 * (-c) * pw / a;
      if (m >= 2) k.Gp += 2.0 * (-c) * (m - 1) * pw / (a * a);
      if (m >= 3) k.Gpp += 2.0 * (-c) * (m - 1) * (m - 2) * pw / (a * a * a);
      pw *= a;
      fact *= (2.0 * m + 3.0) * (2.0 * m + 4.0);
    }
    if (a == 0.0) {
      // Exact limits of the series terms that divided by a above.
      k.F = 1.0 / 2.0;
      k.Fp = -1.0 / 24.0;
      k.Fpp = 2.0 / 720.0;
      k.G = 2.0 / 24.0;
      k.Gp = -2.0 / 720.0;
      k.Gpp = 4.0 / 40320.0;
    }
    return k;
  }
  double r = std::sqrt(std::abs(a));
  double cz, sz;  // cos(sqrt a) and sin(sqrt a)/sqrt a, continued through a < 0
  if (a > 0.0) {
    cz = std::cos(r);
    sz = std::sin(r) / r;
  } else {
    cz = std::cosh(r);
    sz = std::sinh(r) / r;
  }
  k.F = (1.0 - cz) / a;
  k.Fp = (0.5 * sz - k.F) / a;
  double szp = (cz - sz) / (2.0 * a);
  k.Fpp = (0.5 * szp - 2.0 * k.Fp) / a;
  k.G = (1.0 - 2.0 * k.F) / a;
  k.Gp = (-2.0 * k.Fp - k.G) / a;
  k.Gpp = (-2.0 * k.Fpp - 2.0 * k.Gp) / a;
  return k;
}

// Degree-four Lagrange basis on nodes {0,1,2,3,4}: monomial coefficients, so
// value and derivatives come from Horner evaluation. At the nodes the
// derivative weights reduce to the classical five-point centered differences.
inline const std::array<std::array<double, 5>, 5>& lagrange5_coeffs() {
  static const std::array<std::array<double, 5>, 5> C = [] {
    std::array<std::array<double, 5>, 5> c{};
    for (int m = 0; m < 5; ++m) {
      // poly = prod_{j != m} (x - j) / (m - j), accumulated in monomials
      std::array<double, 5> poly{}; poly[0] = 1.0;
      int deg = 0;
      double denom = 1.0;
      for (int j = 0; j < 5; ++j) {
        if (j == m) continue;
        denom *= (m - j);
        for (int d = deg; d >= 0; --d) {
          poly[d + 1] += poly[d];
          poly[d] *= -j;
        }
        ++deg;
      }
      for (int d = 0; d < 5; ++d) c[m][d] = poly[d] / denom;
    }
    return c;
  }();
  return C;
}

struct StencilWeights {
  int base = 0;                  // first node index of the 5-point stencil
  std::array<double, 5> w{};     // value weights
  std::array<double, 5> dw{};    // d/dx weights (already divided by h)
  std::array<double, 5> d2w{};   // d2/dx2 weights (divided by h^2)
};

inline StencilWeights stencil_1d(double q, int n, double inv_h) {
  StencilWeights s;
  int b = static_cast<int>(std::lround(q)) - 2;
  b = std::max(0, std::min(b, n - 5));
  s.base = b;
  double xi = q - b;
  // Clamp to the stencil span; constant extrapolation beyond the table box.
  xi = std::max(0.0, std::min(4.0, xi));
  const auto& C = lagrange5_coeffs();
  for (int m = 0; m < 5; ++m) {
    const auto& c = C[m];
    double v = 0.0, d1 = 0.0, d2 = 0.0;
    for (int d = 4; d >= 0; --d) {
      v = v * xi + c[d];
      if (d >= 1) d1 = d1 * xi + d * c[d];
      if (d >= 2) d2 = d2 * xi + d * (d - 1) * c[d];
    }
    s.w[m] = v;
    s.dw[m] = d1 * inv_h;
    s.d2w[m] = d2 * inv_h * inv_h;
  }
  return s;
}

}  // namespace detail

// Gridded metric components on the square [-extent, extent]^2. Evaluation uses
// tensor-product degree-four Lagrange interpolation, whose nodal derivatives
// coincide with fourth-order centered differences. Tables flagged disc_only
// cover at most the closed unit disc and are extended constantly along rays
// for |x| > 1; that extension is continuous but not differentiable across the
// circle, which the chart reports through a reduced smoothness order.
struct TabulatedMetric {
  int n = 0;
  double extent = 0.0;
  std::vector<double> g11, g12, g22;
  bool disc_only = false;

  double h() const { return 2.0 * extent / (n - 1); }
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(j) * n + i;
  }
};

class MetricChart {
public:
  static MetricChart euclidean(double margin = 0.1) {
    MetricChart c;
    c.impl_->family = MetricFamily::euclidean;
    c.impl_->margin = margin;
    c.impl_->smoothness = 99;
    c.finish_("family=euclidean");
    return c;
  }

  static MetricChart conformal(ConformalProfile phi, double margin = 0.1,
                               int smoothness = 6) {
    if (!phi.value) throw std::invalid_argument("conformal chart: empty profile");
    MetricChart c;
    c.impl_->family = MetricFamily::conformal;
    c.impl_->phi = std::move(phi);
    c.impl_->margin = margin;
    c.impl_->smoothness = smoothness;
    c.finish_("family=conformal;profile=" + c.impl_->phi.tag);
    return c;
  }

  static MetricChart sphere(double margin = 0.1) {
    return conformal(stereographic_sphere(), margin);
  }

  // Constant Gauss curvature K in geodesic polar form about the origin. For
  // K > 0 the chart degenerates at radius pi / sqrt(K), so the curvature must
  // keep that radius outside the extended chart.
  static MetricChart polar_normal(double curvature, double margin = 0.1) {
    double r_max = 1.0 + margin;
    if (curvature > 0.0 && r_max * std::sqrt(curvature) >= 0.95 * kPi) {
      throw std::invalid_argument(
          "polar_normal chart: curvature too large for the extended chart");
    }
    MetricChart c;
    c.impl_->family = MetricFamily::polar_normal;
    c.impl_->curvature = curvature;
    c.impl_->margin = margin;
    c.impl_->smoothness = 99;
    c.finish_("family=polar_normal;K=" + format_double(curvature));
    return c;
  }

  static MetricChart tabulated(TabulatedMetric table, double margin = 0.1) {
    if (table.n < 7) throw std::invalid_argument("tabulated chart: grid too small");
    std::size_t expect = static_cast<std::size_t>(table.n) * table.n;
    if (table.g11.size() != expect || table.g12.size() != expect ||
        table.g22.size() != expect)
      throw std::invalid_argument("tabulated chart: component size mismatch");
    if (!table.disc_only && table.extent < 1.0 + margin - 1e-12)
      throw std::invalid_argument(
          "tabulated chart: table does not cover the extended chart");
    MetricChart c;
    c.impl_->family = MetricFamily::tabulated;
    c.impl_->margin = margin;
    c.impl_->smoothness = 3;
    c.impl_->table = std::make_shared<TabulatedMetric>(std::move(table));
    c.finish_("family=tabulated;" + table_digest_(*c.impl_->table));
    return c;
  }

  // Sample another chart (or any symmetric positive matrix field) onto an
  // n x n table over the extended square.
  static MetricChart tabulate(const std::function<Mat2(const Vec2&)>& sampler,
                              int n, double margin = 0.1) {
    TabulatedMetric t;
    t.n = n;
    t.extent = 1.0 + margin;
    t.g11.resize(static_cast<std::size_t>(n) * n);
    t.g12.resize(t.g11.size());
    t.g22.resize(t.g11.size());
    double h = t.h();
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        Vec2 x(-t.extent + i * h, -t.extent + j * h);
        Mat2 g = sampler(x);
        t.g11[t.idx(i, j)] = g(0, 0);
        t.g12[t.idx(i, j)] = 0.5 * (g(0, 1) + g(1, 0));
        t.g22[t.idx(i, j)] = g(1, 1);
      }
    }
    return tabulated(std::move(t), margin);
  }

  // Gridded snapshot of an existing chart (corners beyond the chart radius
  // are filled by radial projection).
  static MetricChart tabulate_chart(const MetricChart& src, int n,
                                    double margin = 0.1) {
    return tabulate([&src](const Vec2& x) { return src.metric_clamped(x); }, n,
                    margin);
  }

  MetricFamily family() const { return impl_->family; }
  double margin() const { return impl_->margin; }
  int smoothness() const { return impl_->smoothness; }
  std::uint64_t fingerprint() const { return impl_->fingerprint; }
  double curvature_parameter() const { return impl_->curvature; }
  const TabulatedMetric* table() const { return impl_->table.get(); }

  bool in_extended_chart(const Vec2& x) const {
    return x.norm() <= 1.0 + impl_->margin + 1e-9;
  }

  Mat2 metric(const Vec2& x) const {
    check_domain_(x);
    return metric_(x);
  }

  // Evaluation with radial projection onto the extended chart. Total on the
  // whole plane; used to fill table corners that lie outside the chart but
  // inside its bounding square.
  Mat2 metric_clamped(const Vec2& x) const {
    double r = x.norm(), rmax = 1.0 + impl_->margin;
    if (r > rmax) return metric_(x * (rmax / r));
    return metric_(x);
  }

  // order = 1 fills g and dg only; order = 2 (default) also fills d2g.
  MetricDerivs derivs(const Vec2& x, int order = 2) const {
    check_domain_(x);
    return derivs_(x, order);
  }

  // Christoffel symbols of the Levi-Civita connection; gamma[k](i,j) is
  // Gamma^k_ij.
  std::array<Mat2, 2> christoffel(const Vec2& x) const {
    MetricDerivs d = derivs(x, 1);
    return christoffel_from(d);
  }

  static std::array<Mat2, 2> christoffel_from(const MetricDerivs& d) {
    Mat2 ginv = d.g.inverse();
    std::array<Mat2, 2> gamma;
    for (int k = 0; k < 2; ++k) {
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          double sum = 0.0;
          for (int l = 0; l < 2; ++l) {
            sum += ginv(k, l) *
                   (d.dg[i](j, l) + d.dg[j](i, l) - d.dg[l](i, j));
          }
          gamma[k](i, j) = 0.5 * sum;
        }
      }
    }
    return gamma;
  }

  // Gauss curvature from the metric jet (Brioschi formula).
  double gauss_curvature(const Vec2& x) const {
    MetricDerivs d = derivs(x);
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

  double norm(const Vec2& x, const Vec2& v) const {
    Mat2 g = metric(x);
    return std::sqrt(v.dot(g * v));
  }

  double inner(const Vec2& x, const Vec2& v, const Vec2& w) const {
    return v.dot(metric(x) * w);
  }

  // --- boundary parametrization -------------------------------------------

  // Total g-length of the boundary circle.
  double boundary_length() const {
    ensure_boundary_table_();
    return impl_->boundary_s.back();
  }

  double arclength_from_theta(double theta) const {
    ensure_boundary_table_();
    theta = wrap_angle(theta);
    const auto& bt = impl_->boundary_s;
    int nseg = static_cast<int>(bt.size()) - 1;
    double step = 2.0 * kPi / nseg;
    int i = std::min(static_cast<int>(theta / step), nseg - 1);
    double t0 = i * step;
    // Composite Simpson from the table node to theta.
    double a = boundary_speed_(t0), m = boundary_speed_(0.5 * (t0 + theta)),
           b = boundary_speed_(theta);
    return bt[i] + (theta - t0) / 6.0 * (a + 4.0 * m + b);
  }

  double theta_from_arclength(double s) const {
    ensure_boundary_table_();
    const auto& bt = impl_->boundary_s;
    double L = bt.back();
    s = std::fmod(s, L);
    if (s < 0.0) s += L;
    int nseg = static_cast<int>(bt.size()) - 1;
    double step = 2.0 * kPi / nseg;
    auto it = std::upper_bound(bt.begin(), bt.end(), s);
    int i = std::max(0, static_cast<int>(it - bt.begin()) - 1);
    double theta = i * step;
    for (int iter = 0; iter < 8; ++iter) {
      double f = arclength_from_theta(theta) - s;
      if (std::abs(f) < 1e-14) break;
      theta -= f / boundary_speed_(theta);
    }
    return wrap_angle(theta);
  }

  BoundaryFrame boundary_frame(double s) const {
    BoundaryFrame fr;
    fr.s = s;
    fr.theta = theta_from_arclength(s);
    fr.x = Vec2(std::cos(fr.theta), std::sin(fr.theta));
    Mat2 g = metric(fr.x);
    Vec2 te(-fr.x.y(), fr.x.x());
    fr.t = te / std::sqrt(te.dot(g * te));
    Vec2 rin = -fr.x;  // Euclidean inward radial direction
    Vec2 nu0 = rin - (rin.dot(g * fr.t)) * fr.t;
    fr.nu = nu0 / std::sqrt(nu0.dot(g * nu0));
    return fr;
  }

  // Positivity scan used by the construction-time sanity check.
  bool positive_definite_on_grid(int n) const {
    double L = 1.0 + impl_->margin;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        Vec2 x(-L + 2.0 * L * i / (n - 1), -L + 2.0 * L * j / (n - 1));
        if (x.norm() > L) continue;
        Mat2 g = metric_(x);
        if (!(g(0, 0) > 0.0) || !(g.determinant() > 0.0)) return false;
      }
    }
    return true;
  }

private:
  struct Impl {
    MetricFamily family = MetricFamily::euclidean;
    ConformalProfile phi;
    double curvature = 0.0;
    std::shared_ptr<TabulatedMetric> table;
    double margin = 0.1;
    int smoothness = 99;
    std::uint64_t fingerprint = 0;
    mutable std::vector<double> boundary_s;  // cumulative arc length over theta
  };

  std::shared_ptr<Impl> impl_ = std::make_shared<Impl>();

  void finish_(const std::string& digest) {
    std::ostringstream os;
    os << digest << ";margin=" << format_double(impl_->margin);
    impl_->fingerprint = fnv1a64(os.str());
    if (!positive_definite_on_grid(64))
      throw std::domain_error("metric chart: not positive definite on the chart");
  }

  static std::string table_digest_(const TabulatedMetric& t) {
    std::uint64_t h = fnv1a64("table");
    auto mix = [&h](const std::vector<double>& v) {
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(v.data()),
                                   v.size() * sizeof(double)),
                  h);
    };
    mix(t.g11);
    mix(t.g12);
    mix(t.g22);
    std::ostringstream os;
    os << "n=" << t.n << ";extent=" << format_double(t.extent)
       << ";disc_only=" << (t.disc_only ? 1 : 0) << ";data=" << hex64(h);
    return os.str();
  }

  void check_domain_(const Vec2& x) const {
    if (!in_extended_chart(x)) {
      throw std::domain_error("metric chart: point outside extended chart |x| = " +
                              format_double(x.norm()));
    }
  }

  double boundary_speed_(double theta) const {
    Vec2 x(std::cos(theta), std::sin(theta));
    Vec2 te(-x.y(), x.x());
    Mat2 g = metric_(x);
    return std::sqrt(te.dot(g * te));
  }

  void ensure_boundary_table_() const {
    if (!impl_->boundary_s.empty()) return;
    const int nseg = 4096;
    std::vector<double> s(nseg + 1, 0.0);
    double step = 2.0 * kPi / nseg;
    for (int i = 0; i < nseg; ++i) {
      double t0 = i * step;
      double a = boundary_speed_(t0);
      double m = boundary_speed_(t0 + 0.5 * step);
      double b = boundary_speed_(t0 + step);
      s[i + 1] = s[i] + step / 6.0 * (a + 4.0 * m + b);
    }
    impl_->boundary_s = std::move(s);
  }

  // --- family evaluation ----------------------------------------------------

  Mat2 metric_(const Vec2& x) const {
    switch (impl_->family) {
      case MetricFamily::euclidean:
        return Mat2::Identity();
      case MetricFamily::conformal: {
        double w = std::exp(2.0 * impl_->phi.value(x));
        return w * Mat2::Identity();
      }
      case MetricFamily::polar_normal: {
        double u = x.squaredNorm();
        auto k = detail::curvature_kernels(4.0 * impl_->curvature * u);
        double S = 2.0 * k.F;
        double T = 4.0 * impl_->curvature * k.G;
        return S * Mat2::Identity() + T * (x * x.transpose());
      }
      case MetricFamily::tabulated:
        return table_eval_(x, nullptr, nullptr);
    }
    return Mat2::Identity();
  }

  MetricDerivs derivs_(const Vec2& x, int order = 2) const {
    MetricDerivs d;
    d.dg = {Mat2::Zero(), Mat2::Zero()};
    for (auto& row : d.d2g) row = {Mat2::Zero(), Mat2::Zero()};
    switch (impl_->family) {
      case MetricFamily::euclidean: {
        d.g = Mat2::Identity();
        return d;
      }
      case MetricFamily::conformal: {
        double phi = impl_->phi.value(x);
        Vec2 gp = phi_gradient_(x);
        double w = std::exp(2.0 * phi);
        d.g = w * Mat2::Identity();
        for (int k = 0; k < 2; ++k) d.dg[k] = 2.0 * gp[k] * w * Mat2::Identity();
        if (order >= 2) {
          Mat2 hp = phi_hessian_(x);
          for (int l = 0; l < 2; ++l) {
            for (int k = 0; k < 2; ++k) {
              d.d2g[l][k] =
                  (2.0 * hp(l, k) + 4.0 * gp[l] * gp[k]) * w * Mat2::Identity();
            }
          }
        }
        return d;
      }
      case MetricFamily::polar_normal: {
        double K = impl_->curvature;
        double u = x.squaredNorm();
        auto kr = detail::curvature_kernels(4.0 * K * u);
        double S = 2.0 * kr.F, Sp = 8.0 * K * kr.Fp, Spp = 32.0 * K * K * kr.Fpp;
        double T = 4.0 * K * kr.G, Tp = 16.0 * K * K * kr.Gp,
               Tpp = 64.0 * K * K * K * kr.Gpp;
        Mat2 xx = x * x.transpose();
        d.g = S * Mat2::Identity() + T * xx;
        for (int k = 0; k < 2; ++k) {
          Mat2 sym = Mat2::Zero();
          for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
              sym(i, j) = (i == k ? x[j] : 0.0) + (j == k ? x[i] : 0.0);
            }
          }
          d.dg[k] = 2.0 * x[k] * Sp * Mat2::Identity() + 2.0 * x[k] * Tp * xx +
                    T * sym;
        }
        if (order < 2) return d;
        for (int l = 0; l < 2; ++l) {
          for (int k = 0; k < 2; ++k) {
            Mat2 out;
            for (int i = 0; i < 2; ++i) {
              for (int j = 0; j < 2; ++j) {
                double dkl = (k == l) ? 1.0 : 0.0;
                double sym_k = (i == k ? x[j] : 0.0) + (j == k ? x[i] : 0.0);
                double sym_l = (i == l ? x[j] : 0.0) + (j == l ? x[i] : 0.0);
                double dd = (i == k && j == l ? 1.0 : 0.0) +
                            (j == k && i == l ? 1.0 : 0.0);
                out(i, j) = (2.0 * dkl * Sp + 4.0 * x[k] * x[l] * Spp) *
                                ((i == j) ? 1.0 : 0.0) +
                            (2.0 * dkl * Tp + 4.0 * x[k] * x[l] * Tpp) * x[i] * x[j] +
                            2.0 * x[k] * Tp * sym_l + 2.0 * x[l] * Tp * sym_k +
                            T * dd;
              }
            }
            d.d2g[l][k] = out;
          }
        }
        return d;
      }
      case MetricFamily::tabulated: {
        std::array<Mat2, 2> dg;
        std::array<std::array<Mat2, 2>, 2> d2g;
        d.g = table_eval_(x, &dg, order >= 2 ? &d2g : nullptr);
        d.dg = dg;
        if (order >= 2) d.d2g = d2g;
        return d;
      }
    }
    return d;
  }

  Vec2 phi_gradient_(const Vec2& x) const {
    if (impl_->phi.gradient) return impl_->phi.gradient(x);
    const double h = 1e-4;
    Vec2 gp;
    for (int k = 0; k < 2; ++k) {
      Vec2 e = Vec2::Zero();
      e[k] = 1.0;
      gp[k] = (-impl_->phi.value(x + 2 * h * e) + 8 * impl_->phi.value(x + h * e) -
               8 * impl_->phi.value(x - h * e) + impl_->phi.value(x - 2 * h * e)) /
              (12 * h);
    }
    return gp;
  }

  Mat2 phi_hessian_(const Vec2& x) const {
    if (impl_->phi.hessian) return impl_->phi.hessian(x);
    const double h = 1e-4;
    Mat2 hp;
    for (int k = 0; k < 2; ++k) {
      Vec2 e = Vec2::Zero();
      e[k] = 1.0;
      Vec2 gp = phi_gradient_(x + h * e), gm = phi_gradient_(x - h * e);
      for (int l = 0; l < 2; ++l) hp(l, k) = (gp[l] - gm[l]) / (2 * h);
    }
    return 0.5 * (hp + hp.transpose());
  }

  // Tabulated evaluation; optionally fills first and second derivatives.
  Mat2 table_eval_(const Vec2& x_in,
                   std::array<Mat2, 2>* dg,
                   std::array<std::array<Mat2, 2>, 2>* d2g) const {
    const TabulatedMetric& t = *impl_->table;
    Vec2 x = x_in;
    bool projected = false;
    Mat2 proj = Mat2::Identity();
    if (t.disc_only) {
      double r = x.norm();
      if (r > 1.0) {
        // Constant extension along rays beyond the circle; the chain rule
        // factor below keeps first derivatives consistent with it.
        Vec2 xh = x / r;
        proj = (Mat2::Identity() - xh * xh.transpose()) / r;
        x = xh;
        projected = true;
      }
    }
    double h = t.h(), inv_h = 1.0 / h;
    auto sx = detail::stencil_1d((x.x() + t.extent) * inv_h, t.n, inv_h);
    auto sy = detail::stencil_1d((x.y() + t.extent) * inv_h, t.n, inv_h);

    auto gather = [&](const std::vector<double>& comp, double& v, Vec2& d1,
                      Mat2& d2) {
      v = 0.0;
      d1.setZero();
      d2.setZero();
      for (int jy = 0; jy < 5; ++jy) {
        for (int jx = 0; jx < 5; ++jx) {
          double f = comp[t.idx(sx.base + jx, sy.base + jy)];
          v += f * sx.w[jx] * sy.w[jy];
          d1[0] += f * sx.dw[jx] * sy.w[jy];
          d1[1] += f * sx.w[jx] * sy.dw[jy];
          d2(0, 0) += f * sx.d2w[jx] * sy.w[jy];
          d2(1, 1) += f * sx.w[jx] * sy.d2w[jy];
          d2(0, 1) += f * sx.dw[jx] * sy.dw[jy];
        }
      }
      d2(1, 0) = d2(0, 1);
    };

    double v11, v12, v22;
    Vec2 g11_d1, g12_d1, g22_d1;
    Mat2 g11_d2, g12_d2, g22_d2;
    gather(t.g11, v11, g11_d1, g11_d2);
    gather(t.g12, v12, g12_d1, g12_d2);
    gather(t.g22, v22, g22_d1, g22_d2);

    Mat2 g;
    g << v11, v12, v12, v22;
    if (dg) {
      for (int k = 0; k < 2; ++k) {
        Mat2 m;
        m << g11_d1[k], g12_d1[k], g12_d1[k], g22_d1[k];
        (*dg)[k] = m;
      }
      if (projected) {
        // d/dx^i g(P(x)) = dP^k/dx^i * (dg/dx^k at P).
        std::array<Mat2, 2> chain = {Mat2::Zero(), Mat2::Zero()};
        for (int i = 0; i < 2; ++i)
          for (int k = 0; k < 2; ++k) chain[i] += proj(k, i) * (*dg)[k];
        *dg = chain;
      }
    }
    if (d2g) {
      for (int l = 0; l < 2; ++l) {
        for (int k = 0; k < 2; ++k) {
          Mat2 m;
          m << g11_d2(l, k), g12_d2(l, k), g12_d2(l, k), g22_d2(l, k);
          (*d2g)[l][k] = m;
        }
      }
      if (projected) {
        // Second derivatives in the ray-extension region keep only the
        // projected-sandwich term; curvature queries there are approximate,
        // consistent with the lowered smoothness of disc-only tables.
        std::array<std::array<Mat2, 2>, 2> chain;
        for (int l = 0; l < 2; ++l) {
          for (int k = 0; k < 2; ++k) {
            Mat2 acc = Mat2::Zero();
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                acc += proj(a, l) * proj(b, k) * (*d2g)[a][b];
            chain[l][k] = acc;
          }
        }
        *d2g = chain;
      }
    }
    return g;
  }
};

// --- tabulated CSV interchange ----------------------------------------------

// Column layout: x, y, g11, g12, g22; one row per grid node, x fastest. The
// grid must be square and uniform.
inline void write_tabulated_csv(const TabulatedMetric& t, std::ostream& os) {
  os << "x,y,g11,g12,g22\n";
  double h = t.h();
  for (int j = 0; j < t.n; ++j) {
    for (int i = 0; i < t.n; ++i) {
      double x = -t.extent + i * h, y = -t.extent + j * h;
      std::size_t id = t.idx(i, j);
      os << format_double(x) << ',' << format_double(y) << ','
         << format_double(t.g11[id]) << ',' << format_double(t.g12[id]) << ','
         << format_double(t.g22[id]) << '\n';
    }
  }
}

inline TabulatedMetric read_tabulated_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line))
    throw std::invalid_argument("tabulated csv: empty stream");
  std::vector<std::array<double, 5>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::array<double, 5> r{};
    std::istringstream ls(line);
    std::string cell;
    for (int c = 0; c < 5; ++c) {
      if (!std::getline(ls, cell, ','))
        throw std::invalid_argument("tabulated csv: short row");
      r[c] = std::stod(cell);
    }
    rows.push_back(r);
  }
  std::size_t n2 = rows.size();
  int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n2))));
  if (static_cast<std::size_t>(n) * n != n2 || n < 7)
    throw std::invalid_argument("tabulated csv: node count is not a square grid");
  TabulatedMetric t;
  t.n = n;
  t.extent = rows.back()[0];
  t.g11.resize(n2);
  t.g12.resize(n2);
  t.g22.resize(n2);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const auto& r = rows[static_cast<std::size_t>(j) * n + i];
      t.g11[t.idx(i, j)] = r[2];
      t.g12[t.idx(i, j)] = r[3];
      t.g22[t.idx(i, j)] = r[4];
    }
  }
  t.disc_only = t.extent < 1.05;
  return t;
}

inline MetricChart load_tabulated_chart(const std::string& path,
                                        double margin = 0.1) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("tabulated csv: cannot open " + path);
  return MetricChart::tabulated(read_tabulated_csv(is), margin);
}

}  // namespace lenslab

#endif  // LENSLAB_METRIC_HPP
