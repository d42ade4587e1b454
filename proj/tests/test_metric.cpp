#include <catch2/catch_amalgamated.hpp>

#include "lenslab/metric.hpp"

using namespace lenslab;

namespace {

// Fourth-order central differences of the metric itself; the independent
// oracle for every analytic derivative path.
Mat2 fd_dg(const MetricChart& c, const Vec2& x, int k, double h = 1e-4) {
  Vec2 e = Vec2::Zero();
  e[k] = 1.0;
  return (-c.metric(x + 2 * h * e) + 8.0 * c.metric(x + h * e) -
          8.0 * c.metric(x - h * e) + c.metric(x - 2 * h * e)) /
         (12.0 * h);
}

std::vector<Vec2> probe_points() {
  return {Vec2(0.0, 0.0),   Vec2(0.3, 0.1),  Vec2(-0.52, 0.44),
          Vec2(0.11, -0.7), Vec2(-0.6, -0.6), Vec2(0.83, 0.12),
          Vec2(0.0, 0.97),  Vec2(-0.99, 0.0)};
}

std::vector<MetricChart> chart_zoo() {
  std::vector<MetricChart> zoo;
  zoo.push_back(MetricChart::euclidean());
  zoo.push_back(MetricChart::conformal(conformal_bump(0.2)));
  zoo.push_back(MetricChart::conformal(conformal_bump(-0.15, 0.1)));
  zoo.push_back(MetricChart::sphere());
  zoo.push_back(MetricChart::polar_normal(1.0));
  zoo.push_back(MetricChart::polar_normal(-1.3));
  zoo.push_back(MetricChart::polar_normal(2.5));
  return zoo;
}

}  // namespace

TEST_CASE("analytic metric derivatives match finite differences") {
  for (const auto& chart : chart_zoo()) {
    for (const auto& x : probe_points()) {
      MetricDerivs d = chart.derivs(x);
      for (int k = 0; k < 2; ++k) {
        Mat2 fd = fd_dg(chart, x, k);
        double scale = std::max(1.0, d.g.norm());
        REQUIRE((d.dg[k] - fd).norm() / scale < 1e-6);
      }
    }
  }
}

TEST_CASE("second derivatives match finite differences of first") {
  for (const auto& chart : chart_zoo()) {
    for (const auto& x : probe_points()) {
      MetricDerivs d = chart.derivs(x);
      const double h = 1e-4;
      for (int l = 0; l < 2; ++l) {
        Vec2 e = Vec2::Zero();
        e[l] = 1.0;
        MetricDerivs dp = chart.derivs(x + h * e);
        MetricDerivs dm = chart.derivs(x - h * e);
        for (int k = 0; k < 2; ++k) {
          Mat2 fd = (dp.dg[k] - dm.dg[k]) / (2.0 * h);
          REQUIRE((d.d2g[l][k] - fd).norm() < 2e-5);
        }
      }
    }
  }
}

TEST_CASE("christoffel symbols: symmetry and flat-chart vanishing") {
  auto flat = MetricChart::euclidean();
  for (const auto& x : probe_points()) {
    auto gamma = flat.christoffel(x);
    REQUIRE(gamma[0].norm() == 0.0);
    REQUIRE(gamma[1].norm() == 0.0);
  }
  for (const auto& chart : chart_zoo()) {
    for (const auto& x : probe_points()) {
      auto gamma = chart.christoffel(x);
      for (int k = 0; k < 2; ++k) {
        REQUIRE(std::abs(gamma[k](0, 1) - gamma[k](1, 0)) < 1e-14);
      }
    }
  }
}

TEST_CASE("christoffel symbols against the conformal closed form") {
  // For g = e^{2 phi} delta: Gamma^k_ij = d_i phi delta^k_j + d_j phi delta^k_i
  //                                        - delta_ij d^k phi.
  double a = 0.2;
  auto chart = MetricChart::conformal(conformal_bump(a));
  for (const auto& x : probe_points()) {
    Vec2 gp = -2.0 * a * x;
    auto gamma = chart.christoffel(x);
    for (int k = 0; k < 2; ++k) {
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          double want = (i == k ? gp[j] : 0.0) + (j == k ? gp[i] : 0.0) -
                        (i == j ? gp[k] : 0.0);
          REQUIRE(gamma[k](i, j) == Catch::Approx(want).margin(1e-12));
        }
      }
    }
  }
}

TEST_CASE("gauss curvature oracles") {
  auto flat = MetricChart::euclidean();
  auto sph = MetricChart::sphere();
  double a = 0.2;
  auto bump = MetricChart::conformal(conformal_bump(a));
  for (const auto& x : probe_points()) {
    REQUIRE(std::abs(flat.gauss_curvature(x)) < 1e-13);
    REQUIRE(sph.gauss_curvature(x) == Catch::Approx(1.0).epsilon(1e-9));
    // K = -e^{-2 phi} Laplacian(phi) with Laplacian(phi) = -4a.
    double phi = a * (1.0 - x.squaredNorm());
    double want = 4.0 * a * std::exp(-2.0 * phi);
    REQUIRE(bump.gauss_curvature(x) == Catch::Approx(want).epsilon(1e-9));
  }
  for (double K : {1.0, -1.3, 2.5, 0.0}) {
    auto chart = MetricChart::polar_normal(K);
    for (const auto& x : probe_points()) {
      REQUIRE(chart.gauss_curvature(x) == Catch::Approx(K).margin(1e-8));
    }
  }
}

TEST_CASE("constant-curvature chart has unit radial speed") {
  // In geodesic polar form the radial direction is unit for every curvature:
  // x^T g x = |x|^2 exactly.
  for (double K : {1.0, -1.3, 2.5, 7.0, -6.0}) {
    auto chart = MetricChart::polar_normal(K);
    for (const auto& x : probe_points()) {
      if (x.norm() < 1e-12) continue;
      Vec2 xh = x.normalized();
      REQUIRE(chart.inner(x, xh, xh) == Catch::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("curvature kernels are smooth across the series/direct switch") {
  // a = 4 K |x|^2 crosses 0.5 at |x| = sqrt(0.5 / (4K)); metric entries from
  // the two evaluation branches must agree through the switch.
  double K = 2.0;
  auto chart = MetricChart::polar_normal(K);
  double r_switch = std::sqrt(0.5 / (4.0 * K));
  for (double dr : {-1e-7, -1e-9, 1e-9, 1e-7}) {
    Vec2 xa((r_switch + dr), 0.0), xb(0.0, r_switch + dr);
    REQUIRE(chart.metric(xa)(1, 1) == Catch::Approx(chart.metric(xb)(0, 0)).epsilon(1e-12));
    REQUIRE(chart.gauss_curvature(xa) == Catch::Approx(K).margin(1e-8));
  }
}

TEST_CASE("boundary length oracles") {
  REQUIRE(MetricChart::euclidean().boundary_length() ==
          Catch::Approx(2.0 * kPi).epsilon(1e-12));
  // Boundary circle of the hemisphere chart is a unit-speed great circle.
  REQUIRE(MetricChart::sphere().boundary_length() ==
          Catch::Approx(2.0 * kPi).epsilon(1e-10));
  // Conformal offset scales the boundary speed by e^b.
  double b = 0.1;
  REQUIRE(MetricChart::conformal(conformal_bump(0.3, b)).boundary_length() ==
          Catch::Approx(2.0 * kPi * std::exp(b)).epsilon(1e-10));
  // Geodesic circle of radius 1 in constant curvature K.
  for (double K : {1.0, 2.5}) {
    REQUIRE(MetricChart::polar_normal(K).boundary_length() ==
            Catch::Approx(2.0 * kPi * std::sin(std::sqrt(K)) / std::sqrt(K))
                .epsilon(1e-10));
  }
  REQUIRE(MetricChart::polar_normal(-1.0).boundary_length() ==
          Catch::Approx(2.0 * kPi * std::sinh(1.0)).epsilon(1e-10));
}

TEST_CASE("arc length and angle conversions invert each other") {
  for (const auto& chart : chart_zoo()) {
    double L = chart.boundary_length();
    for (int i = 0; i < 37; ++i) {
      double theta = 2.0 * kPi * i / 37.0;
      double s = chart.arclength_from_theta(theta);
      REQUIRE(s >= -1e-12);
      REQUIRE(s <= L + 1e-12);
      REQUIRE(chart.theta_from_arclength(s) == Catch::Approx(theta).margin(1e-10));
    }
    // Monotone in theta.
    double prev = -1.0;
    for (int i = 0; i < 200; ++i) {
      double s = chart.arclength_from_theta(2.0 * kPi * i / 200.0);
      REQUIRE(s > prev);
      prev = s;
    }
  }
}

TEST_CASE("boundary frames are g-orthonormal and inward") {
  for (const auto& chart : chart_zoo()) {
    double L = chart.boundary_length();
    for (int i = 0; i < 29; ++i) {
      auto fr = chart.boundary_frame(L * i / 29.0);
      REQUIRE(std::abs(fr.x.norm() - 1.0) < 1e-12);
      REQUIRE(chart.inner(fr.x, fr.t, fr.t) == Catch::Approx(1.0).epsilon(1e-10));
      REQUIRE(chart.inner(fr.x, fr.nu, fr.nu) == Catch::Approx(1.0).epsilon(1e-10));
      REQUIRE(std::abs(chart.inner(fr.x, fr.t, fr.nu)) < 1e-10);
      // Inward means pointing into the disc in the Euclidean sense too.
      REQUIRE(fr.nu.dot(-fr.x) > 0.0);
    }
  }
}

TEST_CASE("boundary frames pin to known flat values") {
  auto flat = MetricChart::euclidean();
  auto at_theta = [&](double theta) {
    return flat.boundary_frame(flat.arclength_from_theta(theta));
  };
  auto f0 = at_theta(0.0);
  REQUIRE((f0.x - Vec2(1, 0)).norm() < 1e-12);
  REQUIRE((f0.t - Vec2(0, 1)).norm() < 1e-10);
  REQUIRE((f0.nu - Vec2(-1, 0)).norm() < 1e-10);
  auto f1 = at_theta(1.5 * kPi);
  REQUIRE((f1.x - Vec2(0, -1)).norm() < 1e-12);
  REQUIRE((f1.t - Vec2(1, 0)).norm() < 1e-10);
  REQUIRE((f1.nu - Vec2(0, 1)).norm() < 1e-10);
}

TEST_CASE("tabulated chart reproduces its source metric") {
  auto src = MetricChart::conformal(conformal_bump(0.25));
  auto tab = MetricChart::tabulate_chart(src, 257);
  REQUIRE(tab.family() == MetricFamily::tabulated);
  for (const auto& x : probe_points()) {
    MetricDerivs a = src.derivs(x), b = tab.derivs(x);
    REQUIRE((a.g - b.g).norm() < 1e-8);
    REQUIRE((a.dg[0] - b.dg[0]).norm() < 1e-6);
    REQUIRE((a.dg[1] - b.dg[1]).norm() < 1e-6);
    REQUIRE(tab.gauss_curvature(x) ==
            Catch::Approx(src.gauss_curvature(x)).margin(2e-4));
  }
}

TEST_CASE("tabulated csv round trip is bit exact") {
  auto src = MetricChart::sphere();
  auto tab = MetricChart::tabulate_chart(src, 33);
  std::ostringstream os;
  write_tabulated_csv(*tab.table(), os);
  std::istringstream is(os.str());
  TabulatedMetric back = read_tabulated_csv(is);
  REQUIRE(back.n == tab.table()->n);
  REQUIRE(back.extent == tab.table()->extent);
  REQUIRE(back.g11 == tab.table()->g11);
  REQUIRE(back.g12 == tab.table()->g12);
  REQUIRE(back.g22 == tab.table()->g22);
}

TEST_CASE("disc-only tables extend constantly along rays") {
  auto src = MetricChart::sphere();
  TabulatedMetric t;
  t.n = 201;
  t.extent = 1.0;
  t.disc_only = true;
  t.g11.resize(201 * 201);
  t.g12.resize(201 * 201);
  t.g22.resize(201 * 201);
  double h = t.h();
  for (int j = 0; j < t.n; ++j) {
    for (int i = 0; i < t.n; ++i) {
      Vec2 x(-1.0 + i * h, -1.0 + j * h);
      // Sample the source through the same ray projection used at evaluation
      // time so the table is smooth across the grid even at the corners.
      Vec2 xs = x.norm() > 1.0 ? Vec2(x / x.norm()) : x;
      Mat2 g = src.metric(xs);
      t.g11[t.idx(i, j)] = g(0, 0);
      t.g12[t.idx(i, j)] = g(0, 1);
      t.g22[t.idx(i, j)] = g(1, 1);
    }
  }
  auto chart = MetricChart::tabulated(std::move(t), 0.05);
  Vec2 on(0.6, 0.8);         // on the circle
  Vec2 out = 1.04 * on;      // outside, same ray
  REQUIRE((chart.metric(out) - chart.metric(on)).norm() < 1e-9);
  REQUIRE((chart.metric(on) - src.metric(on)).norm() < 1e-9);
}

TEST_CASE("domain checks and validation") {
  auto flat = MetricChart::euclidean(0.1);
  REQUIRE_THROWS_AS(flat.metric(Vec2(1.2, 0.0)), std::domain_error);
  REQUIRE_NOTHROW(flat.metric(Vec2(1.05, 0.0)));
  REQUIRE_THROWS_AS(MetricChart::polar_normal(9.0), std::invalid_argument);
  REQUIRE_NOTHROW(MetricChart::polar_normal(7.0));
  // A profile that is undefined on part of the chart must be rejected by the
  // construction-time positivity scan.
  ConformalProfile bad;
  bad.value = [](const Vec2& x) { return std::log(x.norm() - 0.4); };
  bad.tag = "degenerate";
  REQUIRE_THROWS(MetricChart::conformal(bad));
}

TEST_CASE("fingerprints distinguish charts and are stable") {
  auto a1 = MetricChart::conformal(conformal_bump(0.2));
  auto a2 = MetricChart::conformal(conformal_bump(0.2));
  auto b = MetricChart::conformal(conformal_bump(0.3));
  REQUIRE(a1.fingerprint() == a2.fingerprint());
  REQUIRE(a1.fingerprint() != b.fingerprint());
  REQUIRE(a1.fingerprint() != MetricChart::euclidean().fingerprint());
}
