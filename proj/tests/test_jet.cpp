#include <catch2/catch_amalgamated.hpp>

#include "lenslab/jet.hpp"

using namespace lenslab;

namespace {

JetRecovery make_recovery(const MetricChart& chart) {
  return JetRecovery(GeodesicFlow(chart));
}

}  // namespace

TEST_CASE("flat disc patches follow the chord formula") {
  MetricChart chart = MetricChart::euclidean();
  JetRecovery jr = make_recovery(chart);

  double eps = 0.04;
  TravelTimePatch patch = jr.build_patch(0.3, eps);

  // The tilted probe leaves the unit circle after a turning angle 2 atan eps.
  double beta = 2.0 * std::atan(eps);
  CHECK(patch.beta == Catch::Approx(beta).margin(1e-8));
  REQUIRE(patch.pts.size() == static_cast<std::size_t>(
                                  jr.options().patch_points));

  // Chord length between boundary angles theta_y and theta0 + u.
  for (const auto& p : patch.pts) {
    CHECK(p.tau ==
          Catch::Approx(2.0 * std::sin(0.5 * (patch.beta - p.u))).margin(1e-8));
    CHECK(p.mu_out < 0.0);
  }
  for (std::size_t i = 1; i < patch.pts.size(); ++i)
    CHECK(patch.pts[i - 1].u < patch.pts[i].u);

  CHECK(jr.order0(patch) ==
        Catch::Approx(sqr(std::cos(0.5 * patch.beta))).margin(1e-7));
  CHECK(patch_consistency_residual(patch, chart) < 2e-7);
}

TEST_CASE("flat disc jet: unit metric, normal slope minus two") {
  MetricChart chart = MetricChart::euclidean();
  BoundaryJet jet = make_recovery(chart).recover(0.3);

  CHECK(jet.g11 == Catch::Approx(1.0).margin(2e-5));
  CHECK(jet.dn_g11 == Catch::Approx(-2.0).margin(1e-4));
  // On the flat disc the normal-derivative chain is closed form, so every
  // rung of the ladder should already sit on the answer.
  for (double v : jet.diag.dn_ginv_eps)
    CHECK(v == Catch::Approx(2.0).margin(1.5e-3));
}

TEST_CASE("conformal bump boundary jet") {
  MetricChart chart = MetricChart::conformal(conformal_bump(0.15, 0.0));
  BoundaryJet jet = make_recovery(chart).recover(1.1);

  // g = e^{2 phi} delta with phi = a (1 - r^2): the boundary value is
  // Euclidean and d_n g_11 = 4 a - 2.
  CHECK(jet.g11 == Catch::Approx(1.0).margin(2e-5));
  CHECK(jet.dn_g11 == Catch::Approx(-1.4).margin(1e-4));
}

TEST_CASE("conformal offset rescales the boundary jet") {
  MetricChart chart = MetricChart::conformal(conformal_bump(0.15, 0.1));
  BoundaryJet jet = make_recovery(chart).recover(0.5);

  // phi = a (1 - r^2) + b: g_11 = e^{2b} and d_n g_11 = e^b (4a - 2).
  CHECK(jet.g11 == Catch::Approx(std::exp(0.2)).margin(1e-4));
  CHECK(jet.dn_g11 == Catch::Approx(-1.4 * std::exp(0.1)).margin(1e-4));
}

TEST_CASE("spherical cap of curvature one") {
  MetricChart chart = MetricChart::conformal(stereographic_sphere(0.5));
  BoundaryJet jet = make_recovery(chart).recover(2.0);

  // Scaled stereographic profile: g_11 = (2 l / (1 + l^2))^2 on the boundary
  // and d_n g_11 = -4 l (1 - l^2) / (1 + l^2)^2.
  CHECK(jet.g11 == Catch::Approx(0.64).margin(2e-5));
  CHECK(jet.dn_g11 == Catch::Approx(-0.96).margin(1e-4));
}

TEST_CASE("polar normal chart of curvature one") {
  MetricChart chart = MetricChart::polar_normal(1.0);
  BoundaryJet jet = make_recovery(chart).recover(-0.7);

  // dr^2 + (sin^2(sqrt K r) / K) dtheta^2 with x^n = 1 - r.
  CHECK(jet.g11 == Catch::Approx(sqr(std::sin(1.0))).margin(2e-5));
  CHECK(jet.dn_g11 == Catch::Approx(-std::sin(2.0)).margin(1e-4));
}

TEST_CASE("hemisphere boundary defeats the patch construction") {
  // At lambda = 1 the boundary circle is a great circle, hence totally
  // geodesic: the tilted probe exits at the antipode no matter the tilt, and
  // no travel-time patch forms near the anchor. This must fail loudly rather
  // than return numbers.
  MetricChart chart = MetricChart::sphere();
  JetRecovery jr = make_recovery(chart);
  REQUIRE_THROWS_AS(jr.build_patch(0.0, 0.04), solver_error);
}

TEST_CASE("patch travel times integrate the exit directions") {
  MetricChart chart = MetricChart::conformal(conformal_bump(0.3, 0.0));
  JetRecovery jr = make_recovery(chart);
  TravelTimePatch patch = jr.build_patch(-1.2, 0.06);
  CHECK(patch_consistency_residual(patch, chart) < 2e-6);
}

TEST_CASE("rotational symmetry makes the jet anchor independent") {
  MetricChart chart = MetricChart::conformal(conformal_bump(0.3, 0.0));
  JetRecovery jr = make_recovery(chart);
  BoundaryJet a = jr.recover(-1.2);
  BoundaryJet b = jr.recover(2.4);

  CHECK(a.g11 == Catch::Approx(b.g11).margin(1e-8));
  CHECK(a.dn_g11 == Catch::Approx(b.dn_g11).margin(1e-8));
  CHECK(a.dn_g11 == Catch::Approx(0.3 * 4 - 2.0).margin(2e-4));
}
