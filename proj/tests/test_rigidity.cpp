#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lenslab/rigidity.hpp"

using namespace lenslab;

namespace {

const Vec2 kDir(0.3, -0.1);

BoundaryFixingDiffeo bump_family(double eps) {
  return BoundaryFixingDiffeo::radial_bump(kDir, eps);
}

ApertureSpec wide_aperture() {
  ApertureSpec ap;
  ap.mu_one = 0.96;
  ap.mu_zero = 0.995;
  return ap;
}

ForwardSystem small_system(const GeodesicFlow& flow) {
  AssembleOptions ao;
  ao.aperture = wide_aperture();
  LensGrid lg;
  lg.s_count = 20;
  lg.mu_count = 16;
  return assemble(flow, lg, make_tensor_grid(17), ao);
}

}  // namespace

TEST_CASE("offset maps fix the boundary and obey the amplitude bound") {
  BoundaryFixingDiffeo psi = bump_family(0.05);

  for (int k = 0; k < 64; ++k) {
    double a = 2.0 * std::acos(-1.0) * k / 64.0;
    Vec2 x(std::cos(a), std::sin(a));
    CHECK(psi.w(x).norm() <= 1e-14);
    CHECK((psi.map(x) - x).norm() <= 1e-14);
  }

  // Jacobian closure against centered differences of the map itself.
  const double fd = 1e-6;
  for (Vec2 x : {Vec2(0.3, -0.5), Vec2(-0.7, 0.1), Vec2(0.0, 0.9)}) {
    Mat2 J = psi.jacobian(x);
    for (int i = 0; i < 2; ++i) {
      Vec2 dx = Vec2::Zero();
      dx[i] = fd;
      Vec2 col = (psi.map(x + dx) - psi.map(x - dx)) / (2.0 * fd);
      CHECK((col - J.col(i)).norm() <= 1e-9);
    }
  }

  // The rank-one family flips its Jacobian near eps = 1.14; just below the
  // flip the determinant is still positive on the check grid.
  double dmin = detail::min_jacobian_det(bump_family(1.0), 1.1);
  CHECK(dmin > 0.11);
  CHECK(dmin < 0.13);
  MetricChart euclid = MetricChart::euclidean();
  CHECK_THROWS_AS(pullback_metric(euclid, bump_family(1.2), 33), diffeo_error);

  BoundaryFixingDiffeo moving;
  moving.w = [](const Vec2& x) { return Vec2(0.1 * x); };
  moving.dw = [](const Vec2&) { return Mat2(0.1 * Mat2::Identity()); };
  moving.eps = 0.05;
  CHECK_THROWS_AS(pullback_metric(euclid, moving, 33), std::invalid_argument);
}

TEST_CASE("zero-amplitude pullback reproduces the base metric") {
  MetricChart euclid = MetricChart::euclidean();
  MetricChart ghat = pullback_metric(euclid, bump_family(0.0), 65);
  const TabulatedMetric* t = ghat.table();
  REQUIRE(t != nullptr);
  double node_err = 0.0;
  for (std::size_t k = 0; k < t->g11.size(); ++k) {
    node_err = std::max(node_err, std::abs(t->g11[k] - 1.0));
    node_err = std::max(node_err, std::abs(t->g12[k]));
    node_err = std::max(node_err, std::abs(t->g22[k] - 1.0));
  }
  CHECK(node_err == 0.0);

  double interp_err = 0.0;
  for (int k = 0; k < 100; ++k) {
    double a = 6.283185307179586 * k / 100.0;
    Vec2 x(0.7 * std::cos(3 * a), 0.7 * std::sin(2 * a));
    interp_err = std::max(interp_err, (ghat.metric(x) - Mat2::Identity()).norm());
  }
  CHECK(interp_err <= 1e-12);
}

TEST_CASE("pullback keeps the tangential boundary block and bends the rest") {
  MetricChart euclid = MetricChart::euclidean();
  BoundaryFixingDiffeo psi = bump_family(0.05);
  double tangential = 0.0, full = 0.0, det_min = inf();
  for (int k = 0; k < 128; ++k) {
    double a = 6.283185307179586 * k / 128.0;
    Vec2 x(std::cos(a), std::sin(a)), t(-std::sin(a), std::cos(a));
    Mat2 gh = pullback_matrix(euclid, psi, x);
    tangential = std::max(tangential, std::abs(t.dot(gh * t) - 1.0));
    full = std::max(full, (gh - Mat2::Identity()).norm());
    det_min = std::min(det_min, gh.determinant());
  }
  // On the circle the map is the identity and its Jacobian preserves the
  // tangent direction, so the tangential block survives exactly. The mixed
  // and normal components pick up order-eps corrections from the normal
  // stretch, so the matrix as a whole does not stay euclidean.
  CHECK(tangential <= 1e-13);
  CHECK(full > 0.05);
  CHECK(full < 0.08);
  CHECK(det_min > 0.0);

  // Positive definiteness holds across the whole sampled square.
  MetricChart tab = pullback_metric(euclid, psi, 65);
  const TabulatedMetric* t = tab.table();
  double interior_det = inf();
  for (std::size_t k = 0; k < t->g11.size(); ++k)
    interior_det =
        std::min(interior_det, t->g11[k] * t->g22[k] - t->g12[k] * t->g12[k]);
  CHECK(interior_det > 0.0);
}

TEST_CASE("linearized pullback matches the covariant differential") {
  MetricChart euclid = MetricChart::euclidean();
  const double eps = 0.05;
  BoundaryFixingDiffeo psi = bump_family(eps);

  // Flat chart: closed forms. 2 dv = eps (W + W^T) with W = -2 a x^T, and
  // the remainder is exactly eps^2 W^T W = 4 eps^2 |a|^2 x x^T.
  for (Vec2 x : {Vec2(0.4, 0.2), Vec2(-0.6, 0.5), Vec2(0.1, -0.8)}) {
    Mat2 lin = linear_gauge_part(euclid, psi, x);
    Mat2 expect;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        expect(i, j) = -2.0 * eps * (kDir[i] * x[j] + kDir[j] * x[i]);
    CHECK((lin - expect).norm() <= 1e-14);

    Mat2 rem = pullback_matrix(euclid, psi, x) - euclid.metric(x) - lin;
    Mat2 quad = 4.0 * eps * eps * kDir.squaredNorm() * x * x.transpose();
    CHECK((rem - quad).norm() <= 1e-14);
  }

  // Curved chart: centered differences of the pullback in eps are an
  // independent oracle for the covariant formula.
  MetricChart curved = MetricChart::conformal(conformal_bump(0.15));
  const double de = 1e-5;
  for (Vec2 x : {Vec2(0.4, 0.2), Vec2(-0.3, -0.6)}) {
    Mat2 fd = (pullback_matrix(curved, bump_family(de), x) -
               pullback_matrix(curved, bump_family(-de), x)) /
              (2.0 * de);
    Mat2 lin = linear_gauge_part(curved, bump_family(1.0), x);
    CHECK((fd - lin).norm() <= 1e-8);
  }
}

TEST_CASE("linearization ladder separates linear and quadratic scales") {
  MetricChart euclid = MetricChart::euclidean();
  SlopeReport rep = linearization_split(euclid, bump_family(0.0));
  REQUIRE(rep.eps.size() == 4);

  // The flat family is exactly quadratic, so the fitted slopes are the
  // ideal ones to rounding and the remainder divided by eps^2 is constant.
  CHECK(rep.remainder_slope == Catch::Approx(2.0).margin(1e-6));
  CHECK(rep.linear_slope == Catch::Approx(1.0).margin(1e-6));
  for (std::size_t k = 0; k < rep.eps.size(); ++k) {
    double ratio = rep.remainder[k] / (rep.eps[k] * rep.eps[k]);
    CHECK(ratio > 0.40);
    CHECK(ratio < 0.42);
  }
  CHECK(rep.remainder[0] > 2.5e-3);
  CHECK(rep.remainder[0] < 2.75e-3);
  CHECK(rep.linear_part[0] > 0.10);
  CHECK(rep.linear_part[0] < 0.12);

  MetricChart curved = MetricChart::conformal(conformal_bump(0.15));
  SlopeReport rc = linearization_split(curved, bump_family(0.0));
  CHECK(rc.remainder_slope > 1.95);
  CHECK(rc.remainder_slope < 2.05);
  CHECK(rc.linear_slope == Catch::Approx(1.0).margin(1e-3));
  CHECK(rc.remainder[0] > 2.8e-3);
  CHECK(rc.remainder[0] < 3.0e-3);

  CHECK_THROWS_AS(linearization_split(euclid, bump_family(0.0), {0.08, 0.04, 0.02}),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      linearization_split(euclid, bump_family(0.0), {0.08, 0.04, 0.02, 0.0}),
      std::invalid_argument);
}

TEST_CASE("ray integrals of the gauge perturbation fall quadratically") {
  MetricChart euclid = MetricChart::euclidean();
  GeodesicFlow flow(euclid);
  ForwardSystem sys = small_system(flow);
  RayRemainderReport rep = xray_gauge_remainder(flow, sys, bump_family(0.0));
  REQUIRE(rep.path_count == static_cast<int>(sys.entries.size()));
  REQUIRE(rep.eps.size() == 4);

  CHECK(rep.slope == Catch::Approx(2.0).margin(1e-3));
  for (std::size_t k = 0; k + 1 < rep.eps.size(); ++k) {
    double drop = rep.max_integral[k] / rep.max_integral[k + 1];
    CHECK(drop > 3.9);
    CHECK(drop < 4.1);
  }
  CHECK(rep.max_integral.back() > 2e-5);
  CHECK(rep.max_integral.back() < 3.5e-5);

  // The linear part is potential with a boundary-vanishing generator, so its
  // ray integrals sit at quadrature noise for every amplitude.
  for (double p : rep.max_potential) CHECK(p <= 1e-10);

  CHECK_THROWS_AS(
      xray_gauge_remainder(flow, sys, bump_family(0.0), {0.1, 0.2, -0.1, 0.3}),
      std::invalid_argument);
}

TEST_CASE("path energy reproduces squared length") {
  MetricChart euclid = MetricChart::euclidean();
  GeodesicFlow flow(euclid);
  FlowOptions fo;
  fo.store_every = 2;

  auto [x0, xi0] = enter_state(euclid, BallPoint{0.0, 0.0});
  RayPath diameter = flow.shoot(x0, xi0, fo);
  CHECK(energy(euclid, diameter) == Catch::Approx(4.0).margin(1e-9));

  auto [x1, xi1] = enter_state(euclid, BallPoint{2.3, 0.6});
  RayPath chord = flow.shoot(x1, xi1, fo);
  CHECK(energy(euclid, chord) ==
        Catch::Approx(chord.length * chord.length).margin(1e-9));
}

TEST_CASE("blend energies satisfy the first-variation identity") {
  MetricChart euclid = MetricChart::euclidean();
  BallPoint bp{1.1, 0.35};
  EnergyTaylorReport rep = energy_taylor(euclid, bump_family(0.05), bp);

  // Shared-entry shot in the pullback chart: lens data coincide, so the
  // energy and exit of the tau = 1 geodesic agree with the base ray.
  CHECK(std::abs(rep.endpoint_gap) <= 1e-9);
  CHECK(rep.exit_mismatch <= 1e-9);

  // First variation from the ray integral against the Taylor assembly of
  // the measured family: E(1) - E(0) - E'(0) = integral of (1 - tau) E''.
  CHECK(rep.e_prime0 > 0.9e-3);
  CHECK(rep.e_prime0 < 1.15e-3);
  CHECK(std::abs(rep.lhs - rep.rhs) <= 0.01 * std::abs(rep.rhs));
  // With matching endpoints the identity collapses to E'(0) = -integral.
  CHECK(std::abs(rep.lhs + rep.e_prime0) <= 1e-9);
  CHECK(std::abs(rep.e_prime0 + rep.rhs) <= 0.01 * rep.e_prime0);

  // The aimed family bulges above the endpoint energies in the middle.
  REQUIRE(rep.e.size() == 5);
  CHECK(rep.e[2] - rep.e[0] > 2e-4);
  CHECK(rep.e[2] - rep.e[0] < 3e-4);
  CHECK(rep.length0 == Catch::Approx(std::sqrt(rep.e[0])).epsilon(1e-9));

  MetricChart curved = MetricChart::conformal(conformal_bump(0.15));
  EnergyTaylorReport rc = energy_taylor(curved, bump_family(0.05), bp);
  CHECK(std::abs(rc.endpoint_gap) <= 1e-9);
  CHECK(std::abs(rc.lhs - rc.rhs) <= 0.01 * std::abs(rc.rhs));

  EnergyTaylorOptions bad;
  bad.tau_count = 4;
  CHECK_THROWS_AS(energy_taylor(euclid, bump_family(0.05), bp, bad),
                  std::invalid_argument);
}

TEST_CASE("lens records survive the gauge change") {
  MetricChart euclid = MetricChart::euclidean();
  BoundaryFixingDiffeo psi = bump_family(0.05);

  // Flat base: the pullback components are quadratic polynomials, which the
  // table interpolates exactly, so the two datasets agree to integrator
  // determinism.
  MetricChart ghat = pullback_metric(euclid, psi, 257);
  GeodesicFlow fa(euclid), fb(ghat);
  LensGrid grid;
  LensGaugeReport rep = lens_gauge_deviation(fa, fb, grid);
  CHECK(rep.compared == 1024);
  CHECK(rep.status_mismatch == 0);
  CHECK(rep.max_s <= 1e-9);
  CHECK(rep.max_mu <= 1e-9);
  CHECK(rep.max_length <= 1e-9);

  // Jittered nodes reuse the same seed on both sides, so the comparison
  // stays record-wise.
  LensGrid small;
  small.s_count = 12;
  small.mu_count = 8;
  JitterOptions jit;
  jit.seed = 5;
  jit.eps = 0.3;
  LensGaugeReport rj = lens_gauge_deviation(fa, fb, small, {}, jit);
  CHECK(rj.compared == 96);
  CHECK(rj.max_s <= 1e-9);

  // Curved base: interpolation error is real but still far below the
  // gauge-invariance budget.
  MetricChart curved = MetricChart::conformal(conformal_bump(0.15));
  MetricChart chat = pullback_metric(curved, psi, 129);
  GeodesicFlow fc(curved), fd(chat);
  LensGaugeReport rc = lens_gauge_deviation(fc, fd, small);
  CHECK(rc.max_s > 1e-12);
  CHECK(rc.max_s <= 1e-7);
  CHECK(rc.max_mu <= 1e-7);
  CHECK(rc.max_length <= 1e-7);
}
