#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "lenslab/tensor.hpp"

using namespace lenslab;

namespace {

SymTensorField axpy(const SymTensorField& a, double s, const SymTensorField& b) {
  SymTensorField out(a.grid);
  for (std::size_t k = 0; k < out.f11.size(); ++k) {
    out.f11[k] = a.f11[k] + s * b.f11[k];
    out.f12[k] = a.f12[k] + s * b.f12[k];
    out.f22[k] = a.f22[k] + s * b.f22[k];
  }
  return out;
}

double max_component(const VectorFieldGrid& v) {
  double m = 0.0;
  for (std::size_t k = 0; k < v.v1.size(); ++k)
    m = std::max({m, std::abs(v.v1[k]), std::abs(v.v2[k])});
  return m;
}

}  // namespace

TEST_CASE("quadrature measures the disc") {
  auto grid = make_tensor_grid(65);
  MetricChart flat = MetricChart::euclidean();
  TensorCalculus calc(flat, grid);

  SymTensorField id = sample_tensor(
      grid, [](const Vec2&) { return 1.0; }, [](const Vec2&) { return 0.0; },
      [](const Vec2&) { return 1.0; });
  // <delta, delta> = 2 pointwise, so the pairing integrates to twice the
  // disc area.
  CHECK(calc.l2_inner(id, id) == Catch::Approx(2.0 * kPi).epsilon(2e-4));

  SymTensorField left = sample_tensor(
      grid, [](const Vec2& p) { return p.x() < -0.2 ? 1.0 : 0.0; },
      [](const Vec2&) { return 0.0; }, [](const Vec2&) { return 0.0; });
  SymTensorField right = sample_tensor(
      grid, [](const Vec2&) { return 0.0; }, [](const Vec2&) { return 0.0; },
      [](const Vec2& p) { return p.x() > 0.2 ? 1.0 : 0.0; });
  CHECK(calc.l2_inner(left, right) == 0.0);
}

TEST_CASE("pairings converge under refinement") {
  auto a11 = [](const Vec2& p) { return std::sin(2 * p.x()) + 0.4 * p.y(); };
  auto a12 = [](const Vec2& p) { return std::cos(p.x() + p.y()); };
  auto a22 = [](const Vec2& p) { return 0.5 * p.x() * p.y() - 0.3; };
  auto b11 = [](const Vec2& p) { return std::exp(0.3 * p.x()) - 1.0; };
  auto b12 = [](const Vec2& p) { return p.y() * p.y() - 0.2 * p.x(); };
  auto b22 = [](const Vec2& p) { return std::sin(p.x() * p.y()) + 0.7; };
  MetricChart chart = MetricChart::conformal(conformal_bump(0.25, 0.05));

  auto pairing = [&](int n) {
    auto g = make_tensor_grid(n);
    TensorCalculus calc(chart, g);
    return calc.l2_inner(sample_tensor(g, a11, a12, a22),
                         sample_tensor(g, b11, b12, b22));
  };
  CHECK(pairing(65) == Catch::Approx(pairing(193)).epsilon(1e-3));
}

TEST_CASE("symmetric differential on flat linear fields") {
  auto grid = make_tensor_grid(65);
  MetricChart flat = MetricChart::euclidean();
  TensorCalculus calc(flat, grid);

  SymTensorField dv = calc.sym_differential(sample_vector(
      grid, [](const Vec2& p) { return p.x(); },
      [](const Vec2& p) { return p.y(); }));
  SymTensorField drot = calc.sym_differential(sample_vector(
      grid, [](const Vec2& p) { return -p.y(); },
      [](const Vec2& p) { return p.x(); }));
  for (int j = 0; j < grid->n; ++j)
    for (int i = 0; i < grid->n; ++i) {
      int id = grid->idx(i, j);
      if (!grid->mask[id]) continue;
      CHECK(dv.f11[id] == Catch::Approx(1.0).margin(1e-12));
      CHECK(dv.f12[id] == Catch::Approx(0.0).margin(1e-12));
      CHECK(dv.f22[id] == Catch::Approx(1.0).margin(1e-12));
      // the rotation is a Killing field of the flat metric
      CHECK(drot.f11[id] == Catch::Approx(0.0).margin(1e-12));
      CHECK(drot.f12[id] == Catch::Approx(0.0).margin(1e-12));
      CHECK(drot.f22[id] == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("christoffel correction on a conformal chart") {
  double a = 0.3, b = 0.1;
  auto grid = make_tensor_grid(65);
  MetricChart chart = MetricChart::conformal(conformal_bump(a, b));
  TensorCalculus calc(chart, grid);

  // For the 1-form v = (-y, x) the flat symmetric part vanishes, leaving
  // [dv]_ij = -Gamma^k_ij v_k; with phi = a (1 - r^2) + b this evaluates to
  // dv11 = -4axy, dv12 = 2a (x^2 - y^2), dv22 = 4axy.
  SymTensorField dv = calc.sym_differential(sample_vector(
      grid, [](const Vec2& p) { return -p.y(); },
      [](const Vec2& p) { return p.x(); }));

  std::pair<int, int> probes[] = {{32, 32}, {20, 45}, {49, 27}, {32, 8}, {12, 32}};
  for (auto [i, j] : probes) {
    int id = grid->idx(i, j);
    REQUIRE(grid->mask[id]);
    double x = grid->x(i), y = grid->y(j);
    CHECK(dv.f11[id] == Catch::Approx(-4 * a * x * y).margin(1e-12));
    CHECK(dv.f12[id] == Catch::Approx(2 * a * (x * x - y * y)).margin(1e-12));
    CHECK(dv.f22[id] == Catch::Approx(4 * a * x * y).margin(1e-12));
  }
}

TEST_CASE("divergence oracles on the flat chart") {
  auto grid = make_tensor_grid(65);
  MetricChart flat = MetricChart::euclidean();
  TensorCalculus calc(flat, grid);

  SECTION("constant tensor") {
    SymTensorField id = sample_tensor(
        grid, [](const Vec2&) { return 1.0; }, [](const Vec2&) { return 0.0; },
        [](const Vec2&) { return 1.0; });
    CHECK(max_component(calc.divergence(id)) < 1e-12);
  }

  SECTION("Saint-Venant tensor of a quartic potential") {
    // h = x^2 y^2 + x^3 - 2 y^3 + x y; f = (h_yy, -h_xy, h_xx)
    SymTensorField f = sample_tensor(
        grid, [](const Vec2& p) { return 2.0 * p.x() * p.x(); },
        [](const Vec2& p) { return -(4.0 * p.x() * p.y() + 1.0); },
        [](const Vec2& p) { return 2.0 * p.y() * p.y() + 6.0 * p.x(); });
    CHECK(max_component(calc.divergence(f)) < 1e-11);
  }

  SECTION("Saint-Venant tensor of a trigonometric potential") {
    // h = sin x cos y
    SymTensorField f = sample_tensor(
        grid,
        [](const Vec2& p) { return -std::sin(p.x()) * std::cos(p.y()); },
        [](const Vec2& p) { return std::cos(p.x()) * std::sin(p.y()); },
        [](const Vec2& p) { return -std::sin(p.x()) * std::cos(p.y()); });
    CHECK(max_component(calc.divergence(f)) < 1e-6);
  }
}

TEST_CASE("divergence of a differential matches the analytic operator") {
  auto grid = make_tensor_grid(65);
  MetricChart flat = MetricChart::euclidean();
  TensorCalculus calc(flat, grid);

  // v = (x^2 y^2, x^4 - y^4): delta dv = (2y^2 + x^2, 2xy + 6x^2 - 12y^2).
  VectorFieldGrid v = sample_vector(
      grid, [](const Vec2& p) { return sqr(p.x() * p.y()); },
      [](const Vec2& p) { return std::pow(p.x(), 4) - std::pow(p.y(), 4); });
  VectorFieldGrid ddv = calc.divergence(calc.sym_differential(v));
  double worst = 0.0;
  for (int j = 0; j < grid->n; ++j)
    for (int i = 0; i < grid->n; ++i) {
      int id = grid->idx(i, j);
      if (!grid->mask[id]) continue;
      double x = grid->x(i), y = grid->y(j);
      worst = std::max(worst, std::abs(ddv.v1[id] - (2 * y * y + x * x)));
      worst = std::max(
          worst, std::abs(ddv.v2[id] - (2 * x * y + 6 * x * x - 12 * y * y)));
    }
  CHECK(worst < 1e-10);
}

TEST_CASE("differential and divergence are formally adjoint") {
  auto grid = make_tensor_grid(65);
  MetricChart chart = MetricChart::conformal(conformal_bump(0.3, 0.1));
  TensorCalculus calc(chart, grid);

  VectorFieldGrid v = sample_vector(
      grid,
      [](const Vec2& p) {
        return sqr(1.0 - p.squaredNorm()) * std::sin(1.0 + p.x() + 2.0 * p.y());
      },
      [](const Vec2& p) {
        return sqr(1.0 - p.squaredNorm()) * std::cos(2.0 * p.x() - p.y());
      },
      true);
  SymTensorField f = sample_tensor(
      grid,
      [](const Vec2& p) {
        return sqr(std::max(0.0, 0.7225 - p.squaredNorm())) *
               std::cos(3.0 * p.x());
      },
      [](const Vec2& p) {
        return sqr(std::max(0.0, 0.7225 - p.squaredNorm())) *
               std::sin(2.0 * p.y() - 0.3);
      },
      [](const Vec2& p) {
        return sqr(std::max(0.0, 0.7225 - p.squaredNorm())) * (p.x() - p.y());
      });

  double resid = calc.l2_inner(calc.sym_differential(v), f) +
                 calc.l2_inner(v, calc.divergence(f));
  CHECK(std::abs(resid) <= 1e-5 * calc.l2_norm(v) * calc.l2_norm(f));
}

TEST_CASE("decompose recovers a potential input") {
  auto grid = make_tensor_grid(65);
  MetricChart chart = MetricChart::conformal(conformal_bump(0.3, 0.1));
  TensorCalculus calc(chart, grid);

  VectorFieldGrid v0 = sample_vector(
      grid, [](const Vec2& p) { return 1.0 - p.squaredNorm(); },
      [](const Vec2&) { return 0.0; }, true);
  SymTensorField f = calc.sym_differential(v0);
  Decomposition dec = calc.decompose(f);

  CHECK(dec.v.dirichlet);
  CHECK(calc.l2_norm(dec.fs) <= 1e-6 * calc.l2_norm(f));
  VectorFieldGrid diff(grid, true);
  for (std::size_t k = 0; k < diff.v1.size(); ++k) {
    diff.v1[k] = dec.v.v1[k] - v0.v1[k];
    diff.v2[k] = dec.v.v2[k] - v0.v2[k];
  }
  CHECK(calc.l2_norm(diff) <= 1e-6 * calc.l2_norm(v0));
  CHECK(dec.report.div_fs_interior < 1e-6);
  CHECK(dec.report.cg_iterations > 0);
}

TEST_CASE("saint-venant inputs pass through the decomposition") {
  auto grid = make_tensor_grid(65);
  MetricChart flat = MetricChart::euclidean();
  TensorCalculus calc(flat, grid);

  // h = (1 - r^2)^3: the Saint-Venant tensor is polynomial (so its discrete
  // divergence vanishes to rounding) and vanishes on the circle (so the
  // mask-edge layer stays quiet).
  auto u = [](const Vec2& p) { return 1.0 - p.squaredNorm(); };
  SymTensorField f = sample_tensor(
      grid,
      [&](const Vec2& p) { return -6 * sqr(u(p)) + 24 * sqr(p.y()) * u(p); },
      [&](const Vec2& p) { return -24 * p.x() * p.y() * u(p); },
      [&](const Vec2& p) { return -6 * sqr(u(p)) + 24 * sqr(p.x()) * u(p); });

  CHECK(max_component(calc.divergence(f)) < 1e-11);

  Decomposition dec = calc.decompose(f);
  double fn = calc.l2_norm(f);
  CHECK(calc.l2_norm(dec.v) <= 1e-3 * fn);
  CHECK(calc.l2_norm(axpy(dec.fs, -1.0, f)) <= 5e-2 * fn);
}

TEST_CASE("decompositions are orthogonal, exact and linear") {
  auto grid = make_tensor_grid(65);
  MetricChart flat = MetricChart::euclidean();
  TensorCalculus calc(flat, grid);

  SymTensorField f = sample_tensor(
      grid, [](const Vec2& p) { return std::sin(2 * p.x()) + 0.3; },
      [](const Vec2& p) { return p.x() * p.y(); },
      [](const Vec2& p) { return std::cos(p.y()) - 0.2 * p.x(); });
  SymTensorField g = sample_tensor(
      grid, [](const Vec2& p) { return p.y() - 0.1; },
      [](const Vec2& p) { return std::cos(p.x() + 0.5 * p.y()); },
      [](const Vec2& p) { return 0.4 * p.x() * p.x(); });

  Decomposition df = calc.decompose(f);
  Decomposition dg = calc.decompose(g);
  double fn = calc.l2_norm(f);

  SECTION("reassembly and discrete orthogonality") {
    SymTensorField dv = calc.sym_differential(df.v);
    SymTensorField sum = axpy(df.fs, 1.0, dv);
    double worst = 0.0;
    for (std::size_t k = 0; k < sum.f11.size(); ++k) {
      worst = std::max(worst, std::abs(sum.f11[k] - f.f11[k]));
      worst = std::max(worst, std::abs(sum.f12[k] - f.f12[k]));
      worst = std::max(worst, std::abs(sum.f22[k] - f.f22[k]));
    }
    CHECK(worst < 1e-12);
    CHECK(std::abs(calc.l2_inner(df.fs, dv)) <= 1e-10 * fn * fn);
  }

  SECTION("projection idempotence") {
    Decomposition dd = calc.decompose(df.fs);
    CHECK(calc.l2_norm(dd.v) <= 1e-8 * fn);
    CHECK(calc.l2_norm(axpy(dd.fs, -1.0, df.fs)) <= 1e-8 * fn);
  }

  SECTION("linearity") {
    Decomposition dc = calc.decompose(axpy(f, -0.7, g));
    SymTensorField expect = axpy(df.fs, -0.7, dg.fs);
    CHECK(calc.l2_norm(axpy(dc.fs, -1.0, expect)) <=
          1e-8 * (calc.l2_norm(f) + calc.l2_norm(g)));
  }
}

TEST_CASE("tensor and vector csv round trip bit for bit") {
  auto grid = make_tensor_grid(33);
  SymTensorField f = sample_tensor(
      grid, [](const Vec2& p) { return std::sin(p.x()) / 3.0; },
      [](const Vec2& p) { return p.x() * p.y() / 7.0; },
      [](const Vec2& p) { return std::exp(p.y()) / 11.0; });
  std::ostringstream os;
  write_tensor_csv(os, f);
  std::istringstream is(os.str());
  SymTensorField f2 = read_tensor_csv(is);
  REQUIRE(f2.grid->n == grid->n);
  REQUIRE(f2.grid->extent == grid->extent);
  for (std::size_t k = 0; k < f.f11.size(); ++k) {
    CHECK(f.f11[k] == f2.f11[k]);
    CHECK(f.f12[k] == f2.f12[k]);
    CHECK(f.f22[k] == f2.f22[k]);
  }

  VectorFieldGrid v = sample_vector(
      grid, [](const Vec2& p) { return p.x() / 3.0; },
      [](const Vec2& p) { return std::cos(p.y()) / 9.0; }, true);
  std::ostringstream vs;
  write_vector_csv(vs, v);
  std::istringstream vis(vs.str());
  VectorFieldGrid v2 = read_vector_csv(vis);
  CHECK(v2.dirichlet);
  for (std::size_t k = 0; k < v.v1.size(); ++k) {
    CHECK(v.v1[k] == v2.v1[k]);
    CHECK(v.v2[k] == v2.v2[k]);
  }
}

TEST_CASE("grid plumbing guards") {
  auto grid = make_tensor_grid(65);
  auto other = make_tensor_grid(33);
  MetricChart flat = MetricChart::euclidean();
  TensorCalculus calc(flat, grid);

  CHECK_THROWS_AS(calc.sym_differential(VectorFieldGrid(other)),
                  std::invalid_argument);
  CHECK_THROWS_AS(calc.l2_inner(SymTensorField(grid), SymTensorField(other)),
                  std::invalid_argument);

  // Dirichlet projection zeroes the one-cell boundary ring.
  VectorFieldGrid v = sample_vector(
      grid, [](const Vec2&) { return 1.0; }, [](const Vec2&) { return 1.0; });
  v.project_dirichlet();
  double hh = grid->h();
  for (int j = 0; j < grid->n; ++j)
    for (int i = 0; i < grid->n; ++i) {
      int id = grid->idx(i, j);
      double r = std::hypot(grid->x(i), grid->y(j));
      if (r > 1.0 - hh + 1e-12) {
        CHECK(v.v1[id] == 0.0);
        CHECK(v.v2[id] == 0.0);
      } else {
        CHECK(v.v1[id] == 1.0);
      }
    }

  // cells assigned to nodes tile the disc
  double area = 0.0;
  for (int id = 0; id < grid->n * grid->n; ++id)
    area += grid->weight[id] * hh * hh;
  CHECK(area == Catch::Approx(kPi).epsilon(2e-4));
}
