#ifndef LENSLAB_XRAY_HPP
#define LENSLAB_XRAY_HPP

// Geodesic ray transform of symmetric 2-tensors: single-path Simpson
// integrals, the assembled sparse forward map over lens-data rays with
// smooth aperture cutoffs, the weighted normal operator, singular-value
// diagnostics on the solenoidal subspace, and Tikhonov-regularized
// inversion. Forward systems round-trip through a little-endian binary
// container (LLFS1) so expensive assemblies can be cached.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lenslab/common.hpp"
#include "lenslab/lens.hpp"
#include "lenslab/tensor.hpp"

namespace lenslab {

// --- path quadrature ---------------------------------------------------------

// Composite Simpson weights over the stored samples of a traced ray. Pairs
// of equal steps take the 1-4-1 rule; leftovers (the refined exit step, or a
// lone odd interval) fall back to the trapezoid, whose local error on a
// single integrator step is far below every tolerance in this module.
inline std::vector<double> path_quadrature(const std::vector<RaySample>& s) {
  std::vector<double> w(s.size(), 0.0);
  std::size_t i = 0;
  while (i + 1 < s.size()) {
    double d1 = s[i + 1].t - s[i].t;
    if (i + 2 < s.size()) {
      double d2 = s[i + 2].t - s[i + 1].t;
      if (std::abs(d2 - d1) <= 1e-9 * std::max(d1, d2)) {
        double c = d1 / 3.0;
        w[i] += c;
        w[i + 1] += 4.0 * c;
        w[i + 2] += c;
        i += 2;
        continue;
      }
    }
    w[i] += 0.5 * d1;
    w[i + 1] += 0.5 * d1;
    i += 1;
  }
  return w;
}

namespace detail {

struct CellWeights {
  int node[4];
  double w[4];
};

// Corner nodes and weights of the grid cell containing p.
inline CellWeights bilinear_cell(const TensorGrid& g, const Vec2& p) {
  double fx = (p.x() + g.extent) / g.h();
  double fy = (p.y() + g.extent) / g.h();
  int i = std::clamp(static_cast<int>(std::floor(fx)), 0, g.n - 2);
  int j = std::clamp(static_cast<int>(std::floor(fy)), 0, g.n - 2);
  double ax = std::clamp(fx - i, 0.0, 1.0);
  double ay = std::clamp(fy - j, 0.0, 1.0);
  CellWeights c;
  c.node[0] = g.idx(i, j);
  c.node[1] = g.idx(i + 1, j);
  c.node[2] = g.idx(i, j + 1);
  c.node[3] = g.idx(i + 1, j + 1);
  c.w[0] = (1.0 - ax) * (1.0 - ay);
  c.w[1] = ax * (1.0 - ay);
  c.w[2] = (1.0 - ax) * ay;
  c.w[3] = ax * ay;
  return c;
}

inline void require_integrable(const RayPath& path) {
  if (path.status != RayStatus::exited)
    throw solver_error(std::string("ray transform: path status is ") +
                       status_name(path.status) +
                       " and the integral is undefined");
  if (path.samples.size() < 2)
    throw std::invalid_argument(
        "ray transform: path has no stored samples; trace with store_every > "
        "0");
}

}  // namespace detail

// I f = integral of f_ij xi^i xi^j along the ray, with f interpolated
// bilinearly from its grid. Off the masked disc the field is zero by the
// extension convention, so the integrand fades within the last cell at the
// boundary.
inline double xray(const SymTensorField& f, const RayPath& path) {
  detail::require_integrable(path);
  const TensorGrid& G = *f.grid;
  std::vector<double> qw = path_quadrature(path.samples);
  double acc = 0.0;
  for (std::size_t k = 0; k < path.samples.size(); ++k) {
    const RaySample& smp = path.samples[k];
    detail::CellWeights c = detail::bilinear_cell(G, smp.x);
    double f11 = 0.0, f12 = 0.0, f22 = 0.0;
    for (int m = 0; m < 4; ++m) {
      f11 += c.w[m] * f.f11[c.node[m]];
      f12 += c.w[m] * f.f12[c.node[m]];
      f22 += c.w[m] * f.f22[c.node[m]];
    }
    const Vec2& xi = smp.xi;
    acc += qw[k] * (f11 * xi.x() * xi.x() + 2.0 * f12 * xi.x() * xi.y() +
                    f22 * xi.y() * xi.y());
  }
  return acc;
}

// Same integral with the tensor evaluated exactly at the sample points; F
// maps a chart point to the covariant components of a symmetric tensor.
template <class F>
double xray_eval(F&& f, const RayPath& path) {
  detail::require_integrable(path);
  std::vector<double> qw = path_quadrature(path.samples);
  double acc = 0.0;
  for (std::size_t k = 0; k < path.samples.size(); ++k) {
    const RaySample& smp = path.samples[k];
    Mat2 m = f(smp.x);
    acc += qw[k] * smp.xi.dot(m * smp.xi);
  }
  return acc;
}

// --- aperture cutoffs ----------------------------------------------------------

// Quintic smoothstep; unlike the cubic one it has vanishing second
// derivatives at both ends, so cutoffs built from it are C^2.
inline double smoothstep_c2(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

// Smooth cutoff on the (s, mu) data space: 1 on the inner region, 0 outside
// the supported one. The mu window always rolls off toward the tangential
// ends; setting mu_lo_zero > 0 additionally carves out the nearly-normal
// band, leaving near-tangential data only. The optional s window restricts
// to a boundary arc.
struct ApertureSpec {
  double mu_one = 0.9;      // |mu| <= mu_one: tangential rolloff not started
  double mu_zero = 0.995;   // |mu| >= mu_zero: cutoff reached zero
  double mu_lo_zero = 0.0;  // |mu| <= mu_lo_zero: zero (0 disables)
  double mu_lo_one = 0.0;   // |mu| >= mu_lo_one: inner rolloff finished
  bool s_window = false;
  double s_center = 0.0;  // arc-length center of the window
  double s_half = 0.0;    // half width of the flat part
  double s_taper = 0.0;   // extra width over which the cutoff decays

  void validate() const {
    if (!(mu_zero > mu_one) || !(mu_one > 0.0) || !(mu_zero <= 1.0))
      throw std::invalid_argument("aperture: need 0 < mu_one < mu_zero <= 1");
    if (mu_lo_zero > 0.0 && !(mu_lo_one > mu_lo_zero && mu_lo_one < mu_one))
      throw std::invalid_argument(
          "aperture: need mu_lo_zero < mu_lo_one < mu_one for a band cutoff");
    if (s_window && !(s_taper > 0.0 && s_half >= 0.0))
      throw std::invalid_argument("aperture: s window needs a positive taper");
  }
};

inline double aperture_alpha(const ApertureSpec& ap, double boundary_length,
                             const BallPoint& bp) {
  double m = std::abs(bp.mu);
  double a = smoothstep_c2((ap.mu_zero - m) / (ap.mu_zero - ap.mu_one));
  if (ap.mu_lo_zero > 0.0)
    a *= smoothstep_c2((m - ap.mu_lo_zero) / (ap.mu_lo_one - ap.mu_lo_zero));
  if (ap.s_window) {
    double d = std::abs(periodic_diff(bp.s, ap.s_center, boundary_length));
    a *= smoothstep_c2((ap.s_half + ap.s_taper - d) / ap.s_taper);
  }
  return a;
}

// --- assembled forward map -----------------------------------------------------

// One candidate data ray: its boundary coordinates and the measure of the
// data cell it represents.
struct PathSpec {
  BallPoint bp;
  double cell = 0.0;
};

// The discrete transform. Columns follow the component-major tensor layout
// (f11 plane, f12 plane, f22 plane; the f12 column weights carry the factor
// two of the symmetric contraction). Rows are scaled by their cutoff value,
// so A applied to grid values of the metric reproduces alpha * length.
struct ForwardSystem {
  GridPtr grid;
  std::uint64_t metric_fingerprint = 0;
  std::vector<BallPoint> entries;
  std::vector<double> alpha;   // cutoff per row, already folded into A
  std::vector<double> weight;  // data-cell measure times |<nu, xi>|
  std::vector<double> length;  // geodesic length per row
  Eigen::SparseMatrix<double, Eigen::RowMajor> A;

  int rows() const { return static_cast<int>(entries.size()); }
  int cols() const { return 3 * grid->n * grid->n; }
};

struct AssembleOptions {
  ApertureSpec aperture;
  FlowOptions flow;
  int store_every = 4;  // quadrature step, in integrator steps
  double alpha_min = 1e-12;
};

inline ForwardSystem assemble_paths(const GeodesicFlow& flow,
                                    const std::vector<PathSpec>& specs,
                                    const GridPtr& grid,
                                    const AssembleOptions& opt = {}) {
  opt.aperture.validate();
  const MetricChart& chart = flow.chart();
  double L = chart.boundary_length();

  struct Row {
    BallPoint bp;
    double alpha = 0.0, cell = 0.0;
  };
  std::vector<Row> rows;
  for (const PathSpec& spec : specs) {
    double a = aperture_alpha(opt.aperture, L, spec.bp);
    if (a > opt.alpha_min && std::abs(spec.bp.mu) < 1.0 - 1e-12)
      rows.push_back({spec.bp, a, spec.cell});
  }
  if (rows.empty())
    throw config_error("assemble: the aperture cut every path from the system");

  ForwardSystem sys;
  sys.grid = grid;
  sys.metric_fingerprint = chart.fingerprint();
  sys.entries.resize(rows.size());
  sys.alpha.resize(rows.size());
  sys.weight.resize(rows.size());
  sys.length.resize(rows.size());

  FlowOptions fo = opt.flow;
  fo.stop_at_boundary = true;
  fo.store_every = std::max(1, opt.store_every);

  int nn = grid->n * grid->n;
  std::vector<std::vector<std::pair<int, double>>> merged(rows.size());
  std::vector<std::string> errors(rows.size());

  parallel_for(rows.size(), [&](std::size_t r) {
    try {
      const Row& row = rows[r];
      auto [x0, xi0] = enter_state(chart, row.bp);
      RayPath path = flow.shoot(x0, xi0, fo);
      if (path.status != RayStatus::exited) {
        std::ostringstream msg;
        msg << "assemble: ray s=" << row.bp.s << " mu=" << row.bp.mu
            << " ended " << status_name(path.status)
            << "; pick an aperture that avoids it";
        throw solver_error(msg.str());
      }
      std::vector<double> qw = path_quadrature(path.samples);
      std::vector<std::pair<int, double>> acc;
      acc.reserve(path.samples.size() * 12);
      for (std::size_t k = 0; k < path.samples.size(); ++k) {
        const RaySample& smp = path.samples[k];
        detail::CellWeights c = detail::bilinear_cell(*grid, smp.x);
        double q[3] = {smp.xi.x() * smp.xi.x(),
                       2.0 * smp.xi.x() * smp.xi.y(),
                       smp.xi.y() * smp.xi.y()};
        double wk = row.alpha * qw[k];
        for (int m = 0; m < 4; ++m)
          for (int comp = 0; comp < 3; ++comp)
            acc.emplace_back(comp * nn + c.node[m], wk * c.w[m] * q[comp]);
      }
      std::sort(acc.begin(), acc.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<std::pair<int, double>>& out = merged[r];
      for (const auto& [col, val] : acc) {
        if (!out.empty() && out.back().first == col)
          out.back().second += val;
        else
          out.emplace_back(col, val);
      }
      sys.entries[r] = row.bp;
      sys.alpha[r] = row.alpha;
      sys.weight[r] =
          row.cell * std::sqrt(std::max(0.0, 1.0 - sqr(row.bp.mu)));
      sys.length[r] = path.length;
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  });
  for (const std::string& e : errors)
    if (!e.empty()) throw solver_error(e);

  std::vector<Eigen::Triplet<double>> trip;
  std::size_t total = 0;
  for (const auto& row : merged) total += row.size();
  trip.reserve(total);
  for (std::size_t r = 0; r < merged.size(); ++r)
    for (const auto& [col, val] : merged[r])
      trip.emplace_back(static_cast<int>(r), col, val);
  sys.A.resize(static_cast<int>(rows.size()), 3 * nn);
  sys.A.setFromTriplets(trip.begin(), trip.end());
  sys.A.makeCompressed();
  return sys;
}

// Cell-weighted ball points of a lens grid; trapezoid half cells at the mu
// ends keep the data measure consistent with the closed interval sampling.
inline std::vector<PathSpec> lens_grid_paths(const LensGrid& g,
                                             double boundary_length) {
  std::vector<PathSpec> specs;
  specs.reserve(static_cast<std::size_t>(g.s_count) * g.mu_count);
  double ds = boundary_length / g.s_count;
  double dmu = g.mu_count > 1 ? (g.mu_max - g.mu_min) / (g.mu_count - 1)
                              : (g.mu_max - g.mu_min);
  for (int i = 0; i < g.s_count; ++i)
    for (int j = 0; j < g.mu_count; ++j) {
      double edge = (g.mu_count > 1 && (j == 0 || j == g.mu_count - 1)) ? 0.5
                                                                        : 1.0;
      specs.push_back(
          {grid_node(g, boundary_length, i, j), ds * dmu * edge});
    }
  return specs;
}

inline ForwardSystem assemble(const GeodesicFlow& flow, const LensGrid& lens,
                              const GridPtr& grid,
                              const AssembleOptions& opt = {}) {
  return assemble_paths(flow, lens_grid_paths(lens, flow.chart().boundary_length()),
                        grid, opt);
}

// --- exterior hypersurface parametrization -------------------------------------

// Rays launched from a circle outside the disc, aimed inward across a fan of
// coordinate angles. Each ray flies freely to its first crossing of the
// boundary circle; the crossing is reported in the same (s, mu) coordinates
// the boundary grid uses, so both parametrizations label the same geodesics.
struct GammaSpec {
  double radius = 1.05;
  int point_count = 32;
  int aim_count = 9;
  double aim_span = 0.85;     // fraction of the tangency half-angle asin(1/R)
  double trace_length = 4.0;  // free-flight budget to reach the disc
};

// Boundary coordinates where the ray from (z, dir) first enters the disc, or
// nothing if it misses, grazes, or leaves the chart first.
inline std::optional<BallPoint> gamma_entry(const GeodesicFlow& flow,
                                            const Vec2& z, const Vec2& dir,
                                            double trace_length = 4.0) {
  FlowOptions fo;
  fo.stop_at_boundary = false;
  fo.fixed_length = trace_length;
  fo.store_every = 1;
  RayPath path = flow.shoot(z, dir, fo);
  std::size_t k = 0;
  while (k < path.samples.size() && path.samples[k].x.squaredNorm() >= 1.0)
    ++k;
  if (k == 0 || k == path.samples.size()) return std::nullopt;

  // Bisect the crossing inside the bracketing step by short free flights
  // from the last outside sample.
  const RaySample& a = path.samples[k - 1];
  double lo = 0.0, hi = path.samples[k].t - a.t;
  for (int it = 0; it < 60 && hi - lo > 1e-13; ++it) {
    double mid = 0.5 * (lo + hi);
    FlowOptions fm = fo;
    fm.fixed_length = mid;
    RayPath seg = flow.shoot(a.x, a.xi, fm);
    (seg.end.x.squaredNorm() < 1.0 ? hi : lo) = mid;
  }
  FlowOptions fm = fo;
  fm.fixed_length = 0.5 * (lo + hi);
  RayPath seg = flow.shoot(a.x, a.xi, fm);
  BallPoint bp = exit_ballpoint(flow.chart(), seg.end.x, seg.end.xi);
  if (1.0 - sqr(bp.mu) < 1e-6) return std::nullopt;  // tangential graze
  return bp;
}

inline std::vector<PathSpec> gamma_paths(const GeodesicFlow& flow,
                                         const GammaSpec& gs) {
  const MetricChart& chart = flow.chart();
  if (gs.radius <= 1.0 + 1e-9 ||
      gs.radius >= 1.0 + chart.margin() - 1e-9)
    throw std::invalid_argument(
        "gamma paths: hypersurface radius must sit between the disc and the "
        "chart edge");
  if (gs.point_count < 1 || gs.aim_count < 1)
    throw std::invalid_argument("gamma paths: empty launch fan");

  double half = std::asin(1.0 / gs.radius) * gs.aim_span;
  double dz = 2.0 * kPi * gs.radius / gs.point_count;
  double db = gs.aim_count > 1 ? 2.0 * half / (gs.aim_count - 1) : 2.0 * half;
  std::vector<PathSpec> specs;
  for (int p = 0; p < gs.point_count; ++p) {
    double a = 2.0 * kPi * p / gs.point_count;
    Vec2 z(gs.radius * std::cos(a), gs.radius * std::sin(a));
    for (int q = 0; q < gs.aim_count; ++q) {
      double b = gs.aim_count == 1
                     ? 0.0
                     : -half + 2.0 * half * q / (gs.aim_count - 1.0);
      double ang = a + kPi + b;
      Vec2 dir(std::cos(ang), std::sin(ang));
      std::optional<BallPoint> bp =
          gamma_entry(flow, z, dir, gs.trace_length);
      if (bp) specs.push_back({*bp, dz * db});
    }
  }
  if (specs.empty())
    throw solver_error("gamma paths: no launched ray entered the disc");
  return specs;
}

inline ForwardSystem assemble_gamma(const GeodesicFlow& flow,
                                    const GammaSpec& gs, const GridPtr& grid,
                                    const AssembleOptions& opt = {}) {
  return assemble_paths(flow, gamma_paths(flow, gs), grid, opt);
}

// --- row identity ---------------------------------------------------------------

// Stacked grid values of the chart metric over the full square; contracting
// the forward matrix against this vector must reproduce alpha * length row
// by row, up to interpolation error.
inline Eigen::VectorXd metric_grid_vector(const MetricChart& chart,
                                          const TensorGrid& g) {
  int nn = g.n * g.n;
  Eigen::VectorXd out(3 * nn);
  for (int id = 0; id < nn; ++id) {
    Vec2 p(g.x(id % g.n), g.y(id / g.n));
    Mat2 gm = chart.metric_clamped(p);
    out[id] = gm(0, 0);
    out[nn + id] = gm(0, 1);
    out[2 * nn + id] = gm(1, 1);
  }
  return out;
}

inline double max_row_identity_error(const ForwardSystem& sys,
                                     const MetricChart& chart) {
  Eigen::VectorXd Ag = sys.A * metric_grid_vector(chart, *sys.grid);
  double worst = 0.0;
  for (int r = 0; r < sys.rows(); ++r)
    worst = std::max(worst,
                     std::abs(Ag[r] - sys.alpha[r] * sys.length[r]));
  return worst;
}

// --- normal operator -------------------------------------------------------------

// N f = A^T W A f with W the per-path data measure.
inline Eigen::VectorXd apply_normal(const ForwardSystem& sys,
                                    const Eigen::VectorXd& f) {
  Eigen::VectorXd Af = sys.A * f;
  for (int r = 0; r < sys.rows(); ++r) Af[r] *= sys.weight[r];
  return sys.A.transpose() * Af;
}

// Dense N for desk-scale diagnostics, built from row outer products with the
// lower triangle mirrored so the matrix is symmetric to the last bit.
inline Eigen::MatrixXd normal_matrix(const ForwardSystem& sys) {
  int nc = sys.cols();
  if (nc > 4096)
    throw std::invalid_argument(
        "normal_matrix: grid too large for the dense form; use apply_normal");
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(nc, nc);
  std::vector<std::pair<int, double>> row;
  for (int r = 0; r < sys.A.outerSize(); ++r) {
    row.clear();
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator
             it(sys.A, r);
         it; ++it)
      row.emplace_back(static_cast<int>(it.col()), it.value());
    double wr = sys.weight[r];
    for (std::size_t a = 0; a < row.size(); ++a)
      for (std::size_t b = a; b < row.size(); ++b)
        N(row[a].first, row[b].first) += wr * row[a].second * row[b].second;
  }
  for (int i = 0; i < nc; ++i)
    for (int j = 0; j < i; ++j) N(i, j) = N(j, i);
  return N;
}

// --- solenoidal spectrum -----------------------------------------------------------

namespace detail {

// Spread flattened masked-node tensor values into the component-major stack
// the forward matrix acts on.
inline Eigen::VectorXd embed_masked(const TensorCalculus& calc,
                                    const Eigen::VectorXd& vals) {
  const std::vector<int>& nodes = calc.masked_nodes();
  int nn = calc.grid()->n * calc.grid()->n;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(3 * nn);
  for (std::size_t t = 0; t < nodes.size(); ++t) {
    out[nodes[t]] = vals[3 * t];
    out[nn + nodes[t]] = vals[3 * t + 1];
    out[2 * nn + nodes[t]] = vals[3 * t + 2];
  }
  return out;
}

inline Eigen::VectorXd gather_masked(const TensorCalculus& calc,
                                     const Eigen::VectorXd& stack) {
  const std::vector<int>& nodes = calc.masked_nodes();
  int nn = calc.grid()->n * calc.grid()->n;
  Eigen::VectorXd out(3 * nodes.size());
  for (std::size_t t = 0; t < nodes.size(); ++t) {
    out[3 * t] = stack[nodes[t]];
    out[3 * t + 1] = stack[nn + nodes[t]];
    out[3 * t + 2] = stack[2 * nn + nodes[t]];
  }
  return out;
}

// Thin orthonormal column basis with a relative rank cutoff.
inline Eigen::MatrixXd thin_basis(const Eigen::MatrixXd& span, double tol) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(span);
  qr.setThreshold(tol);
  Eigen::Index rank = qr.rank();
  Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(span.rows(), rank);
  return q;
}

}  // namespace detail

// Orthonormal basis (component-major stack coordinates) of the discrete
// potential subspace, the image of the Dirichlet differential.
inline Eigen::MatrixXd potential_basis(const TensorCalculus& calc,
                                       double rank_tol = 1e-10) {
  const Eigen::SparseMatrix<double>& D = calc.dirichlet_differential();
  Eigen::MatrixXd span(3 * calc.grid()->n * calc.grid()->n, D.cols());
  for (int c = 0; c < D.cols(); ++c) {
    Eigen::VectorXd col = Eigen::VectorXd::Zero(D.rows());
    for (Eigen::SparseMatrix<double>::InnerIterator it(D, c); it; ++it)
      col[it.row()] = it.value();
    span.col(c) = detail::embed_masked(calc, col);
  }
  return detail::thin_basis(span, rank_tol);
}

// Orthonormal basis of the discrete solenoidal subspace: every nodal tensor
// direction is projected onto the orthogonal complement of the potentials
// (in the quadrature pairing, matching decompose), then the projected set is
// reduced by a rank-revealing QR.
inline Eigen::MatrixXd solenoidal_basis(const TensorCalculus& calc,
                                        double rank_tol = 1e-8) {
  const Eigen::SparseMatrix<double>& D = calc.dirichlet_differential();
  Eigen::SparseMatrix<double> W = calc.quadrature_weight_matrix();
  Eigen::SparseMatrix<double> WD = W * D;
  Eigen::SparseMatrix<double> M = D.transpose() * WD;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(M);
  if (ldlt.info() != Eigen::Success)
    throw solver_error(
        "solenoidal basis: the potential Gram matrix failed to factor");
  Eigen::SparseMatrix<double> DtW = Eigen::SparseMatrix<double>(D.transpose()) * W;

  Eigen::Index m3 = D.rows();
  Eigen::MatrixXd span(3 * calc.grid()->n * calc.grid()->n, m3);
  Eigen::VectorXd b(DtW.rows()), proj(m3);
  for (Eigen::Index k = 0; k < m3; ++k) {
    b = DtW.col(k);
    Eigen::VectorXd y = ldlt.solve(b);
    proj = -(D * y);
    proj[k] += 1.0;
    span.col(k) = detail::embed_masked(calc, proj);
  }
  return detail::thin_basis(span, rank_tol);
}

struct SpectrumOptions {
  double basis_tol = 1e-8;  // rank cutoff when building the default basis
  double check_tol = 1e-6;  // solenoidal tolerance for supplied bases
  int probe_count = 12;     // random probes for the stability constant
  std::uint64_t seed = 7;
};

struct SpectrumReport {
  int solenoidal_dim = 0;
  int potential_dim = 0;
  double sigma_min_solenoidal = 0.0;
  double sigma_max_solenoidal = 0.0;
  double sigma_max_potential = 0.0;
  // max over smooth probes of |u|_L2 / |N u|_L2, the empirical constant of
  // the discrete stability estimate (quadrature norms, normal image divided
  // by the node mass; see the note in sinjectivity_spectrum).
  double stability_constant = 0.0;
  Eigen::VectorXd solenoidal_singular_values;
};

inline SpectrumReport sinjectivity_spectrum(const ForwardSystem& sys,
                                            const TensorCalculus& calc,
                                            const Eigen::MatrixXd& sol_basis,
                                            const SpectrumOptions& opt = {}) {
  if (!sys.grid->same_layout(*calc.grid()))
    throw std::invalid_argument(
        "spectrum: forward system and calculus use different grids");
  if (sol_basis.rows() != sys.cols() || sol_basis.cols() == 0)
    throw std::invalid_argument("spectrum: basis shape mismatch");

  // Verify the supplied columns really are solenoidal: project each onto the
  // potentials and require a negligible component.
  const Eigen::SparseMatrix<double>& D = calc.dirichlet_differential();
  Eigen::SparseMatrix<double> W = calc.quadrature_weight_matrix();
  Eigen::SparseMatrix<double> WD = W * D;
  Eigen::SparseMatrix<double> M = D.transpose() * WD;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(M);
  if (ldlt.info() != Eigen::Success)
    throw solver_error("spectrum: the potential Gram matrix failed to factor");
  for (Eigen::Index c = 0; c < sol_basis.cols(); ++c) {
    Eigen::VectorXd q = detail::gather_masked(calc, sol_basis.col(c));
    Eigen::VectorXd y = ldlt.solve(D.transpose() * (W * q));
    double pot = (D * y).norm();
    if (pot > opt.check_tol * std::max(1e-300, q.norm())) {
      std::ostringstream msg;
      msg << "spectrum: basis column " << c
          << " is not solenoidal (potential fraction " << pot / q.norm()
          << ")";
      throw std::invalid_argument(msg.str());
    }
  }

  Eigen::SparseMatrix<double, Eigen::RowMajor> B = sys.A;
  for (int r = 0; r < B.outerSize(); ++r) {
    double s = std::sqrt(sys.weight[r]);
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(B, r);
         it; ++it)
      it.valueRef() *= s;
  }

  SpectrumReport rep;
  Eigen::BDCSVD<Eigen::MatrixXd> svd_s(B * sol_basis);
  rep.solenoidal_singular_values = svd_s.singularValues();
  rep.solenoidal_dim = static_cast<int>(sol_basis.cols());
  rep.sigma_max_solenoidal = rep.solenoidal_singular_values[0];
  rep.sigma_min_solenoidal =
      rep.solenoidal_singular_values[rep.solenoidal_singular_values.size() - 1];

  Eigen::MatrixXd pot = potential_basis(calc);
  rep.potential_dim = static_cast<int>(pot.cols());
  Eigen::BDCSVD<Eigen::MatrixXd> svd_p(B * pot);
  rep.sigma_max_potential = svd_p.singularValues()[0];

  // Empirical constant of the discrete stability estimate. Probes are fixed
  // smooth bump fields (seeded in continuum coordinates, independent of the
  // grid), projected onto the solenoidal span. Both sides use quadrature
  // norms, with the normal image divided by the node mass so it stands for a
  // grid function rather than a raw coefficient vector; plain coefficient
  // norms would scale like 1/h^2 under refinement and make the constant
  // incomparable between resolutions.
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> upos(-0.6, 0.6), uwid(0.25, 0.5);
  const std::vector<double> mass = calc.masked_measures();
  const std::vector<int>& nodes = calc.masked_nodes();
  for (int p = 0; p < opt.probe_count; ++p) {
    std::array<std::array<double, 4>, 9> bump;  // cx, cy, width, amplitude
    for (auto& b : bump) b = {upos(rng), upos(rng), uwid(rng), gauss(rng)};
    auto comp = [&bump](int c0) {
      return [&bump, c0](const Vec2& q) {
        double v = 0.0;
        for (int b = 3 * c0; b < 3 * c0 + 3; ++b) {
          double dx = q.x() - bump[b][0], dy = q.y() - bump[b][1];
          v += bump[b][3] *
               std::exp(-(dx * dx + dy * dy) / (2.0 * bump[b][2] * bump[b][2]));
        }
        return v;
      };
    };
    SymTensorField pf = sample_tensor(calc.grid(), comp(0), comp(1), comp(2));
    Eigen::VectorXd u = sol_basis * (sol_basis.transpose() * pf.flatten());
    double un = calc.l2_norm(SymTensorField::from_flat(sys.grid, u));
    if (un == 0.0) continue;
    SymTensorField nf =
        SymTensorField::from_flat(sys.grid, apply_normal(sys, u / un));
    for (std::size_t t = 0; t < nodes.size(); ++t) {
      nf.f11[nodes[t]] /= mass[t];
      nf.f12[nodes[t]] /= mass[t];
      nf.f22[nodes[t]] /= mass[t];
    }
    double nn = calc.l2_norm(nf);
    if (nn > 0.0)
      rep.stability_constant = std::max(rep.stability_constant, 1.0 / nn);
  }
  return rep;
}

inline SpectrumReport sinjectivity_spectrum(const ForwardSystem& sys,
                                            const TensorCalculus& calc,
                                            const SpectrumOptions& opt = {}) {
  return sinjectivity_spectrum(sys, calc,
                               solenoidal_basis(calc, opt.basis_tol), opt);
}

// --- regularized inversion -----------------------------------------------------------

inline double estimate_sigma_max(const ForwardSystem& sys,
                                 std::uint64_t seed = 11, int iters = 40) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  Eigen::VectorXd x(sys.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = gauss(rng);
  x.normalize();
  double lam = 0.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd y = apply_normal(sys, x);
    lam = y.norm();
    if (lam == 0.0) return 0.0;
    x = y / lam;
  }
  return std::sqrt(lam);
}

struct InvertOptions {
  double lambda = -1.0;  // < 0: use 1e-6 * sigma_max^2
  double cg_tol = 1e-10;
  int cg_max_iter = 20000;
  std::uint64_t seed = 11;
};

struct Reconstruction {
  SymTensorField f_hat;   // regularized least-squares minimizer
  SymTensorField fs_hat;  // its solenoidal part
  VectorFieldGrid v_hat;
  double lambda = 0.0;
  double sigma_max = 0.0;
  double residual = 0.0;  // |sqrt(W)(A f - d)| relative to |sqrt(W) d|
  int cg_iterations = 0;
};

// Tikhonov-regularized least squares on the normal equations, followed by a
// projection of the minimizer onto its solenoidal part.
inline Reconstruction reconstruct(const ForwardSystem& sys,
                                  const TensorCalculus& calc,
                                  const Eigen::VectorXd& data,
                                  const InvertOptions& opt = {}) {
  if (!sys.grid->same_layout(*calc.grid()))
    throw std::invalid_argument(
        "reconstruct: forward system and calculus use different grids");
  if (data.size() != sys.rows())
    throw std::invalid_argument("reconstruct: data length != path count");

  Reconstruction rec;
  rec.sigma_max = estimate_sigma_max(sys, opt.seed);
  rec.lambda = opt.lambda >= 0.0 ? opt.lambda : 1e-6 * sqr(rec.sigma_max);

  Eigen::VectorXd wd = data;
  for (int r = 0; r < sys.rows(); ++r) wd[r] *= sys.weight[r];
  Eigen::VectorXd b = sys.A.transpose() * wd;

  Eigen::VectorXd x;
  auto apply = [&](const Eigen::VectorXd& p, Eigen::VectorXd& out) {
    out.noalias() = apply_normal(sys, p);
    out += rec.lambda * p;
  };
  CgReport cg = cg_solve(apply, b, x, opt.cg_tol, opt.cg_max_iter);
  rec.cg_iterations = cg.iterations;
  if (!cg.converged) {
    std::ostringstream msg;
    msg << "reconstruct: CG stalled at relative residual " << cg.residual
        << " after " << cg.iterations << " iterations";
    throw solver_error(msg.str());
  }

  rec.f_hat = SymTensorField::from_flat(sys.grid, x);
  Decomposition dec = calc.decompose(rec.f_hat);
  rec.fs_hat = std::move(dec.fs);
  rec.v_hat = std::move(dec.v);

  Eigen::VectorXd r = sys.A * rec.f_hat.flatten() - data;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < sys.rows(); ++i) {
    num += sys.weight[i] * sqr(r[i]);
    den += sys.weight[i] * sqr(data[i]);
  }
  rec.residual = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  return rec;
}

// --- binary container ------------------------------------------------------------------
//
// LLFS1 layout, little endian throughout (documented in docs/llfs1_format.md):
//   char[6]  "LLFS1\0"
//   u16      version (currently 1)
//   u64      metric fingerprint
//   u32      grid n
//   f64      grid extent
//   u32      row count
//   u64      total nonzeros
//   per row: f64 s, mu, alpha, weight, length; u32 nnz; u32 cols[nnz];
//            f64 vals[nnz]
//   u64      FNV-1a checksum of every preceding byte

namespace detail {

inline void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little)
    throw config_error("LLFS1 container requires a little-endian host");
}

template <class T>
void put_raw(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

template <class T>
T get_raw(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size())
    throw config_error("LLFS1 container: truncated file");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize_system(const ForwardSystem& sys) {
  detail::require_little_endian();
  std::string buf;
  buf.append("LLFS1\0", 6);
  detail::put_raw<std::uint16_t>(buf, 1);
  detail::put_raw<std::uint64_t>(buf, sys.metric_fingerprint);
  detail::put_raw<std::uint32_t>(buf, static_cast<std::uint32_t>(sys.grid->n));
  detail::put_raw<double>(buf, sys.grid->extent);
  detail::put_raw<std::uint32_t>(buf, static_cast<std::uint32_t>(sys.rows()));
  detail::put_raw<std::uint64_t>(buf,
                                 static_cast<std::uint64_t>(sys.A.nonZeros()));
  for (int r = 0; r < sys.rows(); ++r) {
    detail::put_raw<double>(buf, sys.entries[r].s);
    detail::put_raw<double>(buf, sys.entries[r].mu);
    detail::put_raw<double>(buf, sys.alpha[r]);
    detail::put_raw<double>(buf, sys.weight[r]);
    detail::put_raw<double>(buf, sys.length[r]);
    std::uint32_t nnz = 0;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator
             it(sys.A, r);
         it; ++it)
      ++nnz;
    detail::put_raw<std::uint32_t>(buf, nnz);
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator
             it(sys.A, r);
         it; ++it)
      detail::put_raw<std::uint32_t>(buf, static_cast<std::uint32_t>(it.col()));
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator
             it(sys.A, r);
         it; ++it)
      detail::put_raw<double>(buf, it.value());
  }
  detail::put_raw<std::uint64_t>(buf, fnv1a64(buf));
  return buf;
}

inline ForwardSystem deserialize_system(const std::string& buf) {
  detail::require_little_endian();
  if (buf.size() < 6 + 2 + 8)
    throw config_error("LLFS1 container: truncated file");
  if (std::memcmp(buf.data(), "LLFS1\0", 6) != 0)
    throw config_error("LLFS1 container: bad magic");
  std::uint64_t want = fnv1a64(std::string_view(buf.data(), buf.size() - 8));
  std::size_t tail = buf.size() - 8;
  std::uint64_t got;
  std::memcpy(&got, buf.data() + tail, 8);
  if (want != got)
    throw config_error("LLFS1 container: checksum mismatch, file corrupted");

  std::size_t off = 6;
  std::uint16_t version = detail::get_raw<std::uint16_t>(buf, off);
  if (version != 1)
    throw config_error("LLFS1 container: unsupported version");

  ForwardSystem sys;
  sys.metric_fingerprint = detail::get_raw<std::uint64_t>(buf, off);
  std::uint32_t n = detail::get_raw<std::uint32_t>(buf, off);
  double extent = detail::get_raw<double>(buf, off);
  std::uint32_t rows = detail::get_raw<std::uint32_t>(buf, off);
  std::uint64_t total = detail::get_raw<std::uint64_t>(buf, off);
  sys.grid = make_tensor_grid(static_cast<int>(n), extent);

  sys.entries.resize(rows);
  sys.alpha.resize(rows);
  sys.weight.resize(rows);
  sys.length.resize(rows);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(total);
  int nn = sys.grid->n * sys.grid->n;
  for (std::uint32_t r = 0; r < rows; ++r) {
    sys.entries[r].s = detail::get_raw<double>(buf, off);
    sys.entries[r].mu = detail::get_raw<double>(buf, off);
    sys.alpha[r] = detail::get_raw<double>(buf, off);
    sys.weight[r] = detail::get_raw<double>(buf, off);
    sys.length[r] = detail::get_raw<double>(buf, off);
    std::uint32_t nnz = detail::get_raw<std::uint32_t>(buf, off);
    std::vector<std::uint32_t> cols(nnz);
    for (auto& c : cols) {
      c = detail::get_raw<std::uint32_t>(buf, off);
      if (c >= static_cast<std::uint32_t>(3 * nn))
        throw config_error("LLFS1 container: column index out of range");
    }
    for (std::uint32_t k = 0; k < nnz; ++k)
      trip.emplace_back(static_cast<int>(r), static_cast<int>(cols[k]),
                        detail::get_raw<double>(buf, off));
  }
  if (off != tail)
    throw config_error("LLFS1 container: trailing bytes before checksum");
  sys.A.resize(rows, 3 * nn);
  sys.A.setFromTriplets(trip.begin(), trip.end());
  sys.A.makeCompressed();
  return sys;
}

inline void save_system(const std::string& path, const ForwardSystem& sys) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw config_error("cannot open " + path + " for writing");
  std::string buf = serialize_system(sys);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw config_error("short write to " + path);
}

inline ForwardSystem load_system(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw config_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_system(ss.str());
}

}  // namespace lenslab

#endif  // LENSLAB_XRAY_HPP
