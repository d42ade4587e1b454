#ifndef LENSLAB_TENSOR_HPP
#define LENSLAB_TENSOR_HPP

#include <Eigen/Sparse>

#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <utility>

#include "lenslab/metric.hpp"

// Symmetric 2-tensor calculus on a node grid over the disc: the covariant
// symmetric differential dv, the divergence delta f, L2 pairings weighted by
// the Riemannian volume form, and the solenoidal/potential splitting
// f = f^s + dv with v a Dirichlet vector field.

namespace lenslab {

// Uniform node grid on [-extent, extent]^2. Nodes inside the closed unit disc
// are "masked" (they carry field values); masked nodes further than one cell
// from the circle are "free" (they carry Dirichlet vector degrees of
// freedom). The quadrature weight of a node is the disc area assigned to it
// in units of one cell: subsampled cell pieces inside the disc are credited
// to their own node when masked, otherwise to the nearest masked node, so
// the weights tile the disc exactly up to the subsample resolution.
struct TensorGrid {
  int n = 65;
  double extent = 1.05;
  std::vector<std::uint8_t> mask;       // |x| <= 1
  std::vector<std::uint8_t> free_node;  // |x| <= 1 - h
  std::vector<double> weight;           // assigned disc area / h^2
  std::vector<int> row_lo, row_hi;      // masked x-index span per row (incl.)
  std::vector<int> col_lo, col_hi;      // masked y-index span per column

  TensorGrid(int n_, double extent_ = 1.05) : n(n_), extent(extent_) {
    if (n < 9 || extent <= 1.0)
      throw config_error("tensor grid: need n >= 9 and extent > 1");
    int nn = n * n;
    mask.assign(nn, 0);
    free_node.assign(nn, 0);
    weight.assign(nn, 0.0);
    row_lo.assign(n, n);
    row_hi.assign(n, -1);
    col_lo.assign(n, n);
    col_hi.assign(n, -1);
    double hh = h();
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        Vec2 p(x(i), y(j));
        double r = p.norm();
        if (r > 1.0 + 1e-12) continue;
        int id = idx(i, j);
        mask[id] = 1;
        free_node[id] = r <= 1.0 - hh + 1e-12 ? 1 : 0;
        row_lo[j] = std::min(row_lo[j], i);
        row_hi[j] = std::max(row_hi[j], i);
        col_lo[i] = std::min(col_lo[i], j);
        col_hi[i] = std::max(col_hi[i], j);
      }
    }
    const int sub = 16;
    double piece = 1.0 / (sub * sub);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        if (std::abs(x(i)) > 1.0 + hh || std::abs(y(j)) > 1.0 + hh) continue;
        for (int a = 0; a < sub; ++a)
          for (int b = 0; b < sub; ++b) {
            double qx = x(i) + hh * ((a + 0.5) / sub - 0.5);
            double qy = y(j) + hh * ((b + 0.5) / sub - 0.5);
            if (qx * qx + qy * qy > 1.0) continue;
            int oi = i, oj = j;
            if (!mask[idx(i, j)]) {
              double best = inf();
              for (int dj = -2; dj <= 2; ++dj)
                for (int di = -2; di <= 2; ++di) {
                  int ii = i + di, jj = j + dj;
                  if (ii < 0 || jj < 0 || ii >= n || jj >= n) continue;
                  if (!mask[idx(ii, jj)]) continue;
                  double d2 = sqr(x(ii) - qx) + sqr(y(jj) - qy);
                  if (d2 < best) {
                    best = d2;
                    oi = ii;
                    oj = jj;
                  }
                }
              if (best == inf()) continue;  // no masked node nearby
            }
            weight[idx(oi, oj)] += piece;
          }
      }
    }
  }

  double h() const { return 2.0 * extent / (n - 1); }
  double x(int i) const { return -extent + i * h(); }
  double y(int j) const { return -extent + j * h(); }
  int idx(int i, int j) const { return j * n + i; }
  bool same_layout(const TensorGrid& o) const {
    return n == o.n && extent == o.extent;
  }
};

using GridPtr = std::shared_ptr<const TensorGrid>;

inline GridPtr make_tensor_grid(int n, double extent = 1.05) {
  return std::make_shared<const TensorGrid>(n, extent);
}

namespace detail {
inline void check_grids(const GridPtr& a, const GridPtr& b) {
  if (!a || !b || !a->same_layout(*b))
    throw std::invalid_argument("tensor fields live on different grids");
}
}  // namespace detail

// Symmetric 2-tensor on the grid, stored as three component planes. Values
// are zero outside the mask.
struct SymTensorField {
  GridPtr grid;
  std::vector<double> f11, f12, f22;

  SymTensorField() = default;
  explicit SymTensorField(GridPtr g)
      : grid(std::move(g)),
        f11(grid->n * grid->n, 0.0),
        f12(grid->n * grid->n, 0.0),
        f22(grid->n * grid->n, 0.0) {}

  Mat2 at(int i, int j) const {
    int id = grid->idx(i, j);
    Mat2 m;
    m << f11[id], f12[id], f12[id], f22[id];
    return m;
  }

  // Component-major flat layout (f11 plane, then f12, then f22); the forward
  // map in the ray-transform module indexes columns this way.
  Eigen::VectorXd flatten() const {
    int nn = grid->n * grid->n;
    Eigen::VectorXd out(3 * nn);
    for (int k = 0; k < nn; ++k) {
      out[k] = f11[k];
      out[nn + k] = f12[k];
      out[2 * nn + k] = f22[k];
    }
    return out;
  }

  static SymTensorField from_flat(GridPtr g, const Eigen::VectorXd& vec) {
    SymTensorField f(std::move(g));
    int nn = f.grid->n * f.grid->n;
    if (vec.size() != 3 * nn)
      throw std::invalid_argument("tensor unflatten: wrong vector size");
    for (int k = 0; k < nn; ++k) {
      double m = f.grid->mask[k] ? 1.0 : 0.0;
      f.f11[k] = m * vec[k];
      f.f12[k] = m * vec[nn + k];
      f.f22[k] = m * vec[2 * nn + k];
    }
    return f;
  }
};

// Covector field on the grid (components carry lower indices). When the
// Dirichlet flag is set, values vanish off the free nodes.
struct VectorFieldGrid {
  GridPtr grid;
  std::vector<double> v1, v2;
  bool dirichlet = false;

  VectorFieldGrid() = default;
  explicit VectorFieldGrid(GridPtr g, bool dirichlet_ = false)
      : grid(std::move(g)),
        v1(grid->n * grid->n, 0.0),
        v2(grid->n * grid->n, 0.0),
        dirichlet(dirichlet_) {}

  void project_dirichlet() {
    for (std::size_t k = 0; k < v1.size(); ++k)
      if (!grid->free_node[k]) v1[k] = v2[k] = 0.0;
    dirichlet = true;
  }
};

// Pointwise sampling helpers; samplers take the node position.
template <class F11, class F12, class F22>
SymTensorField sample_tensor(const GridPtr& g, F11&& f11, F12&& f12,
                             F22&& f22) {
  SymTensorField f(g);
  for (int j = 0; j < g->n; ++j)
    for (int i = 0; i < g->n; ++i) {
      int id = g->idx(i, j);
      if (!g->mask[id]) continue;
      Vec2 p(g->x(i), g->y(j));
      f.f11[id] = f11(p);
      f.f12[id] = f12(p);
      f.f22[id] = f22(p);
    }
  return f;
}

template <class F1, class F2>
VectorFieldGrid sample_vector(const GridPtr& g, F1&& v1, F2&& v2,
                              bool dirichlet = false) {
  VectorFieldGrid v(g);
  for (int j = 0; j < g->n; ++j)
    for (int i = 0; i < g->n; ++i) {
      int id = g->idx(i, j);
      if (!g->mask[id]) continue;
      Vec2 p(g->x(i), g->y(j));
      v.v1[id] = v1(p);
      v.v2[id] = v2(p);
    }
  if (dirichlet) v.project_dirichlet();
  return v;
}

struct DecomposeReport {
  int cg_iterations = 0;
  double cg_residual = 0.0;
  // Norms of the covariant divergence of f^s, split between the free
  // interior and the one-cell boundary ring. Extending f^s by zero across
  // the mask edge concentrates divergence there; the split makes the spike
  // visible instead of hiding it in one number.
  double div_fs_interior = 0.0;
  double div_fs_edge = 0.0;
};

struct Decomposition {
  SymTensorField fs;
  VectorFieldGrid v;
  DecomposeReport report;
};

// Discrete tensor calculus bound to one chart and one grid. Derivatives are
// 4th-order five-point stencils, shifted to one-sided windows where the
// centered one would leave the mask. The symmetric differential is kept as
// an explicit sparse matrix so the decomposition can use its exact adjoint
// with respect to the quadrature inner product.
class TensorCalculus {
public:
  TensorCalculus(const MetricChart& chart, GridPtr grid)
      : chart_(&chart), grid_(std::move(grid)) {
    build_stencils_();
    build_geometry_();
    build_differential_();
  }

  const GridPtr& grid() const { return grid_; }
  const MetricChart& chart() const { return *chart_; }

  // [dv]_ij = (nabla_i v_j + nabla_j v_i) / 2 on masked nodes.
  SymTensorField sym_differential(const VectorFieldGrid& v) const {
    detail::check_grids(grid_, v.grid);
    Eigen::VectorXd vals(2 * node_list_.size());
    for (std::size_t t = 0; t < node_list_.size(); ++t) {
      vals[2 * t] = v.v1[node_list_[t]];
      vals[2 * t + 1] = v.v2[node_list_[t]];
    }
    return scatter_tensor_(Dfull_ * vals);
  }

  // [delta f]_i = g^{jk} nabla_k f_{ij}, returned as a covector field.
  VectorFieldGrid divergence(const SymTensorField& f) const {
    detail::check_grids(grid_, f.grid);
    const TensorGrid& G = *grid_;
    VectorFieldGrid out(grid_);
    parallel_for(node_list_.size(), [&](std::size_t t) {
      int id = node_list_[t];
      int i = id % G.n, j = id / G.n;
      // df[k] holds the k-derivative of the component matrix at the node.
      Mat2 df[2];
      df[0].setZero();
      df[1].setZero();
      auto add_x = [&](int ii, double w) {
        df[0] += w * f.at(ii, j);
      };
      auto add_y = [&](int jj, double w) {
        df[1] += w * f.at(i, jj);
      };
      stencil_apply_(i, G.row_lo[j], G.row_hi[j], add_x);
      stencil_apply_(j, G.col_lo[i], G.col_hi[i], add_y);
      Mat2 fm = f.at(i, j);
      const NodeGeom& geo = geom_[t];
      double out_i[2] = {0.0, 0.0};
      for (int a = 0; a < 2; ++a)
        for (int jj = 0; jj < 2; ++jj)
          for (int k = 0; k < 2; ++k) {
            double acc = df[k](a, jj);
            for (int l = 0; l < 2; ++l)
              acc -= geo.gamma[l](k, a) * fm(l, jj) +
                     geo.gamma[l](k, jj) * fm(a, l);
            out_i[a] += geo.ginv(jj, k) * acc;
          }
      out.v1[id] = out_i[0];
      out.v2[id] = out_i[1];
    });
    return out;
  }

  // L2 pairing of tensors: sum of w h^2 sqrt(det g) g^{ik} g^{jl} a_ij b_kl.
  double l2_inner(const SymTensorField& a, const SymTensorField& b) const {
    detail::check_grids(grid_, a.grid);
    detail::check_grids(grid_, b.grid);
    double acc = 0.0;
    for (std::size_t t = 0; t < node_list_.size(); ++t) {
      int id = node_list_[t];
      int i = id % grid_->n, j = id / grid_->n;
      const NodeGeom& geo = geom_[t];
      acc += geo.measure *
             (geo.ginv * a.at(i, j) * geo.ginv * b.at(i, j)).trace();
    }
    return acc;
  }

  // L2 pairing of covector fields: sum of w h^2 sqrt(det g) g^{ij} u_i v_j.
  double l2_inner(const VectorFieldGrid& u, const VectorFieldGrid& v) const {
    detail::check_grids(grid_, u.grid);
    detail::check_grids(grid_, v.grid);
    double acc = 0.0;
    for (std::size_t t = 0; t < node_list_.size(); ++t) {
      int id = node_list_[t];
      const NodeGeom& geo = geom_[t];
      Vec2 uu(u.v1[id], u.v2[id]), vv(v.v1[id], v.v2[id]);
      acc += geo.measure * uu.dot(geo.ginv * vv);
    }
    return acc;
  }

  double l2_norm(const SymTensorField& f) const {
    return std::sqrt(std::max(0.0, l2_inner(f, f)));
  }
  double l2_norm(const VectorFieldGrid& v) const {
    return std::sqrt(std::max(0.0, l2_inner(v, v)));
  }

  // Solenoidal/potential splitting: v minimizes |f - dv| over Dirichlet
  // fields (normal equations solved by CG with the exact discrete adjoint),
  // f^s = f - dv. By construction f^s is orthogonal to every dv up to the
  // solver tolerance.
  Decomposition decompose(const SymTensorField& f, double tol = 1e-10,
                          int max_iter = 20000) const {
    detail::check_grids(grid_, f.grid);
    Decomposition dec;
    Eigen::VectorXd fvals = gather_tensor_(f);
    Eigen::VectorXd b = D_.transpose() * weigh_(fvals);
    Eigen::VectorXd vdofs;
    auto apply = [&](const Eigen::VectorXd& p, Eigen::VectorXd& out) {
      out.noalias() = D_.transpose() * weigh_(D_ * p);
    };
    CgReport cg = cg_solve(apply, b, vdofs, tol, max_iter);
    dec.report.cg_iterations = cg.iterations;
    dec.report.cg_residual = cg.residual;
    if (!cg.converged) {
      std::ostringstream msg;
      msg << "tensor decompose: CG stalled at relative residual "
          << cg.residual << " after " << cg.iterations << " iterations";
      throw solver_error(msg.str());
    }

    dec.v = VectorFieldGrid(grid_, true);
    for (std::size_t d = 0; d < vdof_list_.size(); ++d) {
      dec.v.v1[vdof_list_[d]] = vdofs[2 * d];
      dec.v.v2[vdof_list_[d]] = vdofs[2 * d + 1];
    }
    dec.fs = scatter_tensor_(fvals - D_ * vdofs);

    VectorFieldGrid div = divergence(dec.fs);
    double in2 = 0.0, edge2 = 0.0;
    for (std::size_t t = 0; t < node_list_.size(); ++t) {
      int id = node_list_[t];
      const NodeGeom& geo = geom_[t];
      Vec2 dd(div.v1[id], div.v2[id]);
      double c = geo.measure * dd.dot(geo.ginv * dd);
      (grid_->free_node[id] ? in2 : edge2) += c;
    }
    dec.report.div_fs_interior = std::sqrt(in2);
    dec.report.div_fs_edge = std::sqrt(edge2);
    return dec;
  }

  // Flat linear-algebra surface, for spectral diagnostics that need the raw
  // least-squares pieces. Tensors flatten to (f11, f12, f22) per masked node
  // in masked_nodes() order, Dirichlet fields to (v1, v2) per free node.
  const std::vector<int>& masked_nodes() const { return node_list_; }
  const std::vector<int>& free_nodes() const { return vdof_list_; }
  const Eigen::SparseMatrix<double>& dirichlet_differential() const {
    return D_;
  }
  Eigen::VectorXd flatten_masked(const SymTensorField& f) const {
    detail::check_grids(grid_, f.grid);
    return gather_tensor_(f);
  }
  SymTensorField scatter_masked(const Eigen::VectorXd& vals) const {
    if (vals.size() != static_cast<Eigen::Index>(3 * node_list_.size()))
      throw std::invalid_argument("scatter_masked: value count mismatch");
    return scatter_tensor_(vals);
  }

  // Quadrature mass per masked node, aligned with masked_nodes().
  std::vector<double> masked_measures() const {
    std::vector<double> m(node_list_.size());
    for (std::size_t t = 0; t < node_list_.size(); ++t)
      m[t] = geom_[t].measure;
    return m;
  }

  // Gram matrix of the tensor pairing on flattened values: <f, k> equals
  // flatten(f)^T W flatten(k). Block diagonal, one 3x3 block per node.
  Eigen::SparseMatrix<double> quadrature_weight_matrix() const {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(9 * node_list_.size());
    Mat2 basis[3];
    basis[0] << 1, 0, 0, 0;
    basis[1] << 0, 1, 1, 0;
    basis[2] << 0, 0, 0, 1;
    for (std::size_t t = 0; t < node_list_.size(); ++t) {
      const NodeGeom& geo = geom_[t];
      for (int c = 0; c < 3; ++c) {
        Mat2 B = geo.ginv * basis[c] * geo.ginv * geo.measure;
        double col[3] = {B(0, 0), 2.0 * B(0, 1), B(1, 1)};
        for (int r = 0; r < 3; ++r)
          if (col[r] != 0.0)
            trip.emplace_back(static_cast<int>(3 * t) + r,
                              static_cast<int>(3 * t) + c, col[r]);
      }
    }
    Eigen::Index m = static_cast<Eigen::Index>(3 * node_list_.size());
    Eigen::SparseMatrix<double> W(m, m);
    W.setFromTriplets(trip.begin(), trip.end());
    return W;
  }

private:
  struct NodeGeom {
    Mat2 ginv;
    std::array<Mat2, 2> gamma;
    double measure = 0.0;  // w h^2 sqrt(det g)
  };

  const MetricChart* chart_;
  GridPtr grid_;
  std::vector<int> node_list_;   // masked node ids
  std::vector<int> node_slot_;   // node id -> position in node_list_, or -1
  std::vector<int> vdof_list_;   // free node ids
  std::vector<int> vdof_slot_;   // node id -> dof pair index, or -1
  std::vector<NodeGeom> geom_;   // per masked node
  Eigen::SparseMatrix<double> D_;      // (3 * masked) x (2 * free)
  Eigen::SparseMatrix<double> Dfull_;  // (3 * masked) x (2 * masked)
  std::map<std::pair<int, int>, Eigen::VectorXd> stencil_cache_;

  void build_geometry_() {
    const TensorGrid& G = *grid_;
    int nn = G.n * G.n;
    node_slot_.assign(nn, -1);
    vdof_slot_.assign(nn, -1);
    for (int id = 0; id < nn; ++id) {
      if (!G.mask[id]) continue;
      node_slot_[id] = static_cast<int>(node_list_.size());
      node_list_.push_back(id);
      if (G.free_node[id]) {
        vdof_slot_[id] = static_cast<int>(vdof_list_.size());
        vdof_list_.push_back(id);
      }
    }
    geom_.resize(node_list_.size());
    double h2 = sqr(G.h());
    parallel_for(node_list_.size(), [&](std::size_t t) {
      int id = node_list_[t];
      Vec2 p(G.x(id % G.n), G.y(id / G.n));
      Mat2 g = chart_->metric(p);
      NodeGeom geo;
      geo.ginv = g.inverse();
      geo.gamma = chart_->christoffel(p);
      geo.measure = G.weight[id] * h2 * std::sqrt(g.determinant());
      geom_[t] = geo;
    });
  }

  // First-derivative weights on the window of up to five masked nodes around
  // position q in [lo, hi]; emit(index, weight) for each window node.
  template <class Emit>
  void stencil_apply_(int q, int lo, int hi, Emit&& emit) const {
    int len = hi - lo + 1;
    if (len < 2) return;  // a lone node carries no derivative information
    int m = std::min(len, 5);
    int base = std::clamp(q - m / 2, lo, hi - m + 1);
    const Eigen::VectorXd& w = d1_weights_(m, q - base);
    for (int k = 0; k < m; ++k) emit(base + k, w[k]);
  }

  // Weights of d/dx at window position p for m equispaced nodes, from the
  // usual Vandermonde system. All twenty (m, p) pairs are prebuilt so that
  // lookups from parallel loops never mutate the cache.
  const Eigen::VectorXd& d1_weights_(int m, int p) const {
    return stencil_cache_.at(std::make_pair(m, p));
  }

  void build_stencils_() {
    for (int m = 2; m <= 5; ++m)
      for (int p = 0; p < m; ++p) {
        Eigen::MatrixXd V(m, m);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < m; ++c)
            V(r, c) = std::pow(static_cast<double>(c - p), r);
        rhs[1] = 1.0;
        stencil_cache_.emplace(std::make_pair(m, p),
                               V.fullPivLu().solve(rhs) / grid_->h());
      }
  }

  void build_differential_() {
    const TensorGrid& G = *grid_;
    std::vector<Eigen::Triplet<double>> trip, trip_full;
    trip.reserve(node_list_.size() * 24);
    trip_full.reserve(node_list_.size() * 24);
    for (std::size_t t = 0; t < node_list_.size(); ++t) {
      int id = node_list_[t];
      int i = id % G.n, j = id / G.n;
      int row = static_cast<int>(3 * t);
      const NodeGeom& geo = geom_[t];
      // comp rows: row + 0 -> f11, +1 -> f12, +2 -> f22.
      auto add = [&](int r, int node, int comp, double w) {
        if (w == 0.0) return;
        trip_full.emplace_back(r, 2 * node_slot_[node] + comp, w);
        int d = vdof_slot_[node];
        if (d >= 0) trip.emplace_back(r, 2 * d + comp, w);
      };
      // d/dx of v1 -> f11; d/dx of v2 enters f12 with weight 1/2.
      stencil_apply_(i, G.row_lo[j], G.row_hi[j], [&](int ii, double w) {
        add(row + 0, G.idx(ii, j), 0, w);
        add(row + 1, G.idx(ii, j), 1, 0.5 * w);
      });
      // d/dy of v2 -> f22; d/dy of v1 enters f12 with weight 1/2.
      stencil_apply_(j, G.col_lo[i], G.col_hi[i], [&](int jj, double w) {
        add(row + 2, G.idx(i, jj), 1, w);
        add(row + 1, G.idx(i, jj), 0, 0.5 * w);
      });
      // Christoffel terms: [dv]_ab -= Gamma^k_ab v_k at the node itself.
      add(row + 0, id, 0, -geo.gamma[0](0, 0));
      add(row + 0, id, 1, -geo.gamma[1](0, 0));
      add(row + 1, id, 0, -geo.gamma[0](0, 1));
      add(row + 1, id, 1, -geo.gamma[1](0, 1));
      add(row + 2, id, 0, -geo.gamma[0](1, 1));
      add(row + 2, id, 1, -geo.gamma[1](1, 1));
    }
    D_.resize(static_cast<int>(3 * node_list_.size()),
              static_cast<int>(2 * vdof_list_.size()));
    D_.setFromTriplets(trip.begin(), trip.end());
    D_.makeCompressed();
    Dfull_.resize(static_cast<int>(3 * node_list_.size()),
                  static_cast<int>(2 * node_list_.size()));
    Dfull_.setFromTriplets(trip_full.begin(), trip_full.end());
    Dfull_.makeCompressed();
  }

  Eigen::VectorXd gather_tensor_(const SymTensorField& f) const {
    Eigen::VectorXd out(3 * node_list_.size());
    for (std::size_t t = 0; t < node_list_.size(); ++t) {
      int id = node_list_[t];
      out[3 * t] = f.f11[id];
      out[3 * t + 1] = f.f12[id];
      out[3 * t + 2] = f.f22[id];
    }
    return out;
  }

  SymTensorField scatter_tensor_(const Eigen::VectorXd& vals) const {
    SymTensorField f(grid_);
    for (std::size_t t = 0; t < node_list_.size(); ++t) {
      int id = node_list_[t];
      f.f11[id] = vals[3 * t];
      f.f12[id] = vals[3 * t + 1];
      f.f22[id] = vals[3 * t + 2];
    }
    return f;
  }

  // Apply the quadrature Gram form to stacked tensor values: per node the
  // 3x3 form of measure * tr(G A_p G A_q) acting on (f11, f12, f22).
  Eigen::VectorXd weigh_(const Eigen::VectorXd& vals) const {
    Eigen::VectorXd out(vals.size());
    parallel_for(node_list_.size(), [&](std::size_t t) {
      const NodeGeom& geo = geom_[t];
      const Mat2& Gi = geo.ginv;
      Mat2 A;
      A << vals[3 * t], vals[3 * t + 1], vals[3 * t + 1], vals[3 * t + 2];
      Mat2 B = Gi * A * Gi * geo.measure;
      out[3 * t] = B(0, 0);
      out[3 * t + 1] = 2.0 * B(0, 1);
      out[3 * t + 2] = B(1, 1);
    });
    return out;
  }
};

// CSV forms: one row per node over the full square, zeros off the mask, with
// enough header metadata to rebuild the grid.

inline void write_tensor_csv(std::ostream& os, const SymTensorField& f) {
  const TensorGrid& G = *f.grid;
  os << "# lenslab tensor v1\n";
  os << "# grid_n " << G.n << "\n";
  os << "# extent " << format_double(G.extent) << "\n";
  os << "x,y,f11,f12,f22\n";
  for (int j = 0; j < G.n; ++j)
    for (int i = 0; i < G.n; ++i) {
      int id = G.idx(i, j);
      os << format_double(G.x(i)) << ',' << format_double(G.y(j)) << ','
         << format_double(f.f11[id]) << ',' << format_double(f.f12[id]) << ','
         << format_double(f.f22[id]) << "\n";
    }
}

inline void write_vector_csv(std::ostream& os, const VectorFieldGrid& v) {
  const TensorGrid& G = *v.grid;
  os << "# lenslab vector v1\n";
  os << "# grid_n " << G.n << "\n";
  os << "# extent " << format_double(G.extent) << "\n";
  os << "# dirichlet " << (v.dirichlet ? 1 : 0) << "\n";
  os << "x,y,v1,v2\n";
  for (int j = 0; j < G.n; ++j)
    for (int i = 0; i < G.n; ++i) {
      int id = G.idx(i, j);
      os << format_double(G.x(i)) << ',' << format_double(G.y(j)) << ','
         << format_double(v.v1[id]) << ',' << format_double(v.v2[id]) << "\n";
    }
}

namespace detail {
struct GridHeader {
  int n = 0;
  double extent = 0.0;
  int dirichlet = 0;
};

inline GridHeader read_grid_header(std::istream& is, std::string& line) {
  GridHeader h;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] != '#') break;  // column header line
    std::istringstream ls(line.substr(1));
    std::string key;
    ls >> key;
    if (key == "grid_n")
      ls >> h.n;
    else if (key == "extent")
      ls >> h.extent;
    else if (key == "dirichlet")
      ls >> h.dirichlet;
  }
  if (h.n <= 0 || h.extent <= 0.0)
    throw config_error("tensor csv: missing grid header");
  return h;
}
}  // namespace detail

inline SymTensorField read_tensor_csv(std::istream& is) {
  std::string line;
  detail::GridHeader hd = detail::read_grid_header(is, line);
  SymTensorField f(make_tensor_grid(hd.n, hd.extent));
  int count = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double x, y, a, b, c;
    char comma;
    if (!(ls >> x >> comma >> y >> comma >> a >> comma >> b >> comma >> c))
      throw config_error("tensor csv: malformed row: " + line);
    if (count >= hd.n * hd.n) throw config_error("tensor csv: too many rows");
    f.f11[count] = a;
    f.f12[count] = b;
    f.f22[count] = c;
    ++count;
  }
  if (count != hd.n * hd.n) throw config_error("tensor csv: missing rows");
  for (int k = 0; k < count; ++k)
    if (!f.grid->mask[k] &&
        (f.f11[k] != 0.0 || f.f12[k] != 0.0 || f.f22[k] != 0.0))
      throw config_error("tensor csv: nonzero value outside the disc mask");
  return f;
}

inline VectorFieldGrid read_vector_csv(std::istream& is) {
  std::string line;
  detail::GridHeader hd = detail::read_grid_header(is, line);
  VectorFieldGrid v(make_tensor_grid(hd.n, hd.extent), hd.dirichlet != 0);
  int count = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double x, y, a, b;
    char comma;
    if (!(ls >> x >> comma >> y >> comma >> a >> comma >> b))
      throw config_error("vector csv: malformed row: " + line);
    if (count >= hd.n * hd.n) throw config_error("vector csv: too many rows");
    v.v1[count] = a;
    v.v2[count] = b;
    ++count;
  }
  if (count != hd.n * hd.n) throw config_error("vector csv: missing rows");
  return v;
}

inline void write_tensor_csv_file(const std::string& path,
                                  const SymTensorField& f) {
  std::ofstream os(path);
  if (!os) throw config_error("cannot open for writing: " + path);
  write_tensor_csv(os, f);
}

inline void write_vector_csv_file(const std::string& path,
                                  const VectorFieldGrid& v) {
  std::ofstream os(path);
  if (!os) throw config_error("cannot open for writing: " + path);
  write_vector_csv(os, v);
}

inline SymTensorField read_tensor_csv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open: " + path);
  return read_tensor_csv(is);
}

inline VectorFieldGrid read_vector_csv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open: " + path);
  return read_vector_csv(is);
}

}  // namespace lenslab

#endif  // LENSLAB_TENSOR_HPP
