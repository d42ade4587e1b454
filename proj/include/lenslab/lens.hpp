#ifndef LENSLAB_LENS_HPP
#define LENSLAB_LENS_HPP

#include "lenslab/geodesic.hpp"

// Lens data of a disc chart: the scattering relation and boundary travel time
// on the inward ball bundle of the boundary circle. A boundary ray is
// addressed by (s, mu) with s the arc-length position and mu the tangential
// component of the unit direction; the inward normal component is
// sqrt(1 - mu^2). Exit states are reported in the same coordinates, with the
// convention that tangential rays (|mu| = 1) scatter to themselves with zero
// travel time.

namespace lenslab {

struct BallPoint {
  double s = 0.0;
  double mu = 0.0;
};

struct LensRecord {
  BallPoint in, out;
  double length = 0.0;  // +inf when the ray is trapped
  RayStatus status = RayStatus::exited;
};

// (position, direction) of the inward lift of a ball point.
inline std::pair<Vec2, Vec2> enter_state(const MetricChart& chart,
                                         const BallPoint& bp) {
  BoundaryFrame fr = chart.boundary_frame(bp.s);
  double mu = std::clamp(bp.mu, -1.0, 1.0);
  double nu_comp = std::sqrt(std::max(0.0, 1.0 - mu * mu));
  return {fr.x, mu * fr.t + nu_comp * fr.nu};
}

// Ball-point coordinates of an exit state (xi pointing outward).
inline BallPoint exit_ballpoint(const MetricChart& chart, const Vec2& x,
                                const Vec2& xi) {
  BallPoint bp;
  double theta = wrap_angle(std::atan2(x.y(), x.x()));
  bp.s = chart.arclength_from_theta(theta);
  BoundaryFrame fr = chart.boundary_frame(bp.s);
  bp.mu = std::clamp(chart.inner(fr.x, xi, fr.t), -1.0, 1.0);
  return bp;
}

// One evaluation of the scattering relation and travel time.
inline LensRecord scatter(const GeodesicFlow& flow, const BallPoint& bp,
                          const FlowOptions& opt = {}) {
  LensRecord rec;
  rec.in = bp;
  if (std::abs(bp.mu) >= 1.0 - 1e-15) {
    // Tangential rays graze the strictly convex boundary: identity, length 0.
    rec.out = bp;
    rec.length = 0.0;
    rec.status = RayStatus::exited;
    return rec;
  }
  auto [x0, xi0] = enter_state(flow.chart(), bp);
  FlowOptions o = opt;
  o.stop_at_boundary = true;
  RayPath path = flow.shoot(x0, xi0, o);
  rec.status = path.status;
  if (path.status == RayStatus::exited) {
    rec.out = exit_ballpoint(flow.chart(), path.end.x, path.end.xi);
    rec.length = path.length;
  } else {
    rec.out = BallPoint{std::nan(""), std::nan("")};
    rec.length = inf();
  }
  return rec;
}

// --- gridded datasets --------------------------------------------------------

struct LensGrid {
  int s_count = 32;
  int mu_count = 32;
  double mu_min = -0.98;
  double mu_max = 0.98;
};

struct LensDataset {
  LensGrid grid;
  double boundary_length = 0.0;
  std::uint64_t metric_fingerprint = 0;
  std::vector<LensRecord> records;  // row-major: index = i * mu_count + j

  const LensRecord& at(int i, int j) const {
    return records[static_cast<std::size_t>(i) * grid.mu_count + j];
  }
};

struct JitterOptions {
  std::uint64_t seed = 0;
  double eps = 0.0;  // relative grid-cell jitter amplitude; 0 disables
};

// Inward ball points of the dataset grid. s is periodic (no duplicated seam
// node); mu spans [mu_min, mu_max] inclusive. Optional deterministic jitter
// displaces each node by a hash of its indices, independent of evaluation
// order.
inline BallPoint grid_node(const LensGrid& g, double boundary_length, int i,
                           int j, const JitterOptions& jit = {}) {
  BallPoint bp;
  bp.s = boundary_length * i / g.s_count;
  bp.mu = g.mu_count == 1
              ? 0.5 * (g.mu_min + g.mu_max)
              : g.mu_min + (g.mu_max - g.mu_min) * j / (g.mu_count - 1.0);
  if (jit.eps > 0.0) {
    double ds = boundary_length / g.s_count;
    double dmu = g.mu_count > 1 ? (g.mu_max - g.mu_min) / (g.mu_count - 1) : 0.0;
    std::uint64_t node = static_cast<std::uint64_t>(i) * 0x10001u + j;
    bp.s += jit.eps * ds * hash_unit(splitmix64(jit.seed ^ splitmix64(2 * node)));
    bp.mu +=
        jit.eps * dmu * hash_unit(splitmix64(jit.seed ^ splitmix64(2 * node + 1)));
    bp.mu = std::clamp(bp.mu, g.mu_min, g.mu_max);
  }
  return bp;
}

inline LensDataset generate_lens_data(const GeodesicFlow& flow,
                                      const LensGrid& grid,
                                      const FlowOptions& opt = {},
                                      const JitterOptions& jit = {}) {
  LensDataset ds;
  ds.grid = grid;
  ds.boundary_length = flow.chart().boundary_length();
  ds.metric_fingerprint = flow.chart().fingerprint();
  ds.records.resize(static_cast<std::size_t>(grid.s_count) * grid.mu_count);
  parallel_for(ds.records.size(), [&](std::size_t idx) {
    int i = static_cast<int>(idx) / grid.mu_count;
    int j = static_cast<int>(idx) % grid.mu_count;
    BallPoint bp = grid_node(grid, ds.boundary_length, i, j, jit);
    ds.records[idx] = scatter(flow, bp, opt);
  });
  return ds;
}

// --- CSV interchange ---------------------------------------------------------

inline void write_lens_csv(const LensDataset& ds, std::ostream& os) {
  os << "# lenslab lens dataset v1\n";
  os << "# metric_fingerprint=" << hex64(ds.metric_fingerprint) << "\n";
  os << "# s_count=" << ds.grid.s_count << " mu_count=" << ds.grid.mu_count
     << " mu_min=" << format_double(ds.grid.mu_min)
     << " mu_max=" << format_double(ds.grid.mu_max) << "\n";
  os << "# boundary_length=" << format_double(ds.boundary_length) << "\n";
  os << "i,j,s_in,mu_in,s_out,mu_out,length,status\n";
  for (int i = 0; i < ds.grid.s_count; ++i) {
    for (int j = 0; j < ds.grid.mu_count; ++j) {
      const LensRecord& r = ds.at(i, j);
      os << i << ',' << j << ',' << format_double(r.in.s) << ','
         << format_double(r.in.mu) << ',' << format_double(r.out.s) << ','
         << format_double(r.out.mu) << ',' << format_double(r.length) << ','
         << status_name(r.status) << '\n';
    }
  }
}

inline LensDataset read_lens_csv(std::istream& is) {
  LensDataset ds;
  std::string line;
  bool header_done = false;
  std::vector<LensRecord> recs;
  int max_i = -1, max_j = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto grab = [&line](const std::string& key) -> std::optional<std::string> {
        auto pos = line.find(key + "=");
        if (pos == std::string::npos) return std::nullopt;
        pos += key.size() + 1;
        auto end = line.find(' ', pos);
        return line.substr(pos, end == std::string::npos ? end : end - pos);
      };
      if (auto v = grab("metric_fingerprint"))
        ds.metric_fingerprint = std::stoull(*v, nullptr, 16);
      if (auto v = grab("s_count")) ds.grid.s_count = std::stoi(*v);
      if (auto v = grab("mu_count")) ds.grid.mu_count = std::stoi(*v);
      if (auto v = grab("mu_min")) ds.grid.mu_min = std::stod(*v);
      if (auto v = grab("mu_max")) ds.grid.mu_max = std::stod(*v);
      if (auto v = grab("boundary_length")) ds.boundary_length = std::stod(*v);
      continue;
    }
    if (!header_done) {  // column header row
      header_done = true;
      continue;
    }
    std::istringstream ls(line);
    std::string cell;
    auto next = [&]() {
      if (!std::getline(ls, cell, ',')) throw std::invalid_argument("lens csv: short row");
      return cell;
    };
    LensRecord r;
    int i = std::stoi(next());
    int j = std::stoi(next());
    r.in.s = std::stod(next());
    r.in.mu = std::stod(next());
    r.out.s = std::stod(next());
    r.out.mu = std::stod(next());
    r.length = std::stod(next());
    std::string st = next();
    for (RayStatus s : {RayStatus::exited, RayStatus::trapped,
                        RayStatus::left_chart, RayStatus::completed}) {
      if (st == status_name(s)) r.status = s;
    }
    max_i = std::max(max_i, i);
    max_j = std::max(max_j, j);
    recs.push_back(r);
  }
  if (recs.size() != static_cast<std::size_t>(ds.grid.s_count) * ds.grid.mu_count ||
      max_i + 1 != ds.grid.s_count || max_j + 1 != ds.grid.mu_count)
    throw std::invalid_argument("lens csv: record count does not match grid header");
  ds.records = std::move(recs);
  return ds;
}

// --- coverage and health audit ----------------------------------------------

struct AuditOptions {
  int nx = 16, ny = 16;        // interior cell grid over [-extent, extent]^2
  double extent = 0.95;        // cells outside this radius are ignored
  int ndir = 8;                // codirection bins over [0, pi)
  double rho = 0.08;           // sample-to-cell influence radius
  double angle_tol = 0.2;      // codirection matching half-angle (radians)
  double conjugate_tol = 1e-4; // interior margin for conjugate-point flags
  int resample_stride = 4;     // store every k-th integrator sample
};

struct AuditReport {
  AuditOptions options;
  int n_records = 0;
  int n_exited = 0;
  int n_trapped = 0;
  int n_conjugate = 0;  // conjugate point strictly inside: hypothesis violated
  int n_marginal = 0;   // Jacobi zero within tolerance of the endpoint
  int n_cells = 0;      // cells of the audit grid inside the disc
  int n_pairs_total = 0;
  int n_pairs_covered = 0;
  double coverage = 0.0;
  // Uncovered (cell, bin) pairs, capped; cell index = jy * nx + jx.
  std::vector<std::pair<int, int>> uncovered;
};

// Re-traces every exited record, checks the Jacobi field for interior zeros,
// and marks which (interior cell, codirection bin) pairs are touched by some
// ray. A pair is covered when a ray sample lies within rho of the cell center
// and the ray direction is g-orthogonal to the bin codirection within
// angle_tol.
inline AuditReport audit_lens_data(const GeodesicFlow& flow,
                                   const LensDataset& ds,
                                   const AuditOptions& opt = {},
                                   const FlowOptions& flow_opt = {}) {
  AuditReport rep;
  rep.options = opt;
  rep.n_records = static_cast<int>(ds.records.size());

  const MetricChart& chart = flow.chart();
  const int nx = opt.nx, ny = opt.ny;
  const double cell_w = 2.0 * opt.extent / nx, cell_h = 2.0 * opt.extent / ny;

  // Cell centers inside the disc, with their inverse metrics and per-bin
  // thresholds |zeta_b . v| <= sin(angle_tol) * |zeta_b|_{g^-1}.
  std::vector<int> cell_of(static_cast<std::size_t>(nx) * ny, -1);
  std::vector<Vec2> centers;
  std::vector<int> flat_of;                     // inverse of cell_of
  std::vector<std::vector<double>> thresholds;  // [cell][bin]
  std::vector<Vec2> zetas(opt.ndir);
  for (int b = 0; b < opt.ndir; ++b) {
    double phi = kPi * b / opt.ndir;
    zetas[b] = Vec2(std::cos(phi), std::sin(phi));
  }
  for (int jy = 0; jy < ny; ++jy) {
    for (int jx = 0; jx < nx; ++jx) {
      Vec2 c(-opt.extent + (jx + 0.5) * cell_w, -opt.extent + (jy + 0.5) * cell_h);
      if (c.norm() > opt.extent) continue;
      cell_of[static_cast<std::size_t>(jy) * nx + jx] =
          static_cast<int>(centers.size());
      flat_of.push_back(jy * nx + jx);
      centers.push_back(c);
      Mat2 ginv = chart.metric(c).inverse();
      std::vector<double> th(opt.ndir);
      for (int b = 0; b < opt.ndir; ++b) {
        th[b] = std::sin(opt.angle_tol) *
                std::sqrt(zetas[b].dot(ginv * zetas[b]));
      }
      thresholds.push_back(std::move(th));
    }
  }
  rep.n_cells = static_cast<int>(centers.size());
  rep.n_pairs_total = rep.n_cells * opt.ndir;
  std::vector<std::vector<char>> covered(
      centers.size(), std::vector<char>(opt.ndir, 0));

  FlowOptions fo = flow_opt;
  fo.stop_at_boundary = true;
  fo.with_jacobi = true;
  fo.store_every = opt.resample_stride;

  const int reach_x = static_cast<int>(opt.rho / cell_w) + 1;
  const int reach_y = static_cast<int>(opt.rho / cell_h) + 1;

  for (const LensRecord& rec : ds.records) {
    if (rec.status != RayStatus::exited) {
      ++rep.n_trapped;
      continue;
    }
    if (std::abs(rec.in.mu) >= 1.0 - 1e-15) {
      ++rep.n_exited;  // grazing identity record; nothing to walk
      continue;
    }
    auto [x0, xi0] = enter_state(chart, rec.in);
    RayPath path = flow.shoot(x0, xi0, fo);
    if (path.status != RayStatus::exited) {
      ++rep.n_trapped;
      continue;
    }
    ++rep.n_exited;
    if (path.first_jacobi_zero) {
      double tz = *path.first_jacobi_zero;
      if (tz < path.length - opt.conjugate_tol) {
        ++rep.n_conjugate;
      } else {
        ++rep.n_marginal;
      }
    }
    for (const RaySample& smp : path.samples) {
      int jx0 = static_cast<int>((smp.x.x() + opt.extent) / cell_w);
      int jy0 = static_cast<int>((smp.x.y() + opt.extent) / cell_h);
      for (int jy = jy0 - reach_y; jy <= jy0 + reach_y; ++jy) {
        if (jy < 0 || jy >= ny) continue;
        for (int jx = jx0 - reach_x; jx <= jx0 + reach_x; ++jx) {
          if (jx < 0 || jx >= nx) continue;
          int cid = cell_of[static_cast<std::size_t>(jy) * nx + jx];
          if (cid < 0) continue;
          if ((centers[cid] - smp.x).norm() > opt.rho) continue;
          for (int b = 0; b < opt.ndir; ++b) {
            if (!covered[cid][b] &&
                std::abs(zetas[b].dot(smp.xi)) <= thresholds[cid][b]) {
              covered[cid][b] = 1;
            }
          }
        }
      }
    }
  }

  for (std::size_t c = 0; c < covered.size(); ++c) {
    for (int b = 0; b < opt.ndir; ++b) {
      if (covered[c][b]) {
        ++rep.n_pairs_covered;
      } else if (rep.uncovered.size() < 4096) {
        rep.uncovered.emplace_back(flat_of[c], b);
      }
    }
  }
  rep.coverage =
      rep.n_pairs_total ? double(rep.n_pairs_covered) / rep.n_pairs_total : 0.0;
  return rep;
}

}  // namespace lenslab

#endif  // LENSLAB_LENS_HPP
