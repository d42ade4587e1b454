#ifndef LENSLAB_COMMON_HPP
#define LENSLAB_COMMON_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace lenslab {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kPi = 3.14159265358979323846;

// Thrown when a run configuration is structurally invalid (unknown key, bad
// value). The CLI maps this to exit code 2.
class config_error : public std::runtime_error {
public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when an iterative solve or a numerical postcondition fails. The CLI
// maps this to exit code 3.
class solver_error : public std::runtime_error {
public:
  explicit solver_error(const std::string& what) : std::runtime_error(what) {}
};

inline double sqr(double x) { return x * x; }

inline double inf() { return std::numeric_limits<double>::infinity(); }

// Wrap an angle to [0, 2*pi).
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  return a < 0.0 ? a + 2.0 * kPi : a;
}

// Signed distance between two points of a periodic coordinate, in (-P/2, P/2].
inline double periodic_diff(double a, double b, double period) {
  double d = std::fmod(a - b, period);
  if (d > 0.5 * period) d -= period;
  if (d <= -0.5 * period) d += period;
  return d;
}

// Cubic smoothstep: 0 for t <= 0, 1 for t >= 1, 3t^2 - 2t^3 between.
inline double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * (3.0 - 2.0 * t);
}

// FNV-1a, used for chart and config fingerprints embedded in artifacts.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Shortest round-trip decimal form; used by every CSV writer so artifacts are
// byte-identical across runs.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// SplitMix64 step; gives a well-mixed word from a counter. Used to derive
// per-record jitter deterministically, independent of evaluation order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Uniform double in [-1, 1] from a hash word.
inline double hash_unit(std::uint64_t word) {
  return 2.0 * (static_cast<double>(word >> 11) * 0x1.0p-53) - 1.0;
}

inline int thread_count() {
  if (const char* env = std::getenv("LENSLAB_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static-partition parallel loop. Results must not depend on the partition:
// callers write to disjoint slots and do any reductions afterwards in index
// order, so artifacts stay deterministic for every thread count.
template <class F>
void parallel_for(std::size_t n, F&& body) {
  int nt = thread_count();
  if (nt <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  nt = static_cast<int>(std::min<std::size_t>(nt, n));
  std::vector<std::thread> pool;
  pool.reserve(nt);
  std::size_t chunk = (n + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

// Least-squares polynomial fit sum_k c_k x^k of the given degree.
inline Eigen::VectorXd polyfit(const std::vector<double>& x,
                               const std::vector<double>& y, int degree) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("polyfit: empty or mismatched samples");
  if (static_cast<int>(x.size()) < degree + 1)
    throw std::invalid_argument("polyfit: not enough samples for degree");
  Eigen::MatrixXd V(x.size(), degree + 1);
  for (std::size_t r = 0; r < x.size(); ++r) {
    double p = 1.0;
    for (int k = 0; k <= degree; ++k) {
      V(r, k) = p;
      p *= x[r];
    }
  }
  Eigen::Map<const Eigen::VectorXd> rhs(y.data(), y.size());
  return V.colPivHouseholderQr().solve(rhs);
}

inline double poly_eval(const Eigen::VectorXd& c, double x) {
  double v = 0.0;
  for (int k = static_cast<int>(c.size()) - 1; k >= 0; --k) v = v * x + c[k];
  return v;
}

inline double poly_deriv_eval(const Eigen::VectorXd& c, double x) {
  double v = 0.0;
  for (int k = static_cast<int>(c.size()) - 1; k >= 1; --k)
    v = v * x + k * c[k];
  return v;
}

struct CgReport {
  int iterations = 0;
  double residual = 0.0;  // final |r| / |b|
  bool converged = false;
};

// Plain conjugate gradients on a symmetric positive semidefinite operator,
// matrix-free. `apply(p, out)` must write A p into out. Convergence is
// relative to |b|; x holds the best iterate either way.
template <class Op>
CgReport cg_solve(Op&& apply, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                  double tol, int max_iter) {
  CgReport rep;
  double bnorm = b.norm();
  x = Eigen::VectorXd::Zero(b.size());
  if (bnorm == 0.0) {
    rep.converged = true;
    return rep;
  }
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  Eigen::VectorXd ap(b.size());
  double rr = r.squaredNorm();
  for (int it = 0; it < max_iter; ++it) {
    apply(p, ap);
    double pap = p.dot(ap);
    if (pap <= 0.0) break;  // hit the kernel or lost positivity
    double alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    double rr_next = r.squaredNorm();
    rep.iterations = it + 1;
    rep.residual = std::sqrt(rr_next) / bnorm;
    if (rep.residual <= tol) {
      rep.converged = true;
      return rep;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  rep.residual = r.norm() / bnorm;
  rep.converged = rep.residual <= tol;
  return rep;
}

// Log-log slope of y against x by least squares; the standard way the
// experiment reports convergence orders.
inline double loglog_slope(const std::vector<double>& x,
                           const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("loglog_slope: need at least two samples");
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0.0 || y[i] <= 0.0)
      throw std::domain_error("loglog_slope: nonpositive sample");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  Eigen::VectorXd c = polyfit(lx, ly, 1);
  return c[1];
}

}  // namespace lenslab

#endif  // LENSLAB_COMMON_HPP
