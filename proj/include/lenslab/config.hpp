#ifndef LENSLAB_CONFIG_HPP
#define LENSLAB_CONFIG_HPP

// Flat key-value run configuration with dotted section names, the single
// source every workflow reads its parameters from. Strict by design: a key
// the run never consumed is an error (it is usually a typo), numbers are
// validated where they are read, and the canonical fingerprint of the final
// key set is embedded in every artifact so outputs can be traced back to
// their exact inputs.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lenslab/common.hpp"
#include "lenslab/geodesic.hpp"
#include "lenslab/jet.hpp"
#include "lenslab/lens.hpp"
#include "lenslab/metric.hpp"
#include "lenslab/rigidity.hpp"
#include "lenslab/tensor.hpp"
#include "lenslab/xray.hpp"

namespace lenslab {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool valid_key(const std::string& k) {
  if (k.empty() || k.front() == '.' || k.back() == '.') return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.')
      return false;
  return true;
}

}  // namespace detail

class Config {
 public:
  Config() = default;

  // Parses "key = value" lines; '#' starts a comment line, blanks are
  // skipped. A key may appear only once per file.
  static Config parse(std::istream& is, const std::string& origin = "config") {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto where = [&] { return origin + ":" + std::to_string(lineno); };
      std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw config_error(where() + ": expected 'key = value', got '" + t + "'");
      std::string key = detail::trim(t.substr(0, eq));
      std::string value = detail::trim(t.substr(eq + 1));
      if (!detail::valid_key(key))
        throw config_error(where() + ": malformed key '" + key + "'");
      if (cfg.values_.count(key))
        throw config_error(where() + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("config: cannot open '" + path + "'");
    return parse(is, path);
  }

  static Config parse_string(const std::string& text,
                             const std::string& origin = "config") {
    std::istringstream is(text);
    return parse(is, origin);
  }

  // Command-line override "key=value"; replaces or adds the key.
  void apply_override(const std::string& spec) {
    std::size_t eq = spec.find('=');
    if (eq == std::string::npos)
      throw config_error("--set: expected key=value, got '" + spec + "'");
    std::string key = detail::trim(spec.substr(0, eq));
    if (!detail::valid_key(key))
      throw config_error("--set: malformed key '" + key + "'");
    values_[key] = detail::trim(spec.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // --- typed getters; every read marks the key as consumed ---------------------

  std::string get_string(const std::string& key,
                         const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw config_error("key '" + key + "': required but missing");
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return parse_double_(key, it->second);
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    try {
      std::size_t pos = 0;
      long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return static_cast<int>(v);
    } catch (const std::exception&) {
      throw config_error("key '" + key + "': expected an integer, got '" +
                         it->second + "'");
    }
  }

  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    try {
      // stoull wraps negative text around instead of rejecting it
      if (!it->second.empty() && it->second[0] == '-')
        throw std::invalid_argument("");
      std::size_t pos = 0;
      std::uint64_t v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw config_error("key '" + key +
                         "': expected an unsigned integer, got '" + it->second +
                         "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw config_error("key '" + key + "': expected true/false, got '" +
                       it->second + "'");
  }

  // Comma-separated list of numbers, e.g. ladders.
  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    std::vector<double> out;
    std::string item;
    std::istringstream is(it->second);
    while (std::getline(is, item, ',')) {
      item = detail::trim(item);
      if (item.empty())
        throw config_error("key '" + key + "': empty list entry");
      out.push_back(parse_double_(key, item));
    }
    if (out.empty())
      throw config_error("key '" + key + "': expected a number list");
    return out;
  }

  // Rejects keys nothing consumed, naming each offending field path.
  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : values_)
      if (!consumed_.count(k)) unknown.push_back(k);
    if (!unknown.empty()) {
      std::string msg = "unknown config key";
      if (unknown.size() > 1) msg += "s";
      msg += ":";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw config_error(msg);
    }
  }

  // Canonical fingerprint: keys in sorted order, independent of file
  // formatting, comments, and override order.
  std::uint64_t fingerprint() const {
    std::string canon;
    for (const auto& [k, v] : values_) canon += k + "=" + v + "\n";
    return fnv1a64(canon);
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static double parse_double_(const std::string& key, const std::string& text) {
    try {
      std::size_t pos = 0;
      double v = std::stod(text, &pos);
      if (pos != text.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw config_error("key '" + key + "': expected a number, got '" + text +
                         "'");
    }
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

// --- block builders --------------------------------------------------------------

namespace cfgdetail {

inline double positive(const Config& cfg, const std::string& key,
                       double fallback) {
  double v = cfg.get_double(key, fallback);
  if (!(v > 0.0))
    throw config_error("key '" + key + "': must be positive (got " +
                       format_double(v) + ")");
  return v;
}

inline int at_least(const Config& cfg, const std::string& key, int fallback,
                    int lo) {
  int v = cfg.get_int(key, fallback);
  if (v < lo)
    throw config_error("key '" + key + "': must be at least " +
                       std::to_string(lo) + " (got " + std::to_string(v) + ")");
  return v;
}

}  // namespace cfgdetail

// metric.family selects the chart; the remaining metric.* keys are
// family-specific parameters.
inline MetricChart build_chart(const Config& cfg) {
  std::string family = cfg.require_string("metric.family");
  double margin = cfg.get_double("metric.margin", 0.1);
  if (!(margin > 0.0 && margin <= 0.5))
    throw config_error("key 'metric.margin': must be in (0, 0.5]");
  if (family == "euclidean") return MetricChart::euclidean(margin);
  if (family == "conformal") {
    double amp = cfg.get_double("metric.phi_amplitude", 0.1);
    double off = cfg.get_double("metric.phi_offset", 0.0);
    int smooth = cfg.get_int("metric.smoothness", 6);
    return MetricChart::conformal(conformal_bump(amp, off), margin, smooth);
  }
  if (family == "sphere") return MetricChart::sphere(margin);
  if (family == "polar_normal")
    return MetricChart::polar_normal(cfg.get_double("metric.curvature", 0.5),
                                     margin);
  if (family == "tabulated") {
    std::string path = cfg.require_string("metric.table");
    std::ifstream is(path);
    if (!is) throw config_error("key 'metric.table': cannot open '" + path + "'");
    return MetricChart::tabulated(read_tabulated_csv(is), margin);
  }
  throw config_error("key 'metric.family': unknown family '" + family + "'");
}

inline FlowOptions build_flow(const Config& cfg) {
  FlowOptions fo;
  fo.h = cfgdetail::positive(cfg, "integrator.h", fo.h);
  fo.l_max = cfgdetail::positive(cfg, "integrator.l_max", fo.l_max);
  return fo;
}

inline LensGrid build_lens_grid(const Config& cfg) {
  LensGrid g;
  g.s_count = cfgdetail::at_least(cfg, "lens.s_count", g.s_count, 1);
  g.mu_count = cfgdetail::at_least(cfg, "lens.mu_count", g.mu_count, 1);
  g.mu_min = cfg.get_double("lens.mu_min", g.mu_min);
  g.mu_max = cfg.get_double("lens.mu_max", g.mu_max);
  if (!(g.mu_min < g.mu_max) || g.mu_min <= -1.0 || g.mu_max >= 1.0)
    throw config_error(
        "key 'lens.mu_min'/'lens.mu_max': need -1 < mu_min < mu_max < 1");
  return g;
}

inline JitterOptions build_jitter(const Config& cfg) {
  JitterOptions j;
  j.seed = cfg.get_seed("lens.jitter_seed", j.seed);
  j.eps = cfg.get_double("lens.jitter_eps", j.eps);
  if (j.eps < 0.0 || j.eps > 1.0)
    throw config_error("key 'lens.jitter_eps': must be in [0, 1]");
  return j;
}

inline GridPtr build_tensor_grid(const Config& cfg) {
  int n = cfgdetail::at_least(cfg, "tensor.n", 33, 9);
  double extent = cfgdetail::positive(cfg, "tensor.extent", 1.05);
  if (extent <= 1.0)
    throw config_error("key 'tensor.extent': must exceed the disc radius 1");
  return make_tensor_grid(n, extent);
}

inline ApertureSpec build_aperture(const Config& cfg) {
  ApertureSpec ap;
  ap.mu_one = cfg.get_double("aperture.mu_one", ap.mu_one);
  ap.mu_zero = cfg.get_double("aperture.mu_zero", ap.mu_zero);
  ap.mu_lo_zero = cfg.get_double("aperture.mu_lo_zero", ap.mu_lo_zero);
  ap.mu_lo_one = cfg.get_double("aperture.mu_lo_one", ap.mu_lo_one);
  ap.s_window = cfg.get_bool("aperture.s_window", ap.s_window);
  ap.s_center = cfg.get_double("aperture.s_center", ap.s_center);
  ap.s_half = cfg.get_double("aperture.s_half", ap.s_half);
  ap.s_taper = cfg.get_double("aperture.s_taper", ap.s_taper);
  try {
    ap.validate();
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("aperture.*: ") + e.what());
  }
  return ap;
}

inline AssembleOptions build_assemble(const Config& cfg) {
  AssembleOptions ao;
  ao.aperture = build_aperture(cfg);
  ao.flow = build_flow(cfg);
  ao.store_every = cfgdetail::at_least(cfg, "xray.store_every", ao.store_every, 1);
  return ao;
}

inline InvertOptions build_invert(const Config& cfg) {
  InvertOptions io;
  io.lambda = cfg.get_double("solver.lambda", io.lambda);
  io.cg_tol = cfgdetail::positive(cfg, "solver.cg_tol", io.cg_tol);
  io.cg_max_iter = cfgdetail::at_least(cfg, "solver.cg_max_iter", io.cg_max_iter, 1);
  io.seed = cfg.get_seed("solver.seed", io.seed);
  return io;
}

inline SpectrumOptions build_spectrum(const Config& cfg) {
  SpectrumOptions so;
  so.basis_tol = cfgdetail::positive(cfg, "spectrum.basis_tol", so.basis_tol);
  so.check_tol = cfgdetail::positive(cfg, "spectrum.check_tol", so.check_tol);
  so.probe_count = cfgdetail::at_least(cfg, "spectrum.probe_count", so.probe_count, 1);
  so.seed = cfg.get_seed("spectrum.seed", so.seed);
  return so;
}

inline JetOptions build_jet(const Config& cfg) {
  JetOptions jo;
  jo.eps_ladder = cfg.get_double_list("jet.eps_ladder", jo.eps_ladder);
  for (double e : jo.eps_ladder)
    if (!(e > 0.0))
      throw config_error("key 'jet.eps_ladder': amplitudes must be positive");
  jo.patch_points = cfgdetail::at_least(cfg, "jet.patch_points", jo.patch_points, 5);
  jo.fit_degree = cfgdetail::at_least(cfg, "jet.fit_degree", jo.fit_degree, 2);
  jo.anchor_offset =
      cfgdetail::positive(cfg, "jet.anchor_offset", jo.anchor_offset);
  jo.flow = build_flow(cfg);
  return jo;
}

inline AuditOptions build_audit(const Config& cfg) {
  AuditOptions ao;
  ao.nx = cfgdetail::at_least(cfg, "audit.nx", ao.nx, 2);
  ao.ny = cfgdetail::at_least(cfg, "audit.ny", ao.ny, 2);
  ao.ndir = cfgdetail::at_least(cfg, "audit.ndir", ao.ndir, 1);
  ao.extent = cfgdetail::positive(cfg, "audit.extent", ao.extent);
  ao.rho = cfgdetail::positive(cfg, "audit.rho", ao.rho);
  ao.angle_tol = cfgdetail::positive(cfg, "audit.angle_tol", ao.angle_tol);
  ao.conjugate_tol =
      cfgdetail::positive(cfg, "audit.conjugate_tol", ao.conjugate_tol);
  ao.resample_stride =
      cfgdetail::at_least(cfg, "audit.resample_stride", ao.resample_stride, 1);
  return ao;
}

// The diffeomorphism family of the rigidity experiments; direction of the
// radial bump generator plus the headline amplitude.
inline BoundaryFixingDiffeo build_diffeo(const Config& cfg) {
  Vec2 a(cfg.get_double("rigidity.wx", 0.3),
         cfg.get_double("rigidity.wy", -0.1));
  double eps = cfg.get_double("rigidity.eps", 0.05);
  if (a.norm() == 0.0)
    throw config_error("key 'rigidity.wx'/'rigidity.wy': direction is zero");
  return BoundaryFixingDiffeo::radial_bump(a, eps);
}

// Reads and validates every standard block, whether or not the checks below
// use it; verify doubles as a config linter, so a config that drives any
// other subcommand passes verify without unknown-key complaints.
inline void validate_all_blocks(const Config& cfg) {
  build_flow(cfg);
  build_lens_grid(cfg);
  build_jitter(cfg);
  build_tensor_grid(cfg);
  build_assemble(cfg);
  build_invert(cfg);
  build_spectrum(cfg);
  build_jet(cfg);
  build_audit(cfg);
  build_diffeo(cfg);
  std::vector<double> ladder =
      cfg.get_double_list("rigidity.eps_ladder", {0.08, 0.04, 0.02, 0.01});
  for (double e : ladder)
    if (!(e > 0.0))
      throw config_error("key 'rigidity.eps_ladder': amplitudes must be positive");
  cfgdetail::at_least(cfg, "rigidity.table_n", 257, 7);
  cfgdetail::at_least(cfg, "rigidity.grid_n", 65, 5);
  cfgdetail::at_least(cfg, "rigidity.tau_count", 5, 3);
  cfg.get_double("rigidity.entry_s", 1.1);
  cfg.get_double("rigidity.entry_mu", 0.35);
}

}  // namespace lenslab

#endif  // LENSLAB_CONFIG_HPP
