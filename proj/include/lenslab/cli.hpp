#ifndef LENSLAB_CLI_HPP
#define LENSLAB_CLI_HPP

// Command line front end. Every subcommand follows the same recipe: load the
// config file, apply --set overrides, validate every standard block (so one
// file can drive the whole pipeline and typos are caught no matter which
// subcommand sees them first), reject leftover unknown keys, then run. Each
// artifact is stamped with the config fingerprint so outputs can be traced
// back to the exact inputs that produced them.
//
// Exit codes: 0 success, 1 failed verify checks, 2 invalid config or usage,
// 3 numerical failure inside a solver.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "lenslab/config.hpp"
#include "lenslab/jet.hpp"
#include "lenslab/lens.hpp"
#include "lenslab/rigidity.hpp"
#include "lenslab/selftest.hpp"
#include "lenslab/tensor.hpp"
#include "lenslab/xray.hpp"

namespace lenslab {
namespace clidetail {

using json = nlohmann::ordered_json;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
};

inline void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("-c,--config", c.config_path,
                  "config file with 'key = value' lines");
  cmd->add_option("--set", c.sets, "override a config key, key=value");
}

inline Config load_config(const CommonOpts& c) {
  Config cfg;
  if (!c.config_path.empty()) cfg = Config::parse_file(c.config_path);
  for (const std::string& s : c.sets) cfg.apply_override(s);
  return cfg;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw config_error("cannot open input file: " + path);
  return is;
}

// All text artifacts go through here: binary mode keeps LF endings on every
// platform, and an empty path means stdout.
inline void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw config_error("cannot open output file: " + path);
  os << text;
  if (!os) throw config_error("failed while writing: " + path);
}

inline void emit_json(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

// Inserts a "# config=<hex>" line after the first line of a CSV produced by
// one of the library writers, so the format magic stays on line one and the
// readers (which skip unknown # lines) stay compatible.
inline std::string stamp_after_magic(const std::string& text,
                                     std::uint64_t fingerprint) {
  std::string stamp = "# config=" + hex64(fingerprint) + "\n";
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos) return stamp + text;
  return text.substr(0, pos + 1) + stamp + text.substr(pos + 1);
}

inline json report_head(const char* subcommand, const Config& cfg,
                        const MetricChart& chart) {
  json j;
  j["tool"] = "lenslab";
  j["subcommand"] = subcommand;
  j["config_fingerprint"] = hex64(cfg.fingerprint());
  j["metric_fingerprint"] = hex64(chart.fingerprint());
  return j;
}

// Builds the forward system for the configured lens grid, loading it from the
// cache file when one is given and already present. A cached system must
// match the configured metric and tensor grid exactly.
inline ForwardSystem obtain_system(const GeodesicFlow& flow,
                                   const LensGrid& lg, const GridPtr& grid,
                                   const AssembleOptions& ao,
                                   const std::string& cache) {
  if (!cache.empty()) {
    std::ifstream probe(cache, std::ios::binary);
    if (probe) {
      probe.close();
      ForwardSystem sys = load_system(cache);
      if (sys.metric_fingerprint != flow.chart().fingerprint())
        throw config_error("cached system '" + cache +
                           "' was built for a different metric");
      if (!sys.grid->same_layout(*grid))
        throw config_error("cached system '" + cache +
                           "' uses a different tensor grid");
      return sys;
    }
  }
  ForwardSystem sys = assemble(flow, lg, grid, ao);
  if (!cache.empty()) save_system(cache, sys);
  return sys;
}

// Reads the value column back out of an xray path CSV. The header line must
// end in ",value" so that a file without integrals cannot be mistaken for
// data.
inline Eigen::VectorXd read_value_column(std::istream& is,
                                         const std::string& origin) {
  std::vector<double> vals;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    char c0 = line[0];
    if (!std::isdigit(static_cast<unsigned char>(c0)) && c0 != '-' &&
        c0 != '+') {
      header_seen = true;
      if (line.size() < 6 || line.substr(line.size() - 6) != ",value")
        throw config_error(origin +
                           ": header has no trailing 'value' column; run "
                           "'tensor xray' with --in to produce data");
      continue;
    }
    std::size_t pos = line.rfind(',');
    if (pos == std::string::npos || pos + 1 >= line.size())
      throw config_error(origin + ": malformed data row: " + line);
    try {
      vals.push_back(std::stod(line.substr(pos + 1)));
    } catch (const std::exception&) {
      throw config_error(origin + ": malformed value in row: " + line);
    }
  }
  if (!header_seen) throw config_error(origin + ": missing column header");
  Eigen::VectorXd out(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t k = 0; k < vals.size(); ++k)
    out[static_cast<Eigen::Index>(k)] = vals[k];
  return out;
}

}  // namespace clidetail

inline int cli_main(int argc, char** argv) {
  using clidetail::json;
  namespace cd = clidetail;

  CLI::App app{
      "lenslab: lens data, boundary jets, and tensor tomography on "
      "two-dimensional Riemannian discs"};
  app.require_subcommand(1);
  int rc = 0;

  // --- lens ---------------------------------------------------------------
  CLI::App* lens = app.add_subcommand("lens", "boundary lens data");
  lens->require_subcommand(1);

  cd::CommonOpts gen_c;
  std::string gen_out;
  CLI::App* gen =
      lens->add_subcommand("gen", "shoot the lens grid and write a CSV");
  cd::add_common(gen, gen_c);
  gen->add_option("-o,--out", gen_out, "output CSV (stdout when omitted)");
  gen->callback([&] {
    Config cfg = cd::load_config(gen_c);
    validate_all_blocks(cfg);
    MetricChart chart = build_chart(cfg);
    FlowOptions fo = build_flow(cfg);
    LensGrid grid = build_lens_grid(cfg);
    JitterOptions jit = build_jitter(cfg);
    cfg.finish();
    GeodesicFlow flow(chart);
    LensDataset ds = generate_lens_data(flow, grid, fo, jit);
    std::ostringstream body;
    write_lens_csv(ds, body);
    cd::write_text(gen_out,
                   cd::stamp_after_magic(body.str(), cfg.fingerprint()));
  });

  cd::CommonOpts aud_c;
  std::string aud_in, aud_out;
  CLI::App* aud = lens->add_subcommand(
      "audit", "coverage and conjugate-point audit of a lens dataset");
  cd::add_common(aud, aud_c);
  aud->add_option("--in", aud_in, "lens dataset CSV")->required();
  aud->add_option("-o,--out", aud_out, "JSON report (stdout when omitted)");
  aud->callback([&] {
    Config cfg = cd::load_config(aud_c);
    validate_all_blocks(cfg);
    MetricChart chart = build_chart(cfg);
    FlowOptions fo = build_flow(cfg);
    AuditOptions ao = build_audit(cfg);
    cfg.finish();
    std::ifstream is = cd::open_in(aud_in);
    LensDataset ds = read_lens_csv(is);
    if (ds.metric_fingerprint != chart.fingerprint())
      throw config_error(
          "dataset '" + aud_in +
          "' was generated with a different metric (fingerprint " +
          hex64(ds.metric_fingerprint) + ", config gives " +
          hex64(chart.fingerprint()) + ")");
    GeodesicFlow flow(chart);
    AuditReport rep = audit_lens_data(flow, ds, ao, fo);
    json j = cd::report_head("lens audit", cfg, chart);
    j["records"] = rep.n_records;
    j["exited"] = rep.n_exited;
    j["trapped"] = rep.n_trapped;
    j["conjugate"] = rep.n_conjugate;
    j["marginal"] = rep.n_marginal;
    j["cells"] = rep.n_cells;
    j["pairs_total"] = rep.n_pairs_total;
    j["pairs_covered"] = rep.n_pairs_covered;
    j["coverage"] = rep.coverage;
    json unc = json::array();
    for (const auto& [cell, bin] : rep.uncovered)
      unc.push_back(json::array({cell, bin}));
    j["uncovered"] = unc;
    cd::emit_json(aud_out, j);
  });

  // --- jet ----------------------------------------------------------------
  cd::CommonOpts jet_c;
  double jet_x0 = 0.0;
  std::string jet_out;
  CLI::App* jetc = app.add_subcommand(
      "jet", "recover the boundary jet of the metric from lens data");
  cd::add_common(jetc, jet_c);
  jetc->add_option("--x0", jet_x0, "boundary anchor as arc length from theta=0");
  jetc->add_option("-o,--out", jet_out, "JSON report (stdout when omitted)");
  jetc->callback([&] {
    Config cfg = cd::load_config(jet_c);
    validate_all_blocks(cfg);
    MetricChart chart = build_chart(cfg);
    JetOptions jo = build_jet(cfg);
    cfg.finish();
    GeodesicFlow flow(chart);
    double theta0 = chart.theta_from_arclength(jet_x0);
    JetRecovery rec(flow, jo);
    BoundaryJet bj = rec.recover(theta0);
    json j = cd::report_head("jet", cfg, chart);
    j["x0"] = jet_x0;
    j["theta0"] = bj.theta0;
    j["g11"] = bj.g11;
    j["dn_g11"] = bj.dn_g11;
    json lad;
    lad["eps"] = bj.diag.eps;
    lad["g11"] = bj.diag.g11_eps;
    lad["dn_ginv"] = bj.diag.dn_ginv_eps;
    std::vector<double> res;
    for (double v : bj.diag.g11_eps) res.push_back(v - bj.g11);
    lad["g11_residual"] = res;
    j["ladder"] = lad;
    cd::emit_json(jet_out, j);
  });

  // --- tensor -------------------------------------------------------------
  CLI::App* tensor =
      app.add_subcommand("tensor", "symmetric 2-tensor workflows");
  tensor->require_subcommand(1);

  cd::CommonOpts dec_c;
  std::string dec_in, dec_fs, dec_v, dec_out;
  CLI::App* dec = tensor->add_subcommand(
      "decompose", "split a field into a solenoidal part and a potential");
  cd::add_common(dec, dec_c);
  dec->add_option("--in", dec_in, "tensor field CSV")->required();
  dec->add_option("--out-fs", dec_fs, "solenoidal part CSV");
  dec->add_option("--out-v", dec_v, "potential covector CSV");
  dec->add_option("-o,--out", dec_out, "JSON report (stdout when omitted)");
  dec->callback([&] {
    Config cfg = cd::load_config(dec_c);
    validate_all_blocks(cfg);
    MetricChart chart = build_chart(cfg);
    InvertOptions iv = build_invert(cfg);
    cfg.finish();
    std::ifstream is = cd::open_in(dec_in);
    SymTensorField f = read_tensor_csv(is);
    TensorCalculus calc(chart, f.grid);
    Decomposition d = calc.decompose(f, iv.cg_tol, iv.cg_max_iter);
    if (!dec_fs.empty()) {
      std::ostringstream os;
      write_tensor_csv(os, d.fs);
      cd::write_text(dec_fs,
                     cd::stamp_after_magic(os.str(), cfg.fingerprint()));
    }
    if (!dec_v.empty()) {
      std::ostringstream os;
      write_vector_csv(os, d.v);
      cd::write_text(dec_v,
                     cd::stamp_after_magic(os.str(), cfg.fingerprint()));
    }
    json j = cd::report_head("tensor decompose", cfg, chart);
    j["grid_n"] = f.grid->n;
    j["extent"] = f.grid->extent;
    j["cg_iterations"] = d.report.cg_iterations;
    j["cg_residual"] = d.report.cg_residual;
    j["div_fs_interior"] = d.report.div_fs_interior;
    j["div_fs_edge"] = d.report.div_fs_edge;
    j["norm_f"] = calc.l2_norm(f);
    j["norm_fs"] = calc.l2_norm(d.fs);
    j["norm_dv"] = calc.l2_norm(calc.sym_differential(d.v));
    cd::emit_json(dec_out, j);
  });

  cd::CommonOpts xr_c;
  std::string xr_in, xr_out, xr_cache;
  CLI::App* xr = tensor->add_subcommand(
      "xray", "assemble the forward map and integrate a field along rays");
  cd::add_common(xr, xr_c);
  xr->add_option("--in", xr_in,
                 "tensor field CSV to integrate (omit for geometry only)");
  xr->add_option("-o,--out", xr_out, "per-path CSV (stdout when omitted)");
  xr->add_option("--cache", xr_cache, "binary system container to reuse");
  xr->callback([&] {
    Config cfg = cd::load_config(xr_c);
    validate_all_blocks(cfg);
    MetricChart chart = build_chart(cfg);
    LensGrid lg = build_lens_grid(cfg);
    GridPtr grid = build_tensor_grid(cfg);
    AssembleOptions ao = build_assemble(cfg);
    cfg.finish();
    GeodesicFlow flow(chart);
    ForwardSystem sys = cd::obtain_system(flow, lg, grid, ao, xr_cache);
    bool with_values = !xr_in.empty();
    Eigen::VectorXd y;
    if (with_values) {
      std::ifstream is = cd::open_in(xr_in);
      SymTensorField f = read_tensor_csv(is);
      if (!f.grid->same_layout(*sys.grid))
        throw config_error("field '" + xr_in +
                           "' lives on a different grid than the system");
      y = sys.A * f.flatten();
    }
    std::ostringstream os;
    os << "# lenslab xray paths v1\n";
    os << "# config=" << hex64(cfg.fingerprint()) << "\n";
    os << "# metric_fingerprint=" << hex64(sys.metric_fingerprint) << "\n";
    os << "# rows=" << sys.rows() << " grid_n=" << sys.grid->n
       << " extent=" << format_double(sys.grid->extent) << "\n";
    os << "row,s_in,mu_in,alpha,weight,length";
    if (with_values) os << ",value";
    os << "\n";
    for (int r = 0; r < sys.rows(); ++r) {
      os << r << ',' << format_double(sys.entries[r].s) << ','
         << format_double(sys.entries[r].mu) << ','
         << format_double(sys.alpha[r]) << ',' << format_double(sys.weight[r])
         << ',' << format_double(sys.length[r]);
      if (with_values) os << ',' << format_double(y[r]);
      os << "\n";
    }
    cd::write_text(xr_out, os.str());
  });

  cd::CommonOpts inv_c;
  std::string inv_data, inv_cache, inv_f, inv_fs, inv_v, inv_out;
  double inv_lambda = -1.0;
  bool inv_lambda_set = false;
  CLI::App* inv = tensor->add_subcommand(
      "invert", "reconstruct a tensor field from ray integrals");
  cd::add_common(inv, inv_c);
  inv->add_option("--data", inv_data, "xray path CSV with a value column")
      ->required();
  inv->add_option("--cache", inv_cache, "binary system container to reuse");
  inv->add_option("--lambda", inv_lambda, "Tikhonov weight (overrides config)")
      ->trigger_on_parse()
      ->each([&](const std::string&) { inv_lambda_set = true; });
  inv->add_option("--out-f", inv_f, "reconstructed field CSV");
  inv->add_option("--out-fs", inv_fs, "solenoidal part CSV");
  inv->add_option("--out-v", inv_v, "potential covector CSV");
  inv->add_option("-o,--out", inv_out, "JSON report (stdout when omitted)");
  inv->callback([&] {
    Config cfg = cd::load_config(inv_c);
    validate_all_blocks(cfg);
    MetricChart chart = build_chart(cfg);
    LensGrid lg = build_lens_grid(cfg);
    GridPtr grid = build_tensor_grid(cfg);
    AssembleOptions ao = build_assemble(cfg);
    InvertOptions iv = build_invert(cfg);
    cfg.finish();
    if (inv_lambda_set) iv.lambda = inv_lambda;
    GeodesicFlow flow(chart);
    ForwardSystem sys = cd::obtain_system(flow, lg, grid, ao, inv_cache);
    std::ifstream is = cd::open_in(inv_data);
    Eigen::VectorXd data = cd::read_value_column(is, inv_data);
    if (data.size() != sys.rows())
      throw config_error("data '" + inv_data + "' has " +
                         std::to_string(data.size()) + " rows, system has " +
                         std::to_string(sys.rows()));
    TensorCalculus calc(chart, grid);
    Reconstruction rec = reconstruct(sys, calc, data, iv);
    auto dump_tensor = [&](const std::string& path, const SymTensorField& f) {
      if (path.empty()) return;
      std::ostringstream os;
      write_tensor_csv(os, f);
      cd::write_text(path, cd::stamp_after_magic(os.str(), cfg.fingerprint()));
    };
    dump_tensor(inv_f, rec.f_hat);
    dump_tensor(inv_fs, rec.fs_hat);
    if (!inv_v.empty()) {
      std::ostringstream os;
      write_vector_csv(os, rec.v_hat);
      cd::write_text(inv_v,
                     cd::stamp_after_magic(os.str(), cfg.fingerprint()));
    }
    json j = cd::report_head("tensor invert", cfg, chart);
    j["rows"] = sys.rows();
    j["grid_n"] = sys.grid->n;
    j["lambda"] = rec.lambda;
    j["sigma_max"] = rec.sigma_max;
    j["residual"] = rec.residual;
    j["cg_iterations"] = rec.cg_iterations;
    j["norm_f_hat"] = calc.l2_norm(rec.f_hat);
    j["norm_fs_hat"] = calc.l2_norm(rec.fs_hat);
    cd::emit_json(inv_out, j);
  });

  // --- spectrum -----------------------------------------------------------
  cd::CommonOpts sp_c;
  std::string sp_out, sp_cache;
  CLI::App* sp = app.add_subcommand(
      "spectrum", "singular spectrum of the forward map on the two summands");
  cd::add_common(sp, sp_c);
  sp->add_option("--cache", sp_cache, "binary system container to reuse");
  sp->add_option("-o,--out", sp_out, "JSON report (stdout when omitted)");
  sp->callback([&] {
    Config cfg = cd::load_config(sp_c);
    validate_all_blocks(cfg);
    MetricChart chart = build_chart(cfg);
    LensGrid lg = build_lens_grid(cfg);
    GridPtr grid = build_tensor_grid(cfg);
    AssembleOptions ao = build_assemble(cfg);
    SpectrumOptions so = build_spectrum(cfg);
    cfg.finish();
    GeodesicFlow flow(chart);
    ForwardSystem sys = cd::obtain_system(flow, lg, grid, ao, sp_cache);
    TensorCalculus calc(chart, grid);
    Eigen::MatrixXd sol = solenoidal_basis(calc, so.basis_tol);
    SpectrumReport rep = sinjectivity_spectrum(sys, calc, sol, so);
    json j = cd::report_head("spectrum", cfg, chart);
    j["rows"] = sys.rows();
    j["grid_n"] = grid->n;
    j["solenoidal_dim"] = rep.solenoidal_dim;
    j["potential_dim"] = rep.potential_dim;
    j["sigma_min_solenoidal"] = rep.sigma_min_solenoidal;
    j["sigma_max_solenoidal"] = rep.sigma_max_solenoidal;
    j["sigma_max_potential"] = rep.sigma_max_potential;
    j["separation"] = rep.sigma_max_potential > 0.0
                          ? rep.sigma_min_solenoidal / rep.sigma_max_potential
                          : 0.0;
    j["stability_constant"] = rep.stability_constant;
    std::vector<double> sv(rep.solenoidal_singular_values.data(),
                           rep.solenoidal_singular_values.data() +
                               rep.solenoidal_singular_values.size());
    j["solenoidal_singular_values"] = sv;
    cd::emit_json(sp_out, j);
  });

  // --- rigidity -------------------------------------------------------------
  cd::CommonOpts rg_c;
  std::string rg_out, rg_plot;
  CLI::App* rg = app.add_subcommand(
      "rigidity", "gauge experiments: pullback ladders, ray remainders, and "
                  "the energy identity");
  cd::add_common(rg, rg_c);
  rg->add_option("-o,--out", rg_out, "JSON report (stdout when omitted)");
  rg->add_option("--plot-csv", rg_plot, "per-amplitude table for log-log plots");
  rg->callback([&] {
    Config cfg = cd::load_config(rg_c);
    validate_all_blocks(cfg);
    MetricChart chart = build_chart(cfg);
    FlowOptions fo = build_flow(cfg);
    LensGrid lg = build_lens_grid(cfg);
    GridPtr grid = build_tensor_grid(cfg);
    AssembleOptions ao = build_assemble(cfg);
    BoundaryFixingDiffeo fam = build_diffeo(cfg);
    std::vector<double> ladder =
        cfg.get_double_list("rigidity.eps_ladder", {0.08, 0.04, 0.02, 0.01});
    int table_n = cfgdetail::at_least(cfg, "rigidity.table_n", 257, 7);
    int grid_n = cfgdetail::at_least(cfg, "rigidity.grid_n", 65, 5);
    int tau_count = cfgdetail::at_least(cfg, "rigidity.tau_count", 5, 3);
    BallPoint entry{cfg.get_double("rigidity.entry_s", 1.1),
                    cfg.get_double("rigidity.entry_mu", 0.35)};
    cfg.finish();

    GeodesicFlow flow(chart);
    SlopeReport sl = linearization_split(chart, fam, ladder, grid_n);
    ForwardSystem sys = assemble(flow, lg, grid, ao);
    RayRemainderReport rr = xray_gauge_remainder(flow, sys, fam, ladder);
    EnergyTaylorOptions eo;
    eo.tau_count = tau_count;
    eo.table_n = table_n;
    eo.flow = fo;
    EnergyTaylorReport er = energy_taylor(chart, fam, entry, eo);
    MetricChart ghat = pullback_metric(chart, fam, table_n);
    GeodesicFlow hat_flow(ghat);
    LensGaugeReport lr = lens_gauge_deviation(flow, hat_flow, lg, fo);

    json j = cd::report_head("rigidity", cfg, chart);
    j["eps"] = fam.eps;
    json jl;
    jl["eps"] = sl.eps;
    jl["linear_part"] = sl.linear_part;
    jl["remainder"] = sl.remainder;
    jl["linear_slope"] = sl.linear_slope;
    jl["remainder_slope"] = sl.remainder_slope;
    j["linearization"] = jl;
    json jr;
    jr["eps"] = rr.eps;
    jr["max_integral"] = rr.max_integral;
    jr["max_potential"] = rr.max_potential;
    jr["slope"] = rr.slope;
    jr["paths"] = rr.path_count;
    j["ray_remainder"] = jr;
    json je;
    je["tau"] = er.tau;
    je["energy"] = er.e;
    je["length0"] = er.length0;
    je["e_prime0"] = er.e_prime0;
    je["lhs"] = er.lhs;
    je["rhs"] = er.rhs;
    je["endpoint_gap"] = er.endpoint_gap;
    je["exit_mismatch"] = er.exit_mismatch;
    j["energy"] = je;
    json jg;
    jg["compared"] = lr.compared;
    jg["status_mismatch"] = lr.status_mismatch;
    jg["max_s"] = lr.max_s;
    jg["max_mu"] = lr.max_mu;
    jg["max_length"] = lr.max_length;
    j["lens_deviation"] = jg;
    cd::emit_json(rg_out, j);

    if (!rg_plot.empty()) {
      std::ostringstream os;
      os << "# lenslab rigidity ladders v1\n";
      os << "# config=" << hex64(cfg.fingerprint()) << "\n";
      os << "eps,linear_part,remainder,max_integral,max_potential\n";
      for (std::size_t k = 0; k < ladder.size(); ++k)
        os << format_double(sl.eps[k]) << ',' << format_double(sl.linear_part[k])
           << ',' << format_double(sl.remainder[k]) << ','
           << format_double(rr.max_integral[k]) << ','
           << format_double(rr.max_potential[k]) << "\n";
      cd::write_text(rg_plot, os.str());
    }
  });

  // --- verify ---------------------------------------------------------------
  cd::CommonOpts vf_c;
  std::string vf_out;
  CLI::App* vf = app.add_subcommand(
      "verify", "run the aggregate property suite for the configured chart");
  cd::add_common(vf, vf_c);
  vf->add_option("-o,--out", vf_out, "JSON report in addition to the log");
  vf->callback([&] {
    Config cfg = cd::load_config(vf_c);
    SelfTestReport rep = run_selftest(cfg);
    cfg.finish();
    for (const CheckResult& c : rep.checks) {
      const char* tag = c.skipped ? "SKIP" : (c.pass ? "PASS" : "FAIL");
      std::ostringstream line;
      line << tag << "  " << c.name;
      for (std::size_t k = c.name.size(); k < 26; ++k) line << ' ';
      line << c.detail;
      std::cout << line.str() << "\n";
    }
    std::cout << "verify: " << rep.checks.size() << " checks, "
              << rep.failures << " failures\n";
    if (!vf_out.empty()) {
      MetricChart chart = build_chart(cfg);
      json j = cd::report_head("verify", cfg, chart);
      json arr = json::array();
      for (const CheckResult& c : rep.checks) {
        json e;
        e["name"] = c.name;
        e["status"] = c.skipped ? "skip" : (c.pass ? "pass" : "fail");
        e["detail"] = c.detail;
        arr.push_back(e);
      }
      j["checks"] = arr;
      j["failures"] = rep.failures;
      cd::emit_json(vf_out, j);
    }
    if (rep.failures > 0) rc = 1;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return rc;
}

}  // namespace lenslab

#endif  // LENSLAB_CLI_HPP
