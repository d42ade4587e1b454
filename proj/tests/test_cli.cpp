#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "lenslab/tensor.hpp"

// Exercises the installed binary end to end: exit codes, artifact
// determinism, and the config plumbing the spec examples rely on.

namespace {

struct RunResult {
  int rc = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

RunResult run(const std::string& args) {
  const std::string out = "/tmp/lenslab_cli_out.txt";
  const std::string err = "/tmp/lenslab_cli_err.txt";
  std::string cmd = std::string(LENSLAB_BIN) + " " + args + " >" + out +
                    " 2>" + err;
  int raw = std::system(cmd.c_str());
  RunResult r;
  r.rc = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

const char* kFlat =
    "--set metric.family=euclidean --set lens.s_count=8 --set lens.mu_count=6";

// a smooth compactly supported field on a small grid, shared by the
// subcommands that read a tensor CSV
void write_field17() {
  auto grid = lenslab::make_tensor_grid(17, 1.05);
  lenslab::SymTensorField f = lenslab::sample_tensor(
      grid,
      [](const lenslab::Vec2& q) {
        double b = std::max(0.0, 1.0 - q.squaredNorm());
        return b * b;
      },
      [](const lenslab::Vec2& q) {
        double b = std::max(0.0, 1.0 - q.squaredNorm());
        return 0.4 * b * b * q.x();
      },
      [](const lenslab::Vec2& q) {
        double b = std::max(0.0, 1.0 - q.squaredNorm());
        return 0.7 * b * b;
      });
  lenslab::write_tensor_csv_file("/tmp/ll_field.csv", f);
}

}  // namespace

TEST_CASE("usage errors and help map to the documented exit codes") {
  CHECK(run("").rc == 2);
  CHECK(run("--help").rc == 0);
  CHECK(run("lens").rc == 2);
  CHECK(run("nosuchcommand").rc == 2);
  CHECK(run("lens gen --no-such-flag").rc == 2);
}

TEST_CASE("invalid configs exit 2 with a field-path diagnostic") {
  RunResult bad_h = run("lens gen --set metric.family=euclidean --set integrator.h=-1");
  CHECK(bad_h.rc == 2);
  CHECK_THAT(bad_h.err, Catch::Matchers::ContainsSubstring("integrator.h"));

  RunResult unknown = run("lens gen --set metric.family=euclidean --set nosuch.key=1");
  CHECK(unknown.rc == 2);
  CHECK_THAT(unknown.err, Catch::Matchers::ContainsSubstring("nosuch.key"));

  RunResult missing = run("lens gen");
  CHECK(missing.rc == 2);
  CHECK_THAT(missing.err, Catch::Matchers::ContainsSubstring("metric.family"));
}

TEST_CASE("numerical failures exit 3") {
  RunResult r = run(std::string("rigidity ") + kFlat +
                    " --set rigidity.eps=1.3 --set tensor.n=9");
  CHECK(r.rc == 3);
  CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("error"));
}

TEST_CASE("lens gen writes stamped, byte-identical artifacts") {
  RunResult first = run(std::string("lens gen ") + kFlat + " -o /tmp/ll_a.csv");
  REQUIRE(first.rc == 0);
  RunResult second = run(std::string("lens gen ") + kFlat + " -o /tmp/ll_b.csv");
  REQUIRE(second.rc == 0);
  std::string a = slurp("/tmp/ll_a.csv");
  CHECK(a == slurp("/tmp/ll_b.csv"));
  CHECK_THAT(a, Catch::Matchers::StartsWith("# lenslab lens dataset v1\n# config="));
  CHECK(a.find("\r") == std::string::npos);

  // stdout and file output coincide
  RunResult to_stdout = run(std::string("lens gen ") + kFlat);
  CHECK(to_stdout.out == a);

  // any changed key lands in the stamp
  RunResult other = run(std::string("lens gen ") + kFlat +
                        " --set integrator.h=0.002 -o /tmp/ll_c.csv");
  REQUIRE(other.rc == 0);
  std::string stamp_a = a.substr(0, a.find('\n', a.find("# config=")));
  std::string c = slurp("/tmp/ll_c.csv");
  std::string stamp_c = c.substr(0, c.find('\n', c.find("# config=")));
  CHECK(stamp_a != stamp_c);
}

TEST_CASE("audit rejects a dataset from a different metric") {
  REQUIRE(run(std::string("lens gen ") + kFlat + " -o /tmp/ll_flat.csv").rc == 0);
  RunResult mismatch = run(
      "lens audit --set metric.family=sphere --in /tmp/ll_flat.csv");
  CHECK(mismatch.rc == 2);
  CHECK_THAT(mismatch.err, Catch::Matchers::ContainsSubstring("different metric"));

  RunResult ok = run(std::string("lens audit ") + kFlat + " --in /tmp/ll_flat.csv");
  CHECK(ok.rc == 0);
  CHECK_THAT(ok.out, Catch::Matchers::ContainsSubstring("\"coverage\""));
}

TEST_CASE("jet subcommand reports the flat-disc jet") {
  RunResult r = run("jet --set metric.family=euclidean --x0 1.0");
  REQUIRE(r.rc == 0);
  CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("\"g11\": 1.000"));
  CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("\"dn_g11\": -2.000"));
}

TEST_CASE("xray, invert, and the system cache work together") {
  write_field17();
  std::remove("/tmp/ll_sys.bin");
  std::string flat17 = std::string(kFlat) + " --set tensor.n=17";
  RunResult xr = run("tensor xray " + flat17 +
                     " --in /tmp/ll_field.csv --cache /tmp/ll_sys.bin"
                     " -o /tmp/ll_paths.csv");
  REQUIRE(xr.rc == 0);
  std::string paths = slurp("/tmp/ll_paths.csv");
  CHECK_THAT(paths, Catch::Matchers::ContainsSubstring(",value"));

  // second run picks the cache up and reproduces the file byte for byte
  RunResult xr2 = run("tensor xray " + flat17 +
                      " --in /tmp/ll_field.csv --cache /tmp/ll_sys.bin"
                      " -o /tmp/ll_paths2.csv");
  REQUIRE(xr2.rc == 0);
  CHECK(slurp("/tmp/ll_paths2.csv") == paths);

  // a different metric must refuse the cached system
  RunResult wrong = run("tensor xray --set metric.family=sphere"
                        " --set lens.s_count=8 --set lens.mu_count=6"
                        " --set tensor.n=17 --cache /tmp/ll_sys.bin");
  CHECK(wrong.rc == 2);
  CHECK_THAT(wrong.err, Catch::Matchers::ContainsSubstring("different metric"));

  RunResult inv = run("tensor invert " + flat17 +
                      " --data /tmp/ll_paths.csv --cache /tmp/ll_sys.bin"
                      " --out-fs /tmp/ll_fshat.csv");
  REQUIRE(inv.rc == 0);
  CHECK_THAT(inv.out, Catch::Matchers::ContainsSubstring("\"residual\""));

  // geometry-only xray output carries no data column, so invert rejects it
  RunResult geo = run("tensor xray " + flat17 + " --cache /tmp/ll_sys.bin"
                      " -o /tmp/ll_geo.csv");
  REQUIRE(geo.rc == 0);
  RunResult nodata = run("tensor invert " + flat17 +
                         " --data /tmp/ll_geo.csv --cache /tmp/ll_sys.bin");
  CHECK(nodata.rc == 2);
  CHECK_THAT(nodata.err, Catch::Matchers::ContainsSubstring("value"));
}

TEST_CASE("decompose round-trips through its CSV artifacts") {
  write_field17();
  std::string flat17 = std::string(kFlat) + " --set tensor.n=17";
  RunResult d1 = run("tensor decompose " + flat17 +
                     " --in /tmp/ll_field.csv --out-fs /tmp/ll_fs1.csv"
                     " --out-v /tmp/ll_v1.csv");
  REQUIRE(d1.rc == 0);
  RunResult d2 = run("tensor decompose " + flat17 +
                     " --in /tmp/ll_field.csv --out-fs /tmp/ll_fs2.csv"
                     " --out-v /tmp/ll_v2.csv");
  REQUIRE(d2.rc == 0);
  CHECK(slurp("/tmp/ll_fs1.csv") == slurp("/tmp/ll_fs2.csv"));
  CHECK(slurp("/tmp/ll_v1.csv") == slurp("/tmp/ll_v2.csv"));

  // the stamped artifact reads back on the same grid
  std::ifstream is("/tmp/ll_fs1.csv", std::ios::binary);
  lenslab::SymTensorField fs = lenslab::read_tensor_csv(is);
  CHECK(fs.grid->n == 17);
}

TEST_CASE("verify runs the property suite from a config file") {
  RunResult r = run("verify -c " CONFIG_DIR "/euclid.cfg");
  CHECK(r.rc == 0);
  CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("0 failures"));
  CHECK(r.out.find("FAIL") == std::string::npos);
}
