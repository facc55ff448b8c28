#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "contour_mpc/invariance.hpp"
#include "contour_mpc/polytope.hpp"
#include "doctest.h"

using namespace cmpc;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* p = std::getenv("CONTOUR_MPC_CLI");
  return p ? p : "";
}

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Runs the CLI with optional environment prefix; captures both streams.
Result run(const std::string& args, const fs::path& scratch, const std::string& env = "") {
  const fs::path o = scratch / "stdout.txt", e = scratch / "stderr.txt";
  const std::string cmd = env + " \"" + cli_path() + "\" " + args + " >\"" + o.string() +
                          "\" 2>\"" + e.string() + "\"";
  const int st = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& tag) {
    dir = fs::temp_directory_path() / ("contour_mpc_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name) << text;
    return dir / name;
  }
};

// A short straight path keeps the offline stage under a second.
std::string line_config(const fs::path& out, const std::string& extra = "") {
  return "[path]\nsegment = line -0.1 0 0.1 0\n[run]\noutput_dir = " + out.string() + "\n" +
         extra;
}

}  // namespace

TEST_CASE("cli binary is available") {
  REQUIRE_MESSAGE(!cli_path().empty(), "CONTOUR_MPC_CLI not set");
  REQUIRE(fs::exists(cli_path()));
}

TEST_CASE("config errors exit with 2") {
  Scratch s("cfg");
  SUBCASE("tolerance not below the arc radius") {
    const auto cfg = s.write("a.ini",
                             "[path]\nsegment = arc 0 0 0.01 0 1.5\n[contour]\neps = 0.02\n[run]\n"
                             "output_dir = " + (s.dir / "out").string() + "\n");
    const Result r = run("sets \"" + cfg.string() + "\"", s.dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("config error") != std::string::npos);
  }
  SUBCASE("unknown key") {
    const auto cfg = s.write("b.ini", "[mpc]\nhorizon_length = 5\n");
    const Result r = run("simulate \"" + cfg.string() + "\"", s.dir);
    CHECK(r.code == 2);
    CHECK(r.err.find("horizon_length") != std::string::npos);
  }
  SUBCASE("missing config file") {
    const Result r = run("sets \"" + (s.dir / "nope.ini").string() + "\"", s.dir);
    CHECK(r.code == 2);
  }
  SUBCASE("negative verification sample count") {
    const Result r = run("verify \"" + s.dir.string() + "\" --samples -1", s.dir);
    CHECK(r.code == 2);
  }
}

TEST_CASE("sets, simulate and verify on a line path") {
  Scratch s("run");
  const fs::path out = s.dir / "out";
  const auto cfg = s.write("line.ini", line_config(out));

  const Result a = run("sets \"" + cfg.string() + "\"", s.dir);
  REQUIRE_MESSAGE(a.code == 0, a.err);
  for (const char* f : {"config.ini", "feasible_sets.txt", "family.txt", "tubes.txt",
                        "annulus.txt", "summary.json"})
    CHECK(fs::exists(out / "sets" / f));
  CHECK(a.out.find("\"converged\": true") != std::string::npos);

  const Result b = run("simulate \"" + cfg.string() + "\"", s.dir);
  REQUIRE_MESSAGE(b.code == 0, b.err);
  const std::string first = slurp(out / "trace.csv");
  CHECK(first.rfind("k,", 0) == 0);
  CHECK(fs::exists(out / "summary.txt"));

  const Result c = run("simulate \"" + cfg.string() + "\" --sets \"" + (out / "sets").string() +
                           "\"",
                       s.dir);
  REQUIRE(c.code == 0);
  CHECK(slurp(out / "trace.csv") == first);

  const Result v = run("verify \"" + (out / "sets").string() + "\" --samples 200", s.dir);
  CHECK_MESSAGE(v.code == 0, v.err);
  CHECK(v.out.find("violations 0") != std::string::npos);

  const Result z = run("verify \"" + (out / "sets").string() + "\" --samples 0", s.dir);
  CHECK(z.code == 0);
  CHECK(z.out.find("annulus_samples 0") != std::string::npos);

  SUBCASE("inflated family fails verification with a witness") {
    std::istringstream is(slurp(out / "sets" / "family.txt"));
    SwitchCiFamily fam = read_family(is);
    const Polytope& C0 = fam.C[0];
    fam.C[0] = Polytope(C0.A(), C0.b() + Vec::Constant(C0.rows(), 0.5));
    std::ofstream f(out / "sets" / "family.txt");
    write_family(f, fam);
    f.close();
    const Result w = run("verify \"" + (out / "sets").string() + "\" --samples 200", s.dir);
    CHECK(w.code == 5);
    CHECK(w.err.find("witness:") != std::string::npos);
  }
  SUBCASE("sets from another config are rejected") {
    const auto other = s.write("other.ini", line_config(out, "[mpc]\nN = 7\n"));
    const Result w = run("simulate \"" + other.string() + "\" --sets \"" +
                             (out / "sets").string() + "\"",
                         s.dir);
    CHECK(w.code == 2);
  }
}

TEST_CASE("infeasible initial state exits with 4 at the first step") {
  Scratch s("infeasible");
  const fs::path out = s.dir / "out";
  const auto cfg = s.write("far.ini", line_config(out, "initial_state = 5 0 0 5 0 0\n"));
  const Result r = run("simulate \"" + cfg.string() + "\"", s.dir);
  CHECK(r.code == 4);
  CHECK(r.err.find("k = 0") != std::string::npos);
  CHECK(fs::exists(out / "trace.csv"));
}

TEST_CASE("output directory environment override") {
  Scratch s("env");
  const fs::path cfg_out = s.dir / "from_config", env_out = s.dir / "from_env";
  const auto cfg = s.write("line.ini", line_config(cfg_out));
  const Result r = run("simulate \"" + cfg.string() + "\"", s.dir,
                       "CONTOUR_MPC_OUT=\"" + env_out.string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(env_out / "trace.csv"));
  CHECK(fs::exists(env_out / "sets" / "family.txt"));
  CHECK_FALSE(fs::exists(cfg_out));
}

TEST_CASE("usage errors") {
  Scratch s("usage");
  CHECK(run("", s.dir).code != 0);
  CHECK(run("bogus", s.dir).code != 0);
}
