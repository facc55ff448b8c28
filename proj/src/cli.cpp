#include "contour_mpc/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "contour_mpc/config.hpp"
#include "contour_mpc/gantry.hpp"

namespace cmpc {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigFile = "config.ini";
constexpr const char* kSetsFile = "feasible_sets.txt";
constexpr const char* kFamilyFile = "family.txt";
constexpr const char* kTubesFile = "tubes.txt";
constexpr const char* kAnnulusFile = "annulus.txt";
constexpr const char* kSummaryFile = "summary.json";

std::string output_dir(const RunConfig& c) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return c.output_dir;
}

// The config text that determines the sets; [run] is irrelevant to them.
std::string sets_key(RunConfig c) {
  c.seed = 0;
  c.output_dir = "-";
  c.x0.reset();
  return write_config(c);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + p.string() + "'");
  f << text;
  if (!f) throw ConfigError("write failed for '" + p.string() + "'");
}

void write_tubes(std::ostream& os, const SwitchCiFamily& f) {
  os << "tubes " << f.tubes.size() << '\n';
  for (std::size_t m = 0; m < f.tubes.size(); ++m) {
    os << "tube " << m << ' ' << f.tubes[m].size() << '\n';
    for (const auto& P : f.tubes[m]) write_polytope(os, P);
  }
}

std::vector<std::vector<Polytope>> read_tubes(std::istream& is) {
  std::string tag;
  long k = -1;
  if (!(is >> tag >> k) || tag != "tubes" || k < 0)
    throw std::runtime_error("read_tubes: malformed header");
  std::vector<std::vector<Polytope>> out(k);
  for (long m = 0; m < k; ++m) {
    long idx = -1, n = -1;
    if (!(is >> tag >> idx >> n) || tag != "tube" || idx != m || n < 1)
      throw std::runtime_error("read_tubes: malformed tube header");
    for (long j = 0; j < n; ++j) out[m].push_back(read_polytope(is));
  }
  return out;
}

void write_sets_dir(const fs::path& dir, const RunConfig& c, const OfflineArtifacts& art) {
  fs::create_directories(dir);
  spit(dir / kConfigFile, sets_key(c));
  {
    std::ostringstream os;
    os << "sets " << art.online.models.size() << '\n';
    for (const auto& m : art.online.models) write_polytope(os, m.S);
    spit(dir / kSetsFile, os.str());
  }
  {
    std::ostringstream os;
    write_family(os, art.online.family);
    spit(dir / kFamilyFile, os.str());
  }
  {
    std::ostringstream os;
    write_tubes(os, art.online.family);
    spit(dir / kTubesFile, os.str());
  }
  {
    std::ostringstream os;
    for (const auto& a : art.annuli) write_annulus(os, a);
    spit(dir / kAnnulusFile, os.str());
  }
  nlohmann::ordered_json j;
  j["side_counts"] = nlohmann::json::array();
  for (const auto& a : art.annuli)
    j["side_counts"].push_back({{"R", a.R}, {"eps", a.eps}, {"n_i", a.n_i}, {"n_o", a.n_o},
                                {"l_v", a.l_v}, {"l_s", a.l_s}});
  j["modes"] = art.online.models.size();
  j["boxes"] = art.composite.boxes.size();
  j["reference_samples"] = art.plan.samples.size();
  j["iterations"] = art.online.family.iterations;
  j["converged"] = art.online.family.converged;
  j["dwell"] = art.online.graph.dwell;
  std::vector<long> fs_rows, ci_rows, tube_len;
  for (const auto& m : art.online.models) fs_rows.push_back(m.S.rows());
  for (const auto& C : art.online.family.C) ci_rows.push_back(C.rows());
  for (const auto& t : art.online.family.tubes) tube_len.push_back(static_cast<long>(t.size()));
  j["facets"] = {{"feasible_sets", fs_rows}, {"ci_sets", ci_rows}};
  j["tube_lengths"] = tube_len;
  j["terminal_worst_certificate"] = art.online.terminal.worst_certificate();
  std::ostringstream os;
  os << std::setw(2) << j << '\n';
  spit(dir / kSummaryFile, os.str());
}

// Problem data from the config plus the family and tubes stored in dir.
OfflineArtifacts load_sets_dir(const fs::path& dir, const RunConfig& c) {
  if (!fs::exists(dir / kFamilyFile)) throw ConfigError("no family file in '" + dir.string() + "'");
  if (slurp(dir / kConfigFile) != sets_key(c))
    throw ConfigError("sets in '" + dir.string() + "' were compiled from a different config");
  OfflineArtifacts art = build_problem(c.exp);
  {
    std::istringstream is(slurp(dir / kFamilyFile));
    art.online.family = read_family(is);
  }
  if (art.online.family.C.size() != art.online.models.size())
    throw ConfigError("family in '" + dir.string() + "' does not match the mode count");
  if (fs::exists(dir / kTubesFile)) {
    std::istringstream is(slurp(dir / kTubesFile));
    art.online.family.tubes = read_tubes(is);
  } else {
    attach_tubes(art.online.family, art.online.models, art.online.graph, art.online.cfg.U,
                 c.exp.row_cap);
  }
  art.online.terminal = synthesize_terminal(art.online.models, art.online.graph, art.online.cfg);
  return art;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InfeasibleError& e) {
    err << "online infeasibility: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const DwellError& e) {
    err << "online infeasibility: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const StageError& e) {
    err << "offline failure in " << e.what() << '\n';
    return kExitOffline;
  } catch (const std::exception& e) {
    err << "offline failure: " << e.what() << '\n';
    return kExitOffline;
  }
}

}  // namespace

int cmd_sets(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig c = load_config(config_path);
    const fs::path dir = fs::path(output_dir(c)) / "sets";
    const OfflineArtifacts art = build_offline(c.exp);
    write_sets_dir(dir, c, art);
    out << slurp(dir / kSummaryFile);
    return kExitOk;
  });
}

int cmd_simulate(const std::string& config_path, const std::optional<std::string>& sets_dir,
                 std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const RunConfig c = load_config(config_path);
    const fs::path outdir = output_dir(c);
    fs::path dir;
    if (sets_dir) {
      dir = *sets_dir;
    } else {
      dir = outdir / "sets";
      bool fresh = fs::exists(dir / kFamilyFile) && fs::exists(dir / kConfigFile) &&
                   slurp(dir / kConfigFile) == sets_key(c);
      if (!fresh) {
        const OfflineArtifacts art = build_offline(c.exp);
        write_sets_dir(dir, c, art);
      }
    }
    // Always run from the files so a fresh compile and a reuse agree bit for bit.
    const OfflineArtifacts art = load_sets_dir(dir, c);

    LoopOptions lo;
    lo.settle_cap = c.exp.settle_cap;
    lo.convergence_tol = c.exp.convergence_tol;
    const Vec x0 = c.x0 ? *c.x0 : initial_state(art);
    fs::create_directories(outdir);
    Trace tr;
    try {
      tr = control_loop(art.online, reference_stream(art), x0, lo);
    } catch (const InfeasibleError& e) {
      std::ostringstream csv;
      write_csv(csv, e.prefix);
      spit(outdir / "trace.csv", csv.str());
      err << "online infeasibility: QP infeasible at k = " << e.k << '\n';
      return kExitInfeasible;
    }
    std::ostringstream csv, sum;
    write_csv(csv, tr);
    write_summary(sum, tr);
    spit(outdir / "trace.csv", csv.str());
    spit(outdir / "summary.txt", sum.str());
    out << sum.str();
    if (tr.summary.infeasible > 0) {
      err << "online infeasibility: " << tr.summary.infeasible << " infeasible steps\n";
      return kExitInfeasible;
    }
    if (tr.summary.max_eps > c.exp.eps) {
      err << "contouring error bound violated: max eps " << tr.summary.max_eps << " > "
          << c.exp.eps << '\n';
      return kExitInfeasible;
    }
    return kExitOk;
  });
}

int cmd_verify(const std::string& sets_dir, int samples, std::uint64_t seed, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&]() -> int {
    if (samples < 0) throw ConfigError("--samples must be >= 0");
    const fs::path dir = sets_dir;
    std::istringstream cfg_text(slurp(dir / kConfigFile));
    const RunConfig c = parse_config(cfg_text, (dir / kConfigFile).string());
    OfflineArtifacts art = build_problem(c.exp);
    SwitchCiFamily fam;
    {
      std::istringstream is(slurp(dir / kFamilyFile));
      fam = read_family(is);
    }
    if (fam.C.size() != art.online.models.size())
      throw ConfigError("family does not match the mode count of the stored config");

    std::vector<Violation> bad;
    const VerifyReport rep = verify_family(fam, art.online.models, art.online.graph,
                                           art.online.cfg.U, samples, seed);
    bad = rep.violations;

    long annulus_samples = 0;
    for (const auto& a : art.annuli) {
      const double R = a.R, eps = a.eps;
      for (int t = 0; t < 720; ++t) {
        const double th = 2.0 * M_PI * t / 720.0;
        Vec p(2);
        p << a.xo + R * std::cos(th), a.yo + R * std::sin(th);
        bool covered = false;
        for (const auto& s : a.sectors) covered = covered || contains_point(s, p);
        if (!covered) bad.push_back({"annulus coverage: circle point outside every sector", p});
      }
      if (samples == 0) continue;
      for (std::size_t p = 0; p < a.sectors.size(); ++p) {
        for (const Vec& y : sample_uniform(a.sectors[p], samples, seed + 7919 * (p + 1))) {
          ++annulus_samples;
          const double r = std::hypot(y(0) - a.xo, y(1) - a.yo);
          if (std::abs(R - r) > eps + 1e-9)
            bad.push_back({"annulus soundness: sector " + std::to_string(p + 1) +
                               " point violates the tolerance",
                           y});
        }
      }
    }

    out << "modes " << fam.C.size() << '\n'
        << "invariance_samples " << rep.samples_checked << '\n'
        << "inclusions " << rep.inclusions_checked << '\n'
        << "annulus_samples " << annulus_samples << '\n'
        << "violations " << bad.size() << '\n';
    if (bad.empty()) return kExitOk;
    for (const auto& v : bad) {
      err << "violation: " << v.what << "\n  witness:";
      for (Eigen::Index i = 0; i < v.witness.size(); ++i)
        err << ' ' << std::setprecision(12) << v.witness(i);
      err << '\n';
    }
    return kExitVerify;
  });
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Contouring-error bounded switched MPC for a dual-drive gantry"};
  app.require_subcommand(1);

  std::string sets_cfg;
  auto* sets = app.add_subcommand("sets", "compile feasible sets and the switch CI family");
  sets->add_option("config", sets_cfg, "run configuration")->required();

  std::string sim_cfg;
  std::optional<std::string> sim_sets;
  auto* sim = app.add_subcommand("simulate", "closed-loop run, writes trace.csv and summary.txt");
  sim->add_option("config", sim_cfg, "run configuration")->required();
  sim->add_option("--sets", sim_sets, "precompiled sets directory");

  std::string ver_dir;
  int samples = 1000;
  std::uint64_t seed = 1;
  auto* ver = app.add_subcommand("verify", "certify a compiled sets directory");
  ver->add_option("setsdir", ver_dir, "sets directory")->required();
  ver->add_option("--samples", samples, "invariance/annulus samples per set");
  ver->add_option("--seed", seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  if (*sets) return cmd_sets(sets_cfg, std::cout, std::cerr);
  if (*sim) return cmd_simulate(sim_cfg, sim_sets, std::cout, std::cerr);
  return cmd_verify(ver_dir, samples, seed, std::cout, std::cerr);
}

}  // namespace cmpc
