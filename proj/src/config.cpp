#include "contour_mpc/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <vector>

namespace cmpc {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<double> numbers(const std::string& v, const std::string& where) {
  std::string t = v;
  for (char& ch : t)
    if (ch == ',') ch = ' ';
  std::istringstream is(t);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    char* end = nullptr;
    const double d = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || !std::isfinite(d))
      throw ConfigError(where + ": not a number: '" + tok + "'");
    out.push_back(d);
  }
  return out;
}

double one(const std::string& v, const std::string& where) {
  auto n = numbers(v, where);
  if (n.size() != 1) throw ConfigError(where + ": expected one number");
  return n[0];
}

std::vector<double> exactly(const std::string& v, std::size_t k, const std::string& where) {
  auto n = numbers(v, where);
  if (n.size() != k) throw ConfigError(where + ": expected " + std::to_string(k) + " numbers");
  return n;
}

int integer(const std::string& v, const std::string& where) {
  const double d = one(v, where);
  if (d != std::floor(d) || std::abs(d) > 2e9) throw ConfigError(where + ": expected an integer");
  return static_cast<int>(d);
}

Mat diag(const std::vector<double>& d) {
  Mat M = Mat::Zero(static_cast<Eigen::Index>(d.size()), static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) M(i, i) = d[i];
  return M;
}

ContourSegment segment(const std::string& v, const std::string& where) {
  std::istringstream is(v);
  std::string kind;
  is >> kind;
  std::string rest;
  std::getline(is, rest);
  ContourSegment s;
  if (kind == "line") {
    auto n = exactly(rest, 4, where);
    if (n[0] == n[2] && n[1] == n[3]) throw ConfigError(where + ": line endpoints coincide");
    s.shape = line_through(n[0], n[1], n[2], n[3]);
  } else if (kind == "arc") {
    auto n = exactly(rest, 5, where);
    s.shape = Arc{n[0], n[1], n[2], n[3], n[4]};
  } else {
    throw ConfigError(where + ": segment kind must be 'line' or 'arc'");
  }
  return s;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

std::map<std::string, Setter> setters() {
  std::map<std::string, Setter> m;
  auto num = [&m](const std::string& key, auto field) {
    m[key] = [field](RunConfig& c, const std::string& v, const std::string& w) {
      field(c) = one(v, w);
    };
  };
  num("plant.Ts", [](RunConfig& c) -> double& { return c.exp.plant.Ts; });
  num("plant.x_travel", [](RunConfig& c) -> double& { return c.exp.plant.x_travel; });
  num("plant.y_travel", [](RunConfig& c) -> double& { return c.exp.plant.y_travel; });
  num("plant.v_limit", [](RunConfig& c) -> double& { return c.exp.plant.v_limit; });
  num("plant.theta_max", [](RunConfig& c) -> double& { return c.exp.plant.theta_max; });
  num("plant.theta_rate_max", [](RunConfig& c) -> double& { return c.exp.plant.theta_rate_max; });
  num("plant.zeta", [](RunConfig& c) -> double& { return c.exp.plant.zeta; });
  num("plant.k1", [](RunConfig& c) -> double& { return c.exp.plant.k1; });
  num("plant.k2", [](RunConfig& c) -> double& { return c.exp.plant.k2; });
  num("plant.k3", [](RunConfig& c) -> double& { return c.exp.plant.k3; });
  num("plant.u_max", [](RunConfig& c) -> double& { return c.exp.plant.u_max; });
  num("plant.sum_max", [](RunConfig& c) -> double& { return c.exp.plant.sum_max; });
  num("plant.diff_max", [](RunConfig& c) -> double& { return c.exp.plant.diff_max; });
  m["plant.boundaries"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.plant.boundaries = numbers(v, w);
  };
  m["plant.xbar"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.plant.xbar = numbers(v, w);
  };
  m["plant.omega_hz"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.plant.omega.clear();
    for (double f : numbers(v, w)) c.exp.plant.omega.push_back(2.0 * M_PI * f);
  };

  m["path.preset"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    if (v != "default") throw ConfigError(w + ": the only preset is 'default'");
    c.exp.path = default_path();
  };
  m["path.segment"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.path.push_back(segment(v, w));
  };

  num("reference.v_max", [](RunConfig& c) -> double& { return c.exp.v_max; });
  num("reference.a_max", [](RunConfig& c) -> double& { return c.exp.a_max; });
  num("contour.eps", [](RunConfig& c) -> double& { return c.exp.eps; });
  num("contour.side_count_slack", [](RunConfig& c) -> double& { return c.exp.side_count_slack; });

  m["mpc.N"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.N = integer(v, w);
  };
  m["mpc.Q"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.Q = diag(exactly(v, 2, w));
  };
  m["mpc.R"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.R = diag(exactly(v, 3, w));
  };
  m["mpc.Qs"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.Qs = diag(exactly(v, 2, w));
  };
  m["mpc.settle_cap"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.settle_cap = integer(v, w);
  };
  num("mpc.state_reg", [](RunConfig& c) -> double& { return c.exp.state_reg; });
  num("mpc.convergence_tol", [](RunConfig& c) -> double& { return c.exp.convergence_tol; });

  num("sets.margin", [](RunConfig& c) -> double& { return c.exp.cover.margin; });
  num("sets.overlap", [](RunConfig& c) -> double& { return c.exp.cover.overlap; });
  num("sets.max_length", [](RunConfig& c) -> double& { return c.exp.cover.max_length; });
  m["sets.snap"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.cover.snap = integer(v, w);
  };
  m["sets.max_iter"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    c.exp.max_iter = integer(v, w);
  };
  m["sets.row_cap"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    const int n = integer(v, w);
    if (n < 1) throw ConfigError(w + ": row_cap must be positive");
    c.exp.row_cap = static_cast<std::size_t>(n);
  };

  m["run.seed"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    const double d = one(v, w);
    if (d < 0 || d != std::floor(d)) throw ConfigError(w + ": seed must be a non-negative integer");
    c.seed = static_cast<std::uint64_t>(d);
  };
  m["run.output_dir"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    if (v.empty()) throw ConfigError(w + ": empty output_dir");
    c.output_dir = v;
  };
  m["run.initial_state"] = [](RunConfig& c, const std::string& v, const std::string& w) {
    auto n = exactly(v, 6, w);
    c.x0 = Eigen::Map<Vec>(n.data(), 6);
  };
  return m;
}

void validate(const RunConfig& c) {
  try {
    const auto& e = c.exp;
    e.plant.validate();
    if (e.path.empty()) throw std::invalid_argument("path has no segments");
    if (!(e.eps > 0.0)) throw std::invalid_argument("contour.eps must be positive");
    for (const auto& s : e.path)
      if (!s.is_line()) polygon_side_counts(s.arc().R, e.eps, e.side_count_slack);
    generate_reference(e.path, e.v_max, e.a_max, e.plant.Ts);
    MpcConfig mc;
    mc.N = e.N;
    mc.Q = e.Q;
    mc.R = e.R;
    mc.Qs = e.Qs;
    mc.state_reg = e.state_reg;
    mc.U = input_set(e.plant);
    mc.X = state_set(e.plant);
    mc.validate(6, 3);
    if (!(e.cover.margin >= 0.0 && e.cover.margin < e.eps))
      throw std::invalid_argument("sets.margin must lie in [0, eps)");
    if (!(e.cover.overlap >= 0.0) || !(e.cover.max_length >= 0.0) || e.cover.snap < 0)
      throw std::invalid_argument("sets.overlap, max_length and snap must be non-negative");
    if (e.max_iter < 1) throw std::invalid_argument("sets.max_iter must be >= 1");
    if (e.settle_cap < 0) throw std::invalid_argument("mpc.settle_cap must be >= 0");
    if (!(e.convergence_tol > 0.0)) throw std::invalid_argument("mpc.convergence_tol must be > 0");
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
}

}  // namespace

RunConfig parse_config(std::istream& is, const std::string& source) {
  static const auto table = setters();
  RunConfig c;
  std::string section, line;
  bool path_seen = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      static const char* known[] = {"plant", "path", "reference", "contour", "mpc", "sets", "run"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known))
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + ": key outside a section");
    const std::string full = section + "." + key;
    auto it = table.find(full);
    if (it == table.end()) throw ConfigError(where + ": unknown key '" + full + "'");
    if (section == "path" && !path_seen) {
      c.exp.path.clear();  // an explicit path replaces the default
      path_seen = true;
    }
    it->second(c, value, where);
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(f, path);
}

std::string write_config(const RunConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto& e = c.exp;
  const auto& p = e.plant;
  auto list = [&os](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    os << '\n';
  };
  os << "[plant]\nTs = " << p.Ts << "\nx_travel = " << p.x_travel << "\ny_travel = " << p.y_travel
     << "\nv_limit = " << p.v_limit << "\ntheta_max = " << p.theta_max
     << "\ntheta_rate_max = " << p.theta_rate_max << "\nzeta = " << p.zeta << "\nk1 = " << p.k1
     << "\nk2 = " << p.k2 << "\nk3 = " << p.k3 << "\nu_max = " << p.u_max
     << "\nsum_max = " << p.sum_max << "\ndiff_max = " << p.diff_max << "\nboundaries = ";
  list(p.boundaries);
  os << "xbar = ";
  list(p.xbar);
  os << "omega_hz = ";
  std::vector<double> hz;
  for (double w : p.omega) hz.push_back(w / (2.0 * M_PI));
  list(hz);
  os << "\n[path]\n";
  for (const auto& s : e.path) {
    if (s.is_line()) {
      const Line& l = s.line();
      os << "segment = line " << l.x0 << ' ' << l.y0 << ' ' << l.x1 << ' ' << l.y1 << '\n';
    } else {
      const Arc& a = s.arc();
      os << "segment = arc " << a.xo << ' ' << a.yo << ' ' << a.R << ' ' << a.angle_start << ' '
         << a.angle_end << '\n';
    }
  }
  os << "\n[reference]\nv_max = " << e.v_max << "\na_max = " << e.a_max << '\n';
  os << "\n[contour]\neps = " << e.eps << "\nside_count_slack = " << e.side_count_slack << '\n';
  os << "\n[mpc]\nN = " << e.N << "\nQ = " << e.Q(0, 0) << ' ' << e.Q(1, 1) << "\nR = " << e.R(0, 0)
     << ' ' << e.R(1, 1) << ' ' << e.R(2, 2) << "\nQs = " << e.Qs(0, 0) << ' ' << e.Qs(1, 1)
     << "\nstate_reg = " << e.state_reg << "\nsettle_cap = " << e.settle_cap << "\nconvergence_tol = " << e.convergence_tol << '\n';
  os << "\n[sets]\nmargin = " << e.cover.margin << "\noverlap = " << e.cover.overlap
     << "\nmax_length = " << e.cover.max_length << "\nsnap = " << e.cover.snap
     << "\nmax_iter = " << e.max_iter << "\nrow_cap = " << e.row_cap << '\n';
  os << "\n[run]\nseed = " << c.seed << "\noutput_dir = " << c.output_dir << '\n';
  if (c.x0) {
    os << "initial_state =";
    for (Eigen::Index i = 0; i < c.x0->size(); ++i) os << ' ' << (*c.x0)(i);
    os << '\n';
  }
  return os.str();
}

}  // namespace cmpc
