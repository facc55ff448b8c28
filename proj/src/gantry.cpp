#include "contour_mpc/gantry.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace cmpc {

namespace {

constexpr double kJoinTol = 1e-9;

double wrap_from(double angle, double start) {
  double d = std::fmod(angle - start, 2.0 * M_PI);
  if (d < 0) d += 2.0 * M_PI;
  return d;
}

void check_segment(const ContourSegment& s, std::size_t i) {
  if (s.is_line()) {
    if (!s.line().bounded)
      throw std::invalid_argument("path segment " + std::to_string(i) + ": line needs endpoints");
    if (segment_length(s) <= 0.0)
      throw std::invalid_argument("path segment " + std::to_string(i) + ": zero length");
  } else {
    const Arc& a = s.arc();
    if (!(a.R > 0.0) || !(a.angle_end > a.angle_start))
      throw std::invalid_argument("path segment " + std::to_string(i) + ": bad arc");
  }
}

// Trapezoid (or triangle) along a run of length L.
struct Profile {
  double L = 0.0, v = 0.0, a = 0.0, Ta = 0.0, T = 0.0;

  Profile(double L_, double v_, double a_) : L(L_), v(v_), a(a_) {
    if (L >= v * v / a) {
      Ta = v / a;
      T = L / v + v / a;
    } else {
      Ta = std::sqrt(L / a);
      v = a * Ta;
      T = 2.0 * Ta;
    }
  }

  double s(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= T) return L;
    if (t < Ta) return 0.5 * a * t * t;
    if (t <= T - Ta) return 0.5 * a * Ta * Ta + v * (t - Ta);
    const double r = T - t;
    return L - 0.5 * a * r * r;
  }
};

}  // namespace

void GantryParams::validate() const {
  auto bad = [](const std::string& m) { throw std::invalid_argument("GantryParams: " + m); };
  const std::size_t n = xbar.size();
  if (!(Ts > 0.0)) bad("Ts must be positive");
  if (n < 1) bad("at least one mode is required");
  if (boundaries.size() + 1 != n) bad("need exactly one boundary fewer than modes");
  if (omega.size() != n) bad("one omega per mode is required");
  for (double w : omega)
    if (!(w > 0.0)) bad("omega must be positive");
  if (!(zeta > 0.0 && zeta < 1.0)) bad("zeta must lie in (0, 1)");
  if (!(k1 > 0.0 && k2 > 0.0 && k3 > 0.0)) bad("input gains must be positive");
  if (!(x_travel > 0.0 && y_travel > 0.0 && v_limit > 0.0 && theta_max > 0.0 &&
        theta_rate_max > 0.0))
    bad("state bounds must be positive");
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (!(std::abs(boundaries[i]) < x_travel)) bad("boundaries must lie inside the travel");
    if (i > 0 && !(boundaries[i] > boundaries[i - 1])) bad("boundaries must increase");
  }
  if (!(u_max > 0.0 && sum_max > 0.0 && diff_max > 0.0)) bad("input bounds must be positive");
  if (0.5 * (sum_max + diff_max) > u_max + 1e-12)
    bad("sum_max + diff_max must not exceed 2 u_max");
}

Mat output_map(double xbar) {
  Mat C = Mat::Zero(2, 6);
  C(0, 0) = 1.0;
  C(1, 2) = 1.0;
  C(1, 4) = xbar;
  return C;
}

ModeModel physical_model(const GantryParams& p, int j) {
  const double w = p.omega.at(j);
  Mat Ac = Mat::Zero(6, 6), Bc = Mat::Zero(6, 3);
  Ac(0, 1) = 1.0;
  Ac(2, 3) = 1.0;
  Ac(4, 5) = 1.0;
  Ac(5, 4) = -w * w;
  Ac(5, 5) = -2.0 * p.zeta * w;
  Bc(1, 0) = p.k1;
  Bc(3, 1) = p.k2;
  Bc(3, 2) = p.k2;
  Bc(5, 1) = -p.k3;
  Bc(5, 2) = p.k3;
  // exp([[Ac, Bc], [0, 0]] Ts) = [[A, B], [0, I]]
  Mat M = Mat::Zero(9, 9);
  M.topLeftCorner(6, 6) = Ac * p.Ts;
  M.topRightCorner(6, 3) = Bc * p.Ts;
  const Mat E = M.exp();

  ModeModel m;
  m.mode_id = j;
  m.A = E.topLeftCorner(6, 6);
  m.B = E.topRightCorner(6, 3);
  m.C = output_map(p.xbar.at(j));
  const double lo = j == 0 ? -p.x_travel : p.boundaries[j - 1];
  const double hi = j + 1 == p.num_modes() ? p.x_travel : p.boundaries[j];
  m.region = Polytope::box(Vec::Constant(1, lo), Vec::Constant(1, hi));
  m.S = state_set(p);
  m.label = "region" + std::to_string(j + 1);
  return m;
}

std::vector<ModeModel> build_plant(const GantryParams& p) {
  p.validate();
  std::vector<ModeModel> out;
  for (int j = 0; j < p.num_modes(); ++j) {
    out.push_back(physical_model(p, j));
    check_assumption1(out.back());
  }
  return out;
}

Polytope state_set(const GantryParams& p) {
  Vec hi(6);
  hi << p.x_travel, p.v_limit, p.y_travel, p.v_limit, p.theta_max, p.theta_rate_max;
  return Polytope::box(-hi, hi);
}

Polytope input_set(const GantryParams& p) {
  Mat A(6, 3);
  A << 1, 0, 0,  //
      -1, 0, 0,  //
      0, 1, 1,   //
      0, -1, -1, //
      0, -1, 1,  //
      0, 1, -1;
  Vec b(6);
  b << p.u_max, p.u_max, p.sum_max, p.sum_max, p.diff_max, p.diff_max;
  return Polytope(A, b);
}

int physical_mode(double x_m, const GantryParams& p, int previous) {
  const int n = p.num_modes();
  if (previous >= 1 && previous <= n) {
    const double lo = previous == 1 ? -std::numeric_limits<double>::infinity()
                                    : p.boundaries[previous - 2];
    const double hi = previous == n ? std::numeric_limits<double>::infinity()
                                    : p.boundaries[previous - 1];
    if (x_m >= lo && x_m <= hi) return previous;
  }
  int j = 1;
  for (double b : p.boundaries)
    if (x_m >= b) ++j;
  return j;
}

double segment_length(const ContourSegment& s) {
  if (s.is_line()) {
    const Line& l = s.line();
    return std::hypot(l.x1 - l.x0, l.y1 - l.y0);
  }
  const Arc& a = s.arc();
  return a.R * (a.angle_end - a.angle_start);
}

Vec segment_point(const ContourSegment& s, double arclen) {
  Vec p(2);
  if (s.is_line()) {
    const Line& l = s.line();
    const double f = arclen / segment_length(s);
    p << l.x0 + f * (l.x1 - l.x0), l.y0 + f * (l.y1 - l.y0);
    return p;
  }
  const Arc& a = s.arc();
  const double th = a.angle_start + arclen / a.R;
  p << a.xo + a.R * std::cos(th), a.yo + a.R * std::sin(th);
  return p;
}

Vec segment_tangent(const ContourSegment& s, double arclen) {
  Vec d(2);
  if (s.is_line()) {
    const Line& l = s.line();
    d << l.x1 - l.x0, l.y1 - l.y0;
    return d / d.norm();
  }
  const Arc& a = s.arc();
  const double th = a.angle_start + arclen / a.R;
  d << -std::sin(th), std::cos(th);
  return d;
}

std::vector<ContourSegment> default_path() {
  std::vector<ContourSegment> p(3);
  p[0].shape = line_through(0.08, -0.08, 0.08, 0.0);
  p[1].shape = Arc{0.0, 0.0, 0.08, 0.0, 2.0 * M_PI};
  p[2].shape = line_through(0.08, 0.0, 0.08, 0.08);
  return p;
}

ReferencePlan generate_reference(const std::vector<ContourSegment>& path, double v_max,
                                 double a_max, double Ts) {
  if (path.empty()) throw std::invalid_argument("generate_reference: empty path");
  if (!(v_max > 0.0) || !(a_max > 0.0) || !(Ts > 0.0))
    throw std::invalid_argument("generate_reference: v_max, a_max and Ts must be positive");
  for (std::size_t i = 0; i < path.size(); ++i) check_segment(path[i], i);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const Vec e = segment_point(path[i], segment_length(path[i]));
    const Vec s = segment_point(path[i + 1], 0.0);
    if ((e - s).norm() > kJoinTol)
      throw std::invalid_argument("generate_reference: path is disconnected after segment " +
                                  std::to_string(i));
  }

  ReferencePlan plan;
  plan.segments = path;
  plan.Ts = Ts;
  plan.v_max = v_max;
  plan.a_max = a_max;
  plan.start = segment_point(path[0], 0.0);

  std::size_t first = 0;
  while (first < path.size()) {
    std::size_t last = first;
    while (last + 1 < path.size()) {
      const Vec t0 = segment_tangent(path[last], segment_length(path[last]));
      const Vec t1 = segment_tangent(path[last + 1], 0.0);
      if (t0.dot(t1) < 1.0 - 1e-9) break;
      ++last;
    }
    std::vector<double> cum{0.0};
    double Rmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = first; i <= last; ++i) {
      cum.push_back(cum.back() + segment_length(path[i]));
      if (!path[i].is_line()) Rmin = std::min(Rmin, path[i].arc().R);
    }
    double v = v_max, at = a_max;
    if (std::isfinite(Rmin)) {
      // Keep |r''| = sqrt(s''^2 + (s'^2/R)^2) <= a_max.
      if (v * v / Rmin > a_max / std::sqrt(2.0)) v = std::sqrt(a_max * Rmin / std::sqrt(2.0));
      const double an = v * v / Rmin;
      at = std::sqrt(a_max * a_max - an * an);
    }
    const Profile prof(cum.back(), v, at);
    const long n = static_cast<long>(std::ceil(prof.T / Ts - 1e-9));
    std::size_t seg = 0;
    for (long k = 1; k <= n; ++k) {
      const double sg = prof.s(std::min(static_cast<double>(k) * Ts, prof.T));
      while (seg + 1 < cum.size() - 1 && sg >= cum[seg + 1]) ++seg;
      const std::size_t gi = first + seg;
      const double sl = std::min(sg - cum[seg], segment_length(path[gi]));
      const Vec pt = segment_point(path[gi], sl);
      ReferenceSample rs;
      rs.k = static_cast<long>(plan.samples.size());
      rs.x = pt(0);
      rs.y = pt(1);
      rs.segment = static_cast<int>(gi);
      rs.s = sl;
      plan.samples.push_back(rs);
    }
    first = last + 1;
  }

  // Time windows; a segment with no samples gets an empty window at its position.
  long next = 0;
  for (std::size_t i = 0; i < plan.segments.size(); ++i) {
    long lo = -1, hi = -1;
    for (const auto& s : plan.samples)
      if (s.segment == static_cast<int>(i)) {
        if (lo < 0) lo = s.k;
        hi = s.k;
      }
    if (lo < 0) {
      lo = next;
      hi = next - 1;
    }
    plan.segments[i].k_start = lo;
    plan.segments[i].k_end = hi;
    next = hi + 1;
  }
  return plan;
}

bool box_in_band(const OutputBox& b, const ContourSegment& s, double eps) {
  const double cx[4] = {b.x0, b.x1, b.x1, b.x0};
  const double cy[4] = {b.y0, b.y0, b.y1, b.y1};
  if (s.is_line()) {
    // Distance to a segment or line is convex, so the corners decide.
    for (int i = 0; i < 4; ++i)
      if (segment_distance(cx[i], cy[i], s) > eps) return false;
    return true;
  }
  const Arc& a = s.arc();
  double far = 0.0;
  for (int i = 0; i < 4; ++i) far = std::max(far, std::hypot(cx[i] - a.xo, cy[i] - a.yo));
  const double nx = std::clamp(a.xo, b.x0, b.x1), ny = std::clamp(a.yo, b.y0, b.y1);
  const double near = std::hypot(nx - a.xo, ny - a.yo);
  if (far > a.R + eps || near < a.R - eps) return false;
  const double span = a.angle_end - a.angle_start;
  if (span >= 2.0 * M_PI) return true;
  // The box misses the centre, so its angular extent is spanned by the corners.
  bool inside = true;
  for (int i = 0; i < 4; ++i)
    if (wrap_from(std::atan2(cy[i] - a.yo, cx[i] - a.xo), a.angle_start) > span) inside = false;
  if (inside) return true;
  // Past an end, distance is to that endpoint; a box inside its eps-disc is fine.
  for (double ang : {a.angle_start, a.angle_end}) {
    const double ex = a.xo + a.R * std::cos(ang), ey = a.yo + a.R * std::sin(ang);
    bool in_disc = true;
    for (int i = 0; i < 4; ++i)
      if (std::hypot(cx[i] - ex, cy[i] - ey) > eps) in_disc = false;
    if (in_disc) return true;
  }
  return false;
}

CompositePlan plan_composite_modes(ReferencePlan& plan, const GantryParams& p, double eps,
                                   const CoverOptions& opt) {
  p.validate();
  if (!(eps > 0.0)) throw std::invalid_argument("plan_composite_modes: eps must be positive");
  if (!(opt.margin >= 0.0 && opt.margin < eps))
    throw std::invalid_argument("plan_composite_modes: margin must lie in [0, eps)");
  if (!(opt.overlap >= 0.0)) throw std::invalid_argument("plan_composite_modes: bad overlap");
  const long Nr = static_cast<long>(plan.samples.size());
  if (Nr < 2) throw std::invalid_argument("plan_composite_modes: reference too short");

  // Path length along the whole reference.
  std::vector<double> seg_off(plan.segments.size(), 0.0);
  for (std::size_t i = 1; i < plan.segments.size(); ++i)
    seg_off[i] = seg_off[i - 1] + segment_length(plan.segments[i - 1]);
  std::vector<double> S(Nr);
  std::vector<int> reg(Nr);
  for (long k = 0; k < Nr; ++k) {
    const auto& s = plan.samples[k];
    S[k] = seg_off[s.segment] + s.s;
    reg[k] = physical_mode(s.x, p, k > 0 ? reg[k - 1] : 0);
  }

  auto fits = [&](long a, long b, OutputBox& box) {
    double x0 = plan.samples[a].x, x1 = x0, y0 = plan.samples[a].y, y1 = y0;
    for (long k = a + 1; k <= b; ++k) {
      x0 = std::min(x0, plan.samples[k].x);
      x1 = std::max(x1, plan.samples[k].x);
      y0 = std::min(y0, plan.samples[k].y);
      y1 = std::max(y1, plan.samples[k].y);
    }
    box = {x0 - opt.margin, x1 + opt.margin, y0 - opt.margin, y1 + opt.margin, 0};
    for (std::size_t i = 0; i < plan.segments.size(); ++i)
      if (box_in_band(box, plan.segments[i], eps)) {
        box.segment = static_cast<int>(i);
        return true;
      }
    return false;
  };

  CompositePlan out;
  struct Run {
    long a, c;
    int box;
  };
  std::vector<Run> runs;
  long a = 0;   // first sample of the current timeline run
  long lo = 0;  // first sample the current box must cover
  while (a < Nr) {
    OutputBox box, probe;
    if (!fits(lo, a, box))
      throw std::runtime_error("plan_composite_modes: no box fits around sample " +
                               std::to_string(a) + "; margin too large for eps");
    long b = a;
    while (b + 1 < Nr && (opt.max_length <= 0.0 || S[b + 1] - S[lo] <= opt.max_length) &&
           fits(lo, b + 1, probe)) {
      ++b;
      box = probe;
    }
    long c;
    if (b == Nr - 1) {
      c = Nr;
    } else {
      c = b;
      while (c > a && S[b] - S[c] < opt.overlap) --c;
      c = std::max(c, a + 2);
      if (c > b)
        throw std::runtime_error("plan_composite_modes: box around sample " + std::to_string(a) +
                                 " covers fewer than two samples");
      long best = -1;
      for (long q = std::max(a + 2, c - opt.snap); q <= std::min(b, c + opt.snap); ++q)
        if (q > 0 && reg[q] != reg[q - 1] && (best < 0 || std::abs(q - c) < std::abs(best - c)))
          best = q;
      if (best >= 0) c = best;
      if (Nr - c < 2) c = Nr;  // never leave a one-sample tail
    }
    runs.push_back({a, c, static_cast<int>(out.boxes.size())});
    out.boxes.push_back(box);
    if (c >= Nr) break;
    // The next box also covers a stretch behind its first sample.
    lo = c;
    while (lo > a && S[c] - S[lo - 1] <= opt.overlap) --lo;
    a = c;
  }

  // Split box runs at region crossings; pieces shorter than two samples are
  // absorbed by their predecessor.
  for (const Run& r : runs) {
    std::vector<long> cuts{r.a};
    for (long k = r.a + 1; k < r.c; ++k)
      if (reg[k] != reg[k - 1] && k - cuts.back() >= 2 && r.c - k >= 2) cuts.push_back(k);
    cuts.push_back(r.c);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
      out.modes.push_back({reg[cuts[i]] - 1, r.box, cuts[i], cuts[i + 1]});
  }

  const Polytope X = state_set(p);
  std::map<int, ModeModel> phys;
  const int M = static_cast<int>(out.modes.size());
  plan.sample_mode.assign(Nr, -1);
  plan.mode_sequence.clear();
  plan.dwell_bounds.clear();
  out.graph.num_modes = M;
  for (int i = 0; i < M; ++i) {
    const CompositeMode& cm = out.modes[i];
    if (!phys.count(cm.physical)) phys.emplace(cm.physical, physical_model(p, cm.physical));
    ModeModel md = phys.at(cm.physical);
    const OutputBox& bx = out.boxes[cm.box];
    const double shrink = std::abs(p.xbar[cm.physical]) * p.theta_max;
    Mat A = Mat::Zero(4, 6);
    A(0, 0) = 1.0;
    A(1, 0) = -1.0;
    A(2, 2) = 1.0;
    A(3, 2) = -1.0;
    Vec b(4);
    b << bx.x1, -bx.x0, bx.y1 - shrink, -(bx.y0 + shrink);
    md.S = remove_redundant(X.with_rows(A, b));
    md.mode_id = i;
    md.label = "box" + std::to_string(cm.box) + "/region" + std::to_string(cm.physical + 1);
    if (is_empty(md.S))
      throw std::runtime_error("plan_composite_modes: feasible set of mode " + std::to_string(i) +
                               " is empty");
    out.models.push_back(std::move(md));
    for (long k = cm.k_begin; k < cm.k_end; ++k) plan.sample_mode[k] = i;
    const int d = std::max<int>(1, static_cast<int>(cm.k_end - cm.k_begin) - 1);
    out.graph.dwell.push_back(d);
    plan.dwell_bounds.push_back(d);
    plan.mode_sequence.push_back(i);
    if (i + 1 < M) out.graph.edges.emplace_back(i, i + 1);
  }
  for (long k = 0; k < Nr; ++k)
    if (plan.sample_mode[k] < 0)
      throw std::logic_error("plan_composite_modes: sample " + std::to_string(k) + " unassigned");
  out.graph.validate();
  return out;
}

StageError::StageError(std::string stage_, const std::string& what)
    : std::runtime_error(stage_ + ": " + what), stage(std::move(stage_)) {}

OfflineArtifacts build_problem(const ExperimentConfig& cfg) {
  cfg.plant.validate();
  if (!(cfg.eps > 0.0)) throw std::invalid_argument("eps must be positive");
  OfflineArtifacts art;
  for (const auto& s : cfg.path)
    if (!s.is_line()) {
      const Arc& arc = s.arc();
      const SideCounts sc = polygon_side_counts(arc.R, cfg.eps, cfg.side_count_slack);
      art.annuli.push_back(build_annulus(arc, cfg.eps, sc.n_i, sc.n_o, 0.0));
    }
  art.plan = generate_reference(cfg.path, cfg.v_max, cfg.a_max, cfg.plant.Ts);
  for (const auto& m : build_plant(cfg.plant)) (void)m;  // stabilizability check on every region
  try {
    art.composite = plan_composite_modes(art.plan, cfg.plant, cfg.eps, cfg.cover);
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("feasible sets", e.what());
  }
  MpcConfig& mc = art.online.cfg;
  mc.N = cfg.N;
  mc.Q = cfg.Q;
  mc.R = cfg.R;
  mc.Qs = cfg.Qs;
  mc.state_reg = cfg.state_reg;
  mc.U = input_set(cfg.plant);
  mc.X = state_set(cfg.plant);
  mc.validate(6, 3);
  art.online.models = art.composite.models;
  art.online.graph = art.composite.graph;
  return art;
}

OfflineArtifacts build_offline(const ExperimentConfig& cfg, const LogFn& log) {
  OfflineArtifacts art = build_problem(cfg);
  try {
    SwitchCiOptions o;
    o.max_iter = cfg.max_iter;
    o.row_cap = cfg.row_cap;
    o.log = log;
    art.online.family = switch_ci_sets(art.online.models, art.online.graph, art.online.cfg.U, o);
  } catch (const std::exception& e) {
    throw StageError("switch CI sets", e.what());
  }
  try {
    art.online.terminal = synthesize_terminal(art.online.models, art.online.graph, art.online.cfg);
  } catch (const std::exception& e) {
    throw StageError("terminal ingredients", e.what());
  }
  return art;
}

ReferenceStream reference_stream(const OfflineArtifacts& art) {
  ReferenceStream rs;
  rs.Ts = art.plan.Ts;
  rs.contour = art.plan.segments;
  rs.modes = art.plan.sample_mode;
  for (const auto& s : art.plan.samples) {
    Vec r(2);
    r << s.x, s.y;
    rs.points.push_back(r);
  }
  return rs;
}

Vec initial_state(const OfflineArtifacts& art) {
  Vec x = Vec::Zero(6);
  x(0) = art.plan.start(0);
  x(2) = art.plan.start(1);
  return x;
}

Trace run_online(const OfflineArtifacts& art, const ExperimentConfig& cfg) {
  LoopOptions lo;
  lo.settle_cap = cfg.settle_cap;
  lo.convergence_tol = cfg.convergence_tol;
  return control_loop(art.online, reference_stream(art), initial_state(art), lo);
}

Trace run_experiment(const ExperimentConfig& cfg, const LogFn& log) {
  const OfflineArtifacts art = build_offline(cfg, log);
  return run_online(art, cfg);
}

void write_csv(std::ostream& os, const Trace& trace) {
  std::ostringstream ss;
  ss << std::setprecision(12);
  ss << kCsvHeader << '\n';
  for (const auto& r : trace.records) {
    ss << r.k << ',' << r.t << ',' << r.r(0) << ',' << r.r(1);
    for (Eigen::Index i = 0; i < r.x.size(); ++i) ss << ',' << r.x(i);
    for (Eigen::Index i = 0; i < r.u.size(); ++i) ss << ',' << r.u(i);
    ss << ',' << r.y(0) << ',' << r.y(1) << ',' << r.mode << ',' << r.delta << ',' << r.eps
       << ',' << r.cost << ',' << r.qp_status << '\n';
  }
  os << ss.str();
}

void write_summary(std::ostream& os, const Trace& trace) {
  const TraceSummary& s = trace.summary;
  std::ostringstream ss;
  ss << std::setprecision(12);
  ss << "max_eps " << s.max_eps << '\n'
     << "max_track_x " << s.max_track_x << '\n'
     << "max_track_y " << s.max_track_y << '\n'
     << "switches " << s.switches << '\n'
     << "infeasible " << s.infeasible << '\n'
     << "reference_length " << s.reference_length << '\n'
     << "settle_steps " << s.settle_steps << '\n'
     << "converged " << (s.converged ? 1 : 0) << '\n'
     << "final_output_error " << s.final_output_error << '\n';
  os << ss.str();
}

}  // namespace cmpc
