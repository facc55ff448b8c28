#include <cmath>
#include <random>
#include <sstream>

#include "contour_mpc/gantry.hpp"
#include "doctest.h"

using namespace cmpc;

namespace {

ContourSegment line_seg(double x0, double y0, double x1, double y1) {
  return ContourSegment{line_through(x0, y0, x1, y1), 0, 0};
}

double on_curve(const ReferenceSample& s, const ContourSegment& seg) {
  if (seg.is_line()) {
    const Line& l = seg.line();
    return std::abs(l.a * s.x + l.b * s.y + l.c) / std::hypot(l.a, l.b);
  }
  const Arc& a = seg.arc();
  return std::abs(std::hypot(s.x - a.xo, s.y - a.yo) - a.R);
}

// Positions with the rest state at the path start prepended twice.
std::vector<Eigen::Vector2d> positions(const ReferencePlan& plan) {
  std::vector<Eigen::Vector2d> out(2, Eigen::Vector2d(plan.start(0), plan.start(1)));
  for (const auto& s : plan.samples) out.emplace_back(s.x, s.y);
  return out;
}

void check_kinematics(const ReferencePlan& plan) {
  auto p = positions(plan);
  double vmax = 0.0, amax = 0.0;
  for (std::size_t k = 1; k < p.size(); ++k) vmax = std::max(vmax, (p[k] - p[k - 1]).norm());
  for (std::size_t k = 2; k < p.size(); ++k)
    amax = std::max(amax, (p[k] - 2 * p[k - 1] + p[k - 2]).norm());
  CHECK(vmax <= plan.v_max * plan.Ts + 1e-12);
  CHECK(amax <= plan.a_max * plan.Ts * plan.Ts + 1e-12);
  // the path ends at rest on its end point
  const ContourSegment& last = plan.segments.back();
  const Vec end = segment_point(last, segment_length(last));
  CHECK((p.back() - Eigen::Vector2d(end(0), end(1))).norm() <= 1e-12);
}

ExperimentConfig diagonal_config() {
  ExperimentConfig c;
  c.path = {line_seg(0.0, 0.0, 0.04, 0.03)};
  return c;
}

}  // namespace

TEST_CASE("GantryParams: validation") {
  GantryParams p;
  CHECK_NOTHROW(p.validate());
  GantryParams bad = p;
  bad.Ts = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.zeta = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.omega[2] = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = p;
  bad.boundaries = {-0.075, 0.025, -0.025, 0.075};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("build_plant: theta-free step matches the double-integrator closed form") {
  GantryParams p;
  auto models = build_plant(p);
  REQUIRE(models.size() == 5);
  for (const ModeModel& m : models) {
    Vec x = Vec::Zero(6);
    Vec u(3);
    u << 0.7, -0.4, -0.4;  // u3 - u2 = 0 keeps theta at rest
    for (int k = 1; k <= 500; ++k) {
      x = m.A * x + m.B * u;
      const double t = k * p.Ts;
      CHECK(std::abs(x(0) - 0.5 * p.k1 * u(0) * t * t) <= 1e-9);
      CHECK(std::abs(x(2) - 0.5 * p.k2 * (u(1) + u(2)) * t * t) <= 1e-9);
      CHECK(std::abs(x(4)) <= 1e-12);
    }
    Vec y = m.C * x;
    CHECK(y(0) == doctest::Approx(x(0)));
    CHECK(y(1) == doctest::Approx(x(2)));
    CHECK_NOTHROW(check_assumption1(m));
  }
}

TEST_CASE("build_plant: torsion mode oscillates at the configured frequency") {
  GantryParams p;
  for (int j = 0; j < 5; ++j) {
    ModeModel m = physical_model(p, j);
    Eigen::ComplexEigenSolver<Mat> es(m.A);
    double best = 0.0;
    for (Eigen::Index i = 0; i < 6; ++i) best = std::max(best, std::abs(std::arg(es.eigenvalues()(i))));
    const double wd = p.omega[j] * std::sqrt(1 - p.zeta * p.zeta);
    CHECK(best / p.Ts == doctest::Approx(wd).epsilon(1e-9));
  }
}

TEST_CASE("physical_mode: region lookup and hysteresis") {
  GantryParams p;
  CHECK(physical_mode(-0.09, p) == 1);
  CHECK(physical_mode(0.0, p) == 3);
  CHECK(physical_mode(-0.05, p) == 2);
  CHECK(physical_mode(0.1, p) == 5);
  CHECK(physical_mode(0.12, p) == 5);
  CHECK(physical_mode(-0.075, p, 1) == 1);
  CHECK(physical_mode(-0.075, p, 2) == 2);
  CHECK(physical_mode(0.025, p, 3) == 3);
  CHECK(physical_mode(0.025, p, 4) == 4);
  // previous region not touching the point is ignored
  CHECK(physical_mode(0.0, p, 5) == 3);
}

TEST_CASE("output maps of adjacent modes differ only through theta") {
  GantryParams p;
  for (int j = 0; j + 1 < 5; ++j) {
    Mat d = physical_model(p, j + 1).C - physical_model(p, j).C;
    Mat expect = Mat::Zero(2, 6);
    expect(1, 4) = p.xbar[j + 1] - p.xbar[j];
    CHECK((d - expect).norm() <= 1e-15);
  }
  CHECK(output_map(0.05)(1, 4) == 0.05);
}

TEST_CASE("state and input sets") {
  GantryParams p;
  Polytope U = input_set(p);
  Polytope X = state_set(p);
  Vec u(3);
  u << 5, 1, 4.5;  // |u2 + u3| = 5.5 <= 6, |u3 - u2| = 3.5 <= 4
  CHECK(contains_point(U, u));
  u << 5, 3.1, 3.1;
  CHECK_FALSE(contains_point(U, u));
  u << 0, -2.1, 2.1;
  CHECK_FALSE(contains_point(U, u));
  u << 5.01, 0, 0;
  CHECK_FALSE(contains_point(U, u));
  Vec x = Vec::Zero(6);
  CHECK(contains_point(X, x));
  x(0) = 0.126;
  CHECK_FALSE(contains_point(X, x));
  x(0) = 0.0;
  x(4) = 0.006;
  CHECK_FALSE(contains_point(X, x));
}

TEST_CASE("generate_reference: 0.1 m line takes 550 samples") {
  auto plan = generate_reference({line_seg(0.0, 0.0, 0.1, 0.0)}, 0.1, 1.0, 0.002);
  // trapezoid: L / v + v / a = 1.1 s
  CHECK(plan.samples.size() == 550);
  // k indexes the reference stream
  CHECK(plan.samples.front().k == 0);
  CHECK(plan.samples.back().k == 549);
  CHECK(plan.samples.back().x == doctest::Approx(0.1).epsilon(1e-12));
  check_kinematics(plan);
  // triangular profile when v_max is out of reach
  auto tri = generate_reference({line_seg(0.0, 0.0, 0.004, 0.0)}, 0.1, 1.0, 0.002);
  CHECK(tri.samples.size() == static_cast<std::size_t>(std::ceil(2 * std::sqrt(0.004) / 0.002 - 1e-9)));
  check_kinematics(tri);
}

TEST_CASE("generate_reference: default path") {
  auto path = default_path();
  REQUIRE(path.size() == 3);
  auto plan = generate_reference(path, 0.1, 1.0, 0.002);
  CHECK(plan.start(0) == 0.08);
  CHECK(plan.start(1) == -0.08);
  for (const auto& s : plan.samples) CHECK(on_curve(s, path[s.segment]) <= 1e-9);
  check_kinematics(plan);
  // the circle is run at constant cruise speed: 2 pi 0.08 / 0.1 s
  long on_circle = 0;
  for (const auto& s : plan.samples) on_circle += s.segment == 1 ? 1 : 0;
  CHECK(std::abs(on_circle * 0.002 - 2 * M_PI * 0.08 / 0.1) <= 0.002);
  // inclusive segment windows are contiguous and ordered
  for (std::size_t i = 0; i + 1 < plan.segments.size(); ++i)
    CHECK(plan.segments[i].k_end + 1 == plan.segments[i + 1].k_start);
  CHECK(plan.segments.front().k_start == plan.samples.front().k);
  CHECK(plan.segments.back().k_end == plan.samples.back().k);
  for (const auto& s : plan.samples)
    CHECK((s.k >= plan.segments[s.segment].k_start && s.k <= plan.segments[s.segment].k_end));
}

TEST_CASE("generate_reference: a corner brings the reference to rest") {
  auto plan = generate_reference({line_seg(0, 0, 0.05, 0), line_seg(0.05, 0, 0.05, 0.05)}, 0.1,
                                 1.0, 0.002);
  check_kinematics(plan);
  auto p = positions(plan);
  // exactly one stop at the corner sample
  long corner = -1;
  for (std::size_t k = 0; k < plan.samples.size(); ++k)
    if (std::abs(plan.samples[k].x - 0.05) < 1e-15 && std::abs(plan.samples[k].y) < 1e-15)
      corner = static_cast<long>(k);
  REQUIRE(corner > 0);
  const double step_in = (p[corner + 2] - p[corner + 1]).norm();
  CHECK(step_in <= 0.5 * 1.0 * 0.002 * 0.002 + 1e-12);
}

TEST_CASE("generate_reference: errors") {
  CHECK_THROWS_AS(generate_reference({line_seg(0, 0, 0.1, 0), line_seg(0.2, 0, 0.3, 0)}, 0.1,
                                     1.0, 0.002),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_reference({ContourSegment{Line{1, 0, 0}, 0, 0}}, 0.1, 1.0, 0.002),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_reference({line_seg(0, 0, 0.1, 0)}, 0.0, 1.0, 0.002),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_reference({}, 0.1, 1.0, 0.002), std::invalid_argument);
}

TEST_CASE("box_in_band: sampling oracle") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.1, 0.1), w(0.0, 0.01), f(0.0, 1.0);
  std::vector<ContourSegment> segs{line_seg(-0.05, -0.02, 0.06, 0.03),
                                   ContourSegment{Arc{0.0, 0.0, 0.08, 0.3, 2.0}, 0, 0}};
  const double eps = 0.004;
  int accepted = 0;
  for (int t = 0; t < 20000; ++t) {
    const ContourSegment& s = segs[t % 2];
    // boxes near the path so that both outcomes occur
    Vec c = segment_point(s, f(rng) * segment_length(s));
    const double x0 = c(0) + u(rng) * 0.05, y0 = c(1) + u(rng) * 0.05;
    OutputBox b{x0, x0 + w(rng), y0, y0 + w(rng), 0};
    if (!box_in_band(b, s, eps)) continue;
    ++accepted;
    for (int i = 0; i <= 10; ++i)
      for (int j = 0; j <= 10; ++j) {
        const double x = b.x0 + (b.x1 - b.x0) * i / 10, y = b.y0 + (b.y1 - b.y0) * j / 10;
        CHECK(segment_distance(x, y, s) <= eps + 1e-12);
      }
  }
  CHECK(accepted > 100);
}

TEST_CASE("plan_composite_modes: boxes cover the reference inside the band") {
  GantryParams p;
  auto plan = generate_reference(default_path(), 0.1, 1.0, p.Ts);
  CompositePlan cp = plan_composite_modes(plan, p, 0.004);
  const long Nr = static_cast<long>(plan.samples.size());
  REQUIRE(plan.sample_mode.size() == static_cast<std::size_t>(Nr));
  CHECK(cp.models.size() == cp.modes.size());
  CHECK(cp.graph.num_modes == static_cast<int>(cp.modes.size()));
  long expected = 0;
  for (std::size_t i = 0; i < cp.modes.size(); ++i) {
    const CompositeMode& m = cp.modes[i];
    CHECK(m.k_begin == expected);
    expected = m.k_end;
    CHECK(m.k_end - m.k_begin >= 2);
    CHECK(cp.graph.dwell[i] == std::max<long>(1, m.k_end - m.k_begin - 1));
    const OutputBox& b = cp.boxes[m.box];
    CHECK(box_in_band(b, plan.segments[b.segment], 0.004));
    for (long k = m.k_begin; k < m.k_end; ++k) {
      const auto& s = plan.samples[k];
      CHECK(plan.sample_mode[k] == static_cast<int>(i));
      CHECK((s.x >= b.x0 && s.x <= b.x1 && s.y >= b.y0 && s.y <= b.y1));
      CHECK(physical_mode(s.x, p, m.physical + 1) == m.physical + 1);
    }
    if (i + 1 < cp.modes.size()) CHECK(cp.graph.has_edge(static_cast<int>(i), static_cast<int>(i + 1)));
  }
  CHECK(expected == Nr);
  CHECK(plan.mode_sequence.size() == cp.modes.size());
  for (int d : plan.dwell_bounds) CHECK(d >= 1);
  // every state of every feasible set has contouring error within eps
  int bad = 0;
  const std::vector<ContourSegment> contour = plan.segments;
  for (std::size_t i = 0; i < cp.models.size(); i += 7)
    for (const Vec& x : sample_uniform(cp.models[i].S, 200, 50 + i)) {
      Vec y = cp.models[i].C * x;
      if (contouring_error(y(0), y(1), contour) > 0.004 + 1e-9) ++bad;
    }
  CHECK(bad == 0);
}

TEST_CASE("plan_composite_modes: errors") {
  GantryParams p;
  auto plan = generate_reference({line_seg(0.0, 0.0, 0.05, 0.0)}, 0.1, 1.0, p.Ts);
  CHECK_THROWS_AS(plan_composite_modes(plan, p, 0.0005), std::invalid_argument);
  CHECK_THROWS_AS(plan_composite_modes(plan, p, -1.0), std::invalid_argument);
}

TEST_CASE("run_experiment: axis-aligned line crossing every region") {
  ExperimentConfig c;
  c.path = {line_seg(-0.1, 0.0, 0.1, 0.0)};
  Trace tr = run_experiment(c);
  CHECK(tr.summary.infeasible == 0);
  CHECK(tr.summary.converged);
  CHECK(tr.summary.max_eps <= 1e-4);
  CHECK(tr.summary.switches >= 4);
}

TEST_CASE("run_experiment: diagonal line, nominal against slow") {
  ExperimentConfig c = diagonal_config();
  OfflineArtifacts art = build_offline(c);
  Trace tr = run_online(art, c);
  CHECK(tr.summary.infeasible == 0);
  CHECK(tr.summary.converged);
  CHECK(tr.summary.max_eps <= c.eps);

  const auto& models = art.online.models;
  long switches_checked = 0, run = 1;
  for (std::size_t k = 0; k < tr.records.size(); ++k) {
    const TraceRecord& r = tr.records[k];
    // stored contouring error matches a recomputation
    CHECK(std::abs(r.eps - contouring_error(r.y(0), r.y(1), c.path)) <= 1e-12);
    CHECK(r.eps <= c.eps);
    if (k + 1 < tr.records.size()) {
      const TraceRecord& n = tr.records[k + 1];
      const ModeModel& m = models[r.mode];
      if (n.mode == r.mode) {
        CHECK((n.x - (m.A * r.x + m.B * r.u)).norm() <= 1e-9);
        ++run;
      } else {
        // runs of the mode signal honour the dwell bound of the mode left
        CHECK(run >= art.online.graph.dwell[r.mode]);
        ++switches_checked;
        run = 1;
      }
    }
  }
  CHECK(switches_checked == tr.summary.switches);

  ExperimentConfig slow = c;
  slow.v_max *= 0.1;
  Trace ts = run_experiment(slow);
  CHECK(ts.summary.infeasible == 0);
  CHECK(ts.summary.max_eps < tr.summary.max_eps);
}

TEST_CASE("build_offline: stage failures carry the stage name") {
  ExperimentConfig c = diagonal_config();
  c.eps = 0.0009;  // below the box margin: a precondition, not a stage failure
  CHECK_THROWS_AS(build_offline(c), std::invalid_argument);
  c = diagonal_config();
  c.path = {line_seg(0.2, 0.0, 0.2, 0.01)};  // beyond the beam travel
  try {
    build_offline(c);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage == "feasible sets");
  }
}

TEST_CASE("write_csv: header and precision") {
  Trace tr;
  TraceRecord r;
  r.k = 3;
  r.t = 0.006;
  r.r = Eigen::Vector2d(0.08, -0.08);
  r.x = Vec::LinSpaced(6, 0.1, 0.6);
  r.u = Eigen::Vector3d(1.0 / 3.0, 0, -1);
  r.y = Eigen::Vector2d(0.1, 0.3);
  r.mode = 2;
  r.delta = 1;
  r.eps = 1.0 / 7.0;
  r.cost = 2.5;
  r.qp_status = "Optimal";
  tr.records.push_back(r);
  std::ostringstream os;
  write_csv(os, tr);
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == kCsvHeader);
  CHECK(row.rfind("3,0.006,0.08,-0.08,", 0) == 0);
  CHECK(row.find("0.333333333333") != std::string::npos);
  CHECK(row.find("0.142857142857") != std::string::npos);
  CHECK(row.substr(row.size() - 7) == "Optimal");
  int commas = 0;
  for (char ch : row) commas += ch == ',';
  CHECK(commas == 19);
}
