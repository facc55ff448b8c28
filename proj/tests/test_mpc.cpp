#include <cmath>
#include <random>

#include "contour_mpc/gantry.hpp"
#include "contour_mpc/mpc.hpp"
#include "doctest.h"

using namespace cmpc;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec out(xs.size());
  Eigen::Index i = 0;
  for (double x : xs) out(i++) = x;
  return out;
}

// Two decoupled double integrators, state (x, vx, y, vy), output (x, y).
ModeModel planar(double Ts = 0.1, double gain = 1.0, int id = 0) {
  ModeModel m;
  m.mode_id = id;
  Mat a(2, 2), b(2, 1);
  a << 1, Ts, 0, 1;
  b << gain * Ts * Ts / 2, gain * Ts;
  m.A = Mat::Zero(4, 4);
  m.B = Mat::Zero(4, 2);
  m.A.block(0, 0, 2, 2) = a;
  m.A.block(2, 2, 2, 2) = a;
  m.B.block(0, 0, 2, 1) = b;
  m.B.block(2, 1, 2, 1) = b;
  m.C = Mat::Zero(2, 4);
  m.C(0, 0) = 1;
  m.C(1, 2) = 1;
  m.S = Polytope::box(vec({-1, -1, -1, -1}), vec({1, 1, 1, 1}));
  return m;
}

MpcConfig planar_cfg() {
  MpcConfig c;
  c.N = 3;
  c.Q = Mat::Identity(2, 2) * 10;
  c.R = Mat::Identity(2, 2) * 0.1;
  c.Qs = Mat::Identity(2, 2);
  c.U = Polytope::box(vec({-1, -1}), vec({1, 1}));
  c.X = Polytope::box(vec({-1, -1, -1, -1}), vec({1, 1, 1, 1}));
  return c;
}

// Scalar model with a 2-D output (x, 0) so that Q stays 2x2.
ModeModel scalar(double a, double b, double c = 1.0, int id = 0) {
  ModeModel m;
  m.mode_id = id;
  m.A = Mat::Constant(1, 1, a);
  m.B = Mat::Constant(1, 1, b);
  m.C = Mat::Zero(2, 1);
  m.C(0, 0) = c;
  m.S = Polytope::box(vec({-10}), vec({10}));
  return m;
}

MpcConfig scalar_cfg() {
  MpcConfig c;
  c.N = 1;
  c.Q = Mat::Identity(2, 2);
  c.R = Mat::Identity(1, 1);
  c.Qs = Mat::Identity(2, 2);
  c.state_reg = 0.0;
  c.U = Polytope::box(vec({-5}), vec({5}));
  c.X = Polytope::box(vec({-10}), vec({10}));
  return c;
}

}  // namespace

TEST_CASE("MpcConfig: validation") {
  MpcConfig c = planar_cfg();
  CHECK_NOTHROW(c.validate(4, 2));
  c.N = 0;
  CHECK_THROWS_AS(c.validate(4, 2), std::invalid_argument);
  c = planar_cfg();
  c.Q(0, 0) = -1;
  CHECK_THROWS_AS(c.validate(4, 2), std::invalid_argument);
  c = planar_cfg();
  c.R = Mat::Identity(3, 3);
  CHECK_THROWS_AS(c.validate(4, 2), std::invalid_argument);
  c = planar_cfg();
  CHECK_THROWS_AS(c.validate(5, 2), std::invalid_argument);
}

TEST_CASE("steady_target: integrators hold any interior output") {
  ModeModel m = planar();
  MpcConfig c = planar_cfg();
  SteadyTarget t = steady_target(vec({0.3, -0.7}), m, c);
  CHECK((t.y_s - vec({0.3, -0.7})).norm() <= 1e-8);
  CHECK(t.u_s.norm() <= 1e-8);
  CHECK((m.A * t.x_s + m.B * t.u_s - t.x_s).norm() <= 1e-9);
  CHECK(contains_point(c.X, t.x_s));
  CHECK(contains_point(c.U, t.u_s));
}

TEST_CASE("steady_target: outside references project onto the output box") {
  ModeModel m = planar();
  MpcConfig c = planar_cfg();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int k = 0; k < 200; ++k) {
    Vec r = vec({u(rng), u(rng)});
    Vec proj = r.cwiseMax(-1.0).cwiseMin(1.0);
    SteadyTarget t = steady_target(r, m, c);
    CHECK((t.y_s - proj).norm() <= 1e-7);
  }
}

TEST_CASE("steady_target: no equilibrium in X is an error") {
  // x = 0.5 x + u forces x = 2u in [-0.2, 0.2], disjoint from X = [1, 2]
  ModeModel m = scalar(0.5, 1.0);
  MpcConfig c = scalar_cfg();
  c.U = Polytope::box(vec({-0.1}), vec({0.1}));
  c.X = Polytope::box(vec({1}), vec({2}));
  CHECK_THROWS_AS(steady_target(vec({1.5, 0}), m, c), numsolve::SolverError);
}

TEST_CASE("steady_target: admissible gantry references are reproduced") {
  GantryParams p;
  auto models = build_plant(p);
  MpcConfig c;
  c.Q = Mat::Identity(2, 2);
  c.R = Mat::Identity(3, 3);
  c.Qs = Mat::Identity(2, 2);
  c.U = input_set(p);
  c.X = state_set(p);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> ux(-p.x_travel, p.x_travel), uy(-p.y_travel, p.y_travel);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const ModeModel& m = models[k % models.size()];
    Vec r = vec({ux(rng), uy(rng)});
    SteadyTarget t = steady_target(r, m, c);
    worst = std::max(worst, (t.y_s - r).norm());
    CHECK((m.A * t.x_s + m.B * t.u_s - t.x_s).norm() <= 1e-9);
    CHECK(contains_point(c.X, t.x_s));
    CHECK(contains_point(c.U, t.u_s));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("synthesize_terminal: scalar closed form") {
  // a = 0.5, b = 1, C'QC = 1, R = 1: P^2 = 1 + P/4
  ModeModel m = scalar(0.5, 1.0);
  MpcConfig c = scalar_cfg();
  ModeGraph g{1, {{0, 0}}, {1}};
  TerminalIngredients t = synthesize_terminal({m}, g, c);
  const double P = (0.25 + std::sqrt(0.0625 + 4.0)) / 2.0;
  const double K = -0.5 * P / (1.0 + P);
  CHECK(t.P[0](0, 0) == doctest::Approx(P).epsilon(1e-10));
  CHECK(t.K[0](0, 0) == doctest::Approx(K).epsilon(1e-10));
  CHECK(t.lambda[0] == 1.0);
  CHECK(t.worst_certificate() >= -1e-8);
  // the Lyapunov fixed point makes the self-loop inequality tight
  CHECK(std::abs(t.worst_certificate()) <= 1e-8);
}

TEST_CASE("synthesize_terminal: a 100x larger successor P triggers lambda scaling") {
  ModeModel m0 = scalar(0.5, 1.0, 1.0, 0);
  ModeModel m1 = scalar(0.5, 1.0, 10.0, 1);
  MpcConfig c = scalar_cfg();
  ModeGraph g{2, {{0, 1}}, {1, 1}};
  TerminalIngredients t = synthesize_terminal({m0, m1}, g, c);
  CHECK(t.lambda[1] == 1.0);
  CHECK(t.lambda[0] > 1.0);
  CHECK(t.worst_certificate() >= -1e-8);
  REQUIRE(t.certificate.size() == 3);
  // near-minimal: shrinking the scale by 1% breaks the edge inequality
  const Mat P0 = t.P[0] / 1.01;
  CHECK(assumption3_min_eig(m0, t.K[0], P0, t.P[1], c) < -1e-8);
  // unscaled Lyapunov solutions: P1 is 100x P0
  TerminalIngredients raw0 = synthesize_terminal({m0}, ModeGraph{1, {}, {1}}, c);
  TerminalIngredients raw1 = synthesize_terminal({m1}, ModeGraph{1, {}, {1}}, c);
  CHECK(raw1.P[0](0, 0) > 50 * raw0.P[0](0, 0));
}

TEST_CASE("synthesize_terminal: closed loops are Schur and certificates hold on the plant") {
  GantryParams p;
  auto models = build_plant(p);
  MpcConfig c;
  c.Q = Eigen::Vector2d(1e5, 1e5).asDiagonal();
  c.R = Eigen::Vector3d(1e-1, 1e-3, 1e-2).asDiagonal();
  c.Qs = Mat::Identity(2, 2);
  c.U = input_set(p);
  c.X = state_set(p);
  // region chain as traversed by a left-to-right stroke
  ModeGraph g{5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, {1, 1, 1, 1, 1}};
  TerminalIngredients t = synthesize_terminal(models, g, c);
  for (int m = 0; m < 5; ++m)
    CHECK(numsolve::spectral_radius(models[m].A + models[m].B * t.K[m]) < 1.0);
  CHECK(t.worst_certificate() >= -1e-8);
  CHECK(t.certificate.size() == 9);
}

TEST_CASE("synthesize_terminal: conflicting cycle raises TerminalError") {
  // both directions of a 2-cycle between slow and fast actuation
  std::vector<ModeModel> models{planar(0.1, 0.5, 0), planar(0.1, 2.0, 1)};
  ModeGraph g{2, {{0, 1}, {1, 0}}, {1, 1}};
  CHECK_THROWS_AS(synthesize_terminal(models, g, planar_cfg()), TerminalError);
}

TEST_CASE("update_dwell: recursion cases") {
  ModeGraph g{3, {{0, 1}, {1, 2}}, {2, 5, 1}};
  DwellState s{0, 1, 3};
  CHECK(update_dwell(s, 0, g).delta == 2);
  s.delta = 0;
  CHECK(update_dwell(s, 0, g).delta == 0);
  DwellState sw = update_dwell(s, 1, g);
  CHECK(sw.sigma == 1);
  CHECK(sw.delta == 5);
  CHECK(sw.sigma_next == -1);
  s.delta = 1;
  CHECK_THROWS_AS(update_dwell(s, 1, g), DwellError);
  s.delta = 0;
  CHECK_THROWS_AS(update_dwell(s, 2, g), DwellError);
}

TEST_CASE("mpc_step: equilibrium inside every set returns u_s at zero cost") {
  ModeModel m = planar();
  MpcConfig c = planar_cfg();
  ModeGraph g{1, {{0, 0}}, {1}};
  SwitchCiFamily f = switch_ci_sets({m}, g, c.U);
  TerminalIngredients t = synthesize_terminal({m}, g, c);
  SteadyTarget tgt = steady_target(vec({0.2, -0.1}), m, c);
  DwellState ds{0, -1, 0};
  MpcSolution s = mpc_step(tgt.x_s, ds, tgt, f, m.S, {m}, c, t);
  REQUIRE(s.feasible());
  CHECK((s.u0 - tgt.u_s).norm() <= 1e-8);
  CHECK(std::abs(s.cost) <= 1e-10);
}

TEST_CASE("mpc_step: N = 1 matches a 10^6-point grid search") {
  ModeModel m = planar(0.5);
  MpcConfig c = planar_cfg();
  c.N = 1;
  c.R = Mat::Identity(2, 2);
  ModeGraph g{1, {{0, 0}}, {1}};
  SwitchCiFamily f;
  f.C = {Polytope::box(vec({-1, -0.3, -1, -0.3}), vec({1, 0.3, 1, 0.3}))};
  TerminalIngredients t = synthesize_terminal({m}, g, c);
  SteadyTarget tgt = steady_target(vec({0.5, -0.5}), m, c);
  const Vec x = vec({-0.4, 0.1, 0.6, -0.2});
  DwellState ds{0, -1, 0};
  MpcSolution s = mpc_step(x, ds, tgt, f, m.S, {m}, c, t);
  REQUIRE(s.feasible());

  const Mat& P = t.P[0];
  const Vec e0 = m.C * x - tgt.y_s;
  const double stage0 = e0.dot(c.Q * e0);
  double best = 1e300;
  Vec ubest;
  const int n = 1000;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Vec u = vec({-1 + 2.0 * i / (n - 1), -1 + 2.0 * j / (n - 1)});
      Vec x1 = m.A * x + m.B * u;
      if (!contains_point(f.C[0], x1, 1e-12)) continue;
      Vec du = u - tgt.u_s, ex = x1 - tgt.x_s;
      const double J = stage0 + du.dot(c.R * du) + ex.dot(P * ex);
      if (J < best) {
        best = J;
        ubest = u;
      }
    }
  REQUIRE(ubest.size() == 2);
  CHECK((s.u0 - ubest).lpNorm<Eigen::Infinity>() <= 1e-3);
  CHECK(s.cost <= best + 1e-9);
  CHECK(best - s.cost <= 1e-3 * best);
  // the velocity constraint of C binds here
  CHECK(std::abs(s.predicted[1](1)) == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("mpc_step: state outside every set is infeasible") {
  ModeModel m = planar();
  MpcConfig c = planar_cfg();
  ModeGraph g{1, {{0, 0}}, {1}};
  SwitchCiFamily f = switch_ci_sets({m}, g, c.U);
  TerminalIngredients t = synthesize_terminal({m}, g, c);
  SteadyTarget tgt = steady_target(vec({0, 0}), m, c);
  DwellState ds{0, -1, 0};
  MpcSolution s = mpc_step(vec({3, 2, 0, 0}), ds, tgt, f, m.S, {m}, c, t);
  CHECK_FALSE(s.feasible());
  CHECK(s.status == numsolve::Status::Infeasible);
}

TEST_CASE("mpc_stage_set: tube slices before the window closes") {
  ModeModel m = planar();
  MpcConfig c = planar_cfg();
  ModeGraph g{1, {{0, 0}}, {4}};
  SwitchCiFamily f = switch_ci_sets({m}, g, c.U);
  DwellState ds{0, -1, 2};
  CHECK(&mpc_stage_set(0, ds, f, m.S) == &tube_at(f.tubes[0], 1));
  CHECK(&mpc_stage_set(1, ds, f, m.S) == &tube_at(f.tubes[0], 0));
  CHECK(&mpc_stage_set(2, ds, f, m.S) == &f.C[0]);
  SwitchCiFamily bare;
  bare.C = f.C;
  CHECK(&mpc_stage_set(0, ds, bare, m.S) == &m.S);
}

TEST_CASE("recursive feasibility under random admissible switching") {
  // Three modes sharing dynamics with different feasible boxes; fully connected.
  std::vector<ModeModel> models{planar(0.1, 1.0, 0), planar(0.1, 1.0, 1), planar(0.1, 1.0, 2)};
  models[1].S = Polytope::box(vec({-0.6, -1, -1, -1}), vec({1, 1, 0.6, 1}));
  models[2].S = Polytope::box(vec({-1, -0.5, -0.8, -0.5}), vec({0.7, 0.5, 1, 0.5}));
  MpcConfig c = planar_cfg();
  ModeGraph g{3, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {0, 2}, {2, 0}}, {3, 5, 2}};
  SwitchCiFamily f = switch_ci_sets(models, g, c.U);
  TerminalIngredients t = synthesize_terminal(models, g, c);
  REQUIRE(t.worst_certificate() >= -1e-8);

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> ur(-1.2, 1.2), u01(0, 1);
  int infeasible = 0, transfer = 0;
  for (int run = 0; run < 50; ++run) {
    DwellState ds{static_cast<int>(rng() % 3), -1, 0};
    ds.delta = g.dwell[ds.sigma];
    Vec x = sample_uniform(f.C[ds.sigma], 1, 1000 + run)[0];
    Vec r = vec({ur(rng), ur(rng)});
    for (int k = 0; k < 500; ++k) {
      if (k > 0) {
        int next = ds.sigma;
        if (ds.delta == 0 && u01(rng) < 0.2) {
          auto succ = g.successors(ds.sigma);
          next = succ[rng() % succ.size()];
          r = vec({ur(rng), ur(rng)});
        }
        ds = update_dwell(ds, next, g);
      }
      const ModeModel& md = models[ds.sigma];
      SteadyTarget tgt = steady_target(r, md, c);
      MpcSolution s = mpc_step(x, ds, tgt, f, md.S, models, c, t);
      if (!s.feasible()) {
        ++infeasible;
        break;
      }
      const Polytope& demanded = mpc_stage_set(0, ds, f, md.S);
      x = md.A * x + md.B * s.u0;
      if (!contains_point(demanded, x, 1e-7)) ++transfer;
    }
  }
  CHECK(infeasible == 0);
  CHECK(transfer == 0);
}

TEST_CASE("control_loop: constant reference at equilibrium") {
  ModeModel m = planar();
  OnlineProblem pb;
  pb.models = {m};
  pb.graph = ModeGraph{1, {{0, 0}}, {1}};
  pb.cfg = planar_cfg();
  pb.family = switch_ci_sets(pb.models, pb.graph, pb.cfg.U);
  pb.terminal = synthesize_terminal(pb.models, pb.graph, pb.cfg);
  ReferenceStream ref;
  ref.points = {vec({0.1, 0.2})};
  ref.modes = {0};
  ref.contour = {ContourSegment{line_through(0.1, 0.2, 0.5, 0.2), 0, 1}};
  Vec x0 = vec({0.1, 0, 0.2, 0});
  Trace tr = control_loop(pb, ref, x0);
  REQUIRE(tr.records.size() == 1);
  CHECK(tr.records[0].eps == doctest::Approx(0.0));
  CHECK(tr.summary.converged);
  CHECK(tr.summary.infeasible == 0);
}

TEST_CASE("control_loop: terminal regulation decreases J*") {
  ModeModel m = planar();
  OnlineProblem pb;
  pb.models = {m};
  pb.graph = ModeGraph{1, {{0, 0}}, {1}};
  pb.cfg = planar_cfg();
  pb.family = switch_ci_sets(pb.models, pb.graph, pb.cfg.U);
  pb.terminal = synthesize_terminal(pb.models, pb.graph, pb.cfg);
  ReferenceStream ref;
  ref.points = {vec({0.5, -0.3})};
  ref.modes = {0};
  LoopOptions opt;
  opt.convergence_tol = 1e-8;
  // close enough that the shifted candidate keeps the inputs unsaturated
  Trace tr = control_loop(pb, ref, vec({0.4, 0.05, -0.2, 0.0}), opt);
  CHECK(tr.summary.converged);
  CHECK(tr.summary.settle_steps > 10);
  for (std::size_t k = 1; k < tr.records.size(); ++k) {
    const Vec e = tr.records[k - 1].y - vec({0.5, -0.3});
    CHECK(tr.records[k].cost - tr.records[k - 1].cost <= -e.dot(pb.cfg.Q * e) + 1e-6);
  }
}

TEST_CASE("control_loop: infeasible start aborts with the prefix") {
  ModeModel m = planar();
  OnlineProblem pb;
  pb.models = {m};
  pb.graph = ModeGraph{1, {{0, 0}}, {1}};
  pb.cfg = planar_cfg();
  pb.family = switch_ci_sets(pb.models, pb.graph, pb.cfg.U);
  pb.terminal = synthesize_terminal(pb.models, pb.graph, pb.cfg);
  ReferenceStream ref;
  ref.points = {vec({0, 0}), vec({0, 0})};
  ref.modes = {0, 0};
  try {
    control_loop(pb, ref, vec({0.99, 1.0, 0, 0}));
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    CHECK(e.k == 0);
    REQUIRE(e.prefix.records.size() == 1);
    CHECK(e.prefix.records[0].qp_status != "Optimal");
  }
}
