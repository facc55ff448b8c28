#include "contour_mpc/mpc.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace cmpc {

namespace ns = numsolve;

namespace {

// Ties the steady target down along directions the output does not see.
constexpr double kTargetRidge = 1e-6;
constexpr double kCertTol = 1e-8;
constexpr double kLambdaMax = 1e6;

bool spd(const Mat& M) {
  if (M.rows() != M.cols() || M.rows() == 0) return false;
  if ((M - M.transpose()).norm() > 1e-12 * std::max(1.0, M.norm())) return false;
  Eigen::LLT<Mat> llt(M);
  return llt.info() == Eigen::Success;
}

double min_eig(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

void MpcConfig::validate(int nx, int nu) const {
  if (N < 1) throw std::invalid_argument("MpcConfig: horizon N must be >= 1");
  if (Q.rows() != 2 || !spd(Q)) throw std::invalid_argument("MpcConfig: Q must be 2x2 SPD");
  if (Qs.rows() != 2 || !spd(Qs)) throw std::invalid_argument("MpcConfig: Qs must be 2x2 SPD");
  if (R.rows() != nu || !spd(R)) throw std::invalid_argument("MpcConfig: R must be SPD n_u x n_u");
  if (!(state_reg >= 0.0)) throw std::invalid_argument("MpcConfig: state_reg must be >= 0");
  if (U.dim() != nu) throw std::invalid_argument("MpcConfig: U has wrong dimension");
  if (X.dim() != nx) throw std::invalid_argument("MpcConfig: X has wrong dimension");
}

double TerminalIngredients::worst_certificate() const {
  double w = std::numeric_limits<double>::infinity();
  for (const auto& c : certificate) w = std::min(w, c.min_eig);
  return w;
}

double assumption3_min_eig(const ModeModel& m, const Mat& K, const Mat& Pm, const Mat& Pn,
                           const MpcConfig& cfg) {
  const Mat Acl = m.A + m.B * K;
  const Mat M = Pm - Acl.transpose() * Pn * Acl - m.C.transpose() * cfg.Q * m.C -
                K.transpose() * cfg.R * K;
  return min_eig(M);
}

TerminalIngredients synthesize_terminal(const std::vector<ModeModel>& models,
                                        const ModeGraph& graph, const MpcConfig& cfg) {
  const int M = static_cast<int>(models.size());
  if (M != graph.num_modes) throw std::invalid_argument("synthesize_terminal: mode count mismatch");
  TerminalIngredients t;
  t.K.resize(M);
  t.P.resize(M);
  t.lambda.assign(M, 1.0);
  for (int m = 0; m < M; ++m) {
    const ModeModel& md = models[m];
    // Composite modes often share physical matrices; reuse their gains.
    int same = -1;
    for (int j = 0; j < m && same < 0; ++j)
      if (models[j].A == md.A && models[j].B == md.B && models[j].C == md.C) same = j;
    if (same >= 0) {
      t.K[m] = t.K[same];
      t.P[m] = t.P[same];
      continue;
    }
    const Mat W = md.C.transpose() * cfg.Q * md.C +
                  cfg.state_reg * Mat::Identity(md.A.rows(), md.A.rows());
    auto lqr = ns::dlqr(md.A, md.B, W, cfg.R);
    t.K[m] = lqr.K;
    const Mat Acl = md.A + md.B * lqr.K;
    t.P[m] = ns::dlyap(Acl, W + lqr.K.transpose() * cfg.R * lqr.K);
  }

  std::vector<std::vector<int>> out(M);
  for (auto [a, b] : graph.edges)
    if (a != b) out[a].push_back(b);

  auto mode_ok = [&](int m, double lam) {
    const Mat Pm = lam * t.P[m];
    if (assumption3_min_eig(models[m], t.K[m], Pm, Pm, cfg) < -kCertTol) return false;
    for (int n : out[m])
      if (assumption3_min_eig(models[m], t.K[m], Pm, t.P[n], cfg) < -kCertTol) return false;
    return true;
  };

  // Scaling P_m only tightens the edges into m, so sweep until nothing moves.
  for (int pass = 0;; ++pass) {
    if (pass > 4 * M + 10)
      throw TerminalError("terminal decrease condition unsatisfiable with Lyapunov-based P (no settling)");
    bool moved = false;
    for (int m = M - 1; m >= 0; --m) {
      if (mode_ok(m, 1.0)) continue;
      double hi = 2.0;
      while (!mode_ok(m, hi)) {
        hi *= 2.0;
        if (hi > kLambdaMax) {
          if (mode_ok(m, kLambdaMax)) {
            hi = kLambdaMax;
            break;
          }
          throw TerminalError("terminal decrease condition unsatisfiable with Lyapunov-based P (mode " +
                              std::to_string(m) + ")");
        }
      }
      double lo = 1.0;
      while (hi - lo > 1e-6 * hi) {
        const double mid = 0.5 * (lo + hi);
        (mode_ok(m, mid) ? hi : lo) = mid;
      }
      t.P[m] *= hi;
      t.lambda[m] *= hi;
      if (t.lambda[m] > kLambdaMax)
        throw TerminalError("terminal decrease condition unsatisfiable with Lyapunov-based P (mode " +
                            std::to_string(m) + ")");
      moved = true;
    }
    if (!moved) break;
  }

  for (int m = 0; m < M; ++m) {
    t.certificate.push_back({m, m, assumption3_min_eig(models[m], t.K[m], t.P[m], t.P[m], cfg)});
    for (int n : out[m])
      t.certificate.push_back({m, n, assumption3_min_eig(models[m], t.K[m], t.P[m], t.P[n], cfg)});
  }
  return t;
}

SteadyTarget steady_target(const Vec& r, const ModeModel& model, const MpcConfig& cfg) {
  const Eigen::Index nx = model.A.rows(), nu = model.B.cols();
  if (r.size() != 2) throw std::invalid_argument("steady_target: reference must be 2-D");
  const Eigen::Index n = nx + nu;
  ns::QpProblem p;
  // Ridge off the output directions so y_s is not biased toward 0.
  p.H = Mat::Identity(n, n) * kTargetRidge;
  {
    const Mat Cp = model.C.completeOrthogonalDecomposition().pseudoInverse();
    p.H.topLeftCorner(nx, nx) -= kTargetRidge * (Cp * model.C);
  }
  p.H.topLeftCorner(nx, nx) += 2.0 * model.C.transpose() * cfg.Qs * model.C;
  p.f = Vec::Zero(n);
  p.f.head(nx) = -2.0 * model.C.transpose() * cfg.Qs * r;
  p.G = Mat::Zero(cfg.X.rows() + cfg.U.rows(), n);
  p.G.topLeftCorner(cfg.X.rows(), nx) = cfg.X.A();
  p.G.bottomRightCorner(cfg.U.rows(), nu) = cfg.U.A();
  p.h.resize(p.G.rows());
  p.h << cfg.X.b(), cfg.U.b();
  p.E.resize(nx, n);
  p.E << model.A - Mat::Identity(nx, nx), model.B;
  p.e = Vec::Zero(nx);
  auto res = ns::solve_qp(p);
  if (!res.optimal())
  {
    std::ostringstream os;
    os << "steady_target: no admissible equilibrium for r = (" << r(0) << ", " << r(1)
       << ") in mode " << model.mode_id << " (" << ns::to_string(res.status) << ")";
    throw ns::SolverError(os.str());
  }
  SteadyTarget s;
  s.x_s = res.z.head(nx);
  s.u_s = res.z.tail(nu);
  s.y_s = model.C * s.x_s;
  return s;
}

DwellState update_dwell(const DwellState& ds, int sigma_new, const ModeGraph& graph) {
  DwellState out = ds;
  if (sigma_new == ds.sigma) {
    out.delta = std::max(ds.delta - 1, 0);
    return out;
  }
  if (!graph.has_edge(ds.sigma, sigma_new))
    throw DwellError("switch " + std::to_string(ds.sigma) + " -> " + std::to_string(sigma_new) +
                     " is not a graph edge");
  if (ds.delta > 0)
    throw DwellError("dwell violation: switch out of mode " + std::to_string(ds.sigma) +
                     " with " + std::to_string(ds.delta) + " samples remaining");
  out.sigma = sigma_new;
  out.delta = graph.dwell.at(sigma_new);
  out.sigma_next = -1;
  return out;
}

const Polytope& mpc_stage_set(int i, const DwellState& ds, const SwitchCiFamily& family,
                              const Polytope& S_active) {
  const auto& C = family.C.at(ds.sigma);
  if (i >= ds.delta) return C;
  if (static_cast<std::size_t>(ds.sigma) < family.tubes.size() &&
      !family.tubes[ds.sigma].empty())
    return tube_at(family.tubes[ds.sigma], ds.delta - i - 1);
  return S_active;
}

MpcSolution mpc_step(const Vec& x, const DwellState& ds, const SteadyTarget& target,
                     const SwitchCiFamily& family, const Polytope& S_active,
                     const std::vector<ModeModel>& models, const MpcConfig& cfg,
                     const TerminalIngredients& terminal) {
  const ModeModel& md = models.at(ds.sigma);
  const Mat& A = md.A;
  const Mat& B = md.B;
  const Mat& C = md.C;
  const Mat& P = terminal.P.at(ds.sigma);
  const int nx = static_cast<int>(A.rows()), nu = static_cast<int>(B.cols()), N = cfg.N;
  const int nz = N * nu;

  // x(i) = Phi[i] x + Gam[i] z
  std::vector<Mat> Phi(N + 1), Gam(N + 1);
  Phi[0] = Mat::Identity(nx, nx);
  Gam[0] = Mat::Zero(nx, nz);
  for (int i = 1; i <= N; ++i) {
    Phi[i] = A * Phi[i - 1];
    Gam[i] = A * Gam[i - 1];
    Gam[i].middleCols((i - 1) * nu, nu) += B;
  }

  const Mat CQC = C.transpose() * cfg.Q * C;
  ns::QpProblem p;
  p.H = Mat::Zero(nz, nz);
  p.f = Vec::Zero(nz);
  for (int i = 1; i < N; ++i) {
    const Vec e0 = C * Phi[i] * x - target.y_s;
    p.H += Gam[i].transpose() * CQC * Gam[i];
    p.f += Gam[i].transpose() * C.transpose() * cfg.Q * e0;
  }
  {
    const Vec e0 = Phi[N] * x - target.x_s;
    p.H += Gam[N].transpose() * P * Gam[N];
    p.f += Gam[N].transpose() * P * e0;
  }
  for (int i = 0; i < N; ++i) {
    p.H.block(i * nu, i * nu, nu, nu) += cfg.R;
    p.f.segment(i * nu, nu) -= cfg.R * target.u_s;
  }
  p.H = (p.H + p.H.transpose()).eval();  // 1/2 z'Hz convention
  p.f *= 2.0;

  Eigen::Index rows = N * cfg.U.rows();
  for (int i = 0; i < N; ++i) rows += mpc_stage_set(i, ds, family, S_active).rows();
  p.G = Mat::Zero(rows, nz);
  p.h = Vec::Zero(rows);
  Eigen::Index r0 = 0;
  for (int i = 0; i < N; ++i) {
    p.G.block(r0, i * nu, cfg.U.rows(), nu) = cfg.U.A();
    p.h.segment(r0, cfg.U.rows()) = cfg.U.b().array() + kSetSlack;
    r0 += cfg.U.rows();
  }
  for (int i = 0; i < N; ++i) {
    const Polytope& S = mpc_stage_set(i, ds, family, S_active);
    p.G.middleRows(r0, S.rows()) = S.A() * Gam[i + 1];
    p.h.segment(r0, S.rows()) = S.b() - S.A() * Phi[i + 1] * x;
    p.h.segment(r0, S.rows()).array() += kSetSlack;
    r0 += S.rows();
  }
  p.E = Mat(0, nz);
  p.e = Vec(0);

  MpcSolution out;
  auto res = ns::solve_qp(p);
  out.status = res.status;
  if (!res.optimal()) return out;

  out.predicted.resize(N + 1);
  out.inputs.resize(N);
  double J = 0.0;
  for (int i = 0; i <= N; ++i) out.predicted[i] = Phi[i] * x + Gam[i] * res.z;
  for (int i = 0; i < N; ++i) {
    out.inputs[i] = res.z.segment(i * nu, nu);
    const Vec e = C * out.predicted[i] - target.y_s;
    const Vec du = out.inputs[i] - target.u_s;
    J += e.dot(cfg.Q * e) + du.dot(cfg.R * du);
  }
  const Vec eN = out.predicted[N] - target.x_s;
  J += eN.dot(P * eN);
  out.u0 = out.inputs[0];
  out.cost = J;
  return out;
}

InfeasibleError::InfeasibleError(long k_, Trace prefix_)
    : std::runtime_error("MPC infeasible at k = " + std::to_string(k_)),
      k(k_),
      prefix(std::move(prefix_)) {}

void summarize(Trace& trace, long reference_length) {
  TraceSummary s;
  s.reference_length = reference_length;
  int prev_mode = -1;
  for (const auto& rec : trace.records) {
    s.max_eps = std::max(s.max_eps, rec.eps);
    if (rec.k < reference_length) {
      s.max_track_x = std::max(s.max_track_x, std::abs(rec.y(0) - rec.r(0)));
      s.max_track_y = std::max(s.max_track_y, std::abs(rec.y(1) - rec.r(1)));
    }
    if (prev_mode >= 0 && rec.mode != prev_mode) ++s.switches;
    prev_mode = rec.mode;
    if (rec.qp_status != ns::to_string(ns::Status::Optimal)) ++s.infeasible;
  }
  s.settle_steps = std::max<long>(0, static_cast<long>(trace.records.size()) - reference_length);
  s.converged = trace.summary.converged;
  s.final_output_error = trace.summary.final_output_error;
  trace.summary = s;
}

Trace control_loop(const OnlineProblem& pb, const ReferenceStream& ref, const Vec& x0,
                   const LoopOptions& opt) {
  const long Nr = static_cast<long>(ref.points.size());
  if (Nr == 0 || ref.modes.size() != ref.points.size())
    throw std::invalid_argument("control_loop: reference points and modes must align");
  if (pb.family.C.size() != pb.models.size())
    throw std::invalid_argument("control_loop: family does not match the model list");

  Trace tr;
  tr.contour = ref.contour;
  auto plant = opt.plant;
  if (!plant)
    plant = [&](const Vec& x, const Vec& u, int mode) -> Vec {
      return pb.models[mode].A * x + pb.models[mode].B * u;
    };

  DwellState ds;
  ds.sigma = ref.modes[0];
  ds.delta = pb.graph.dwell.at(ds.sigma);

  auto announce = [&](long k) {
    ds.sigma_next = -1;
    for (long j = k; j < Nr; ++j)
      if (ref.modes[j] != ds.sigma) {
        ds.sigma_next = ref.modes[j];
        break;
      }
  };
  announce(0);

  Vec x = x0;
  long settle = 0;
  for (long k = 0;; ++k) {
    const long j = std::min(k, Nr - 1);
    const int m_k = ref.modes[j];
    if (k > 0) {
      const int before = ds.sigma;
      ds = update_dwell(ds, m_k, pb.graph);
      if (ds.sigma != before) announce(j);
    }
    const ModeModel& md = pb.models[ds.sigma];
    const Vec& r = ref.points[j];
    const SteadyTarget tgt = steady_target(r, md, pb.cfg);
    const Vec y = md.C * x;

    if (k >= Nr) {
      const double err = (y - tgt.y_s).norm();
      tr.summary.final_output_error = err;
      if (err <= opt.convergence_tol) {
        tr.summary.converged = true;
        break;
      }
      if (settle >= opt.settle_cap) break;
      ++settle;
    }

    auto sol = mpc_step(x, ds, tgt, pb.family, md.S, pb.models, pb.cfg, pb.terminal);
    TraceRecord rec;
    rec.k = k;
    rec.t = static_cast<double>(k) * ref.Ts;
    rec.r = r;
    rec.x = x;
    rec.y = y;
    rec.mode = ds.sigma;
    rec.delta = ds.delta;
    rec.eps = ref.contour.empty() ? 0.0 : contouring_error(y(0), y(1), ref.contour);
    rec.qp_status = ns::to_string(sol.status);
    if (!sol.feasible()) {
      rec.u = Vec::Zero(md.B.cols());
      rec.cost = std::numeric_limits<double>::quiet_NaN();
      tr.records.push_back(rec);
      summarize(tr, Nr);
      throw InfeasibleError(k, std::move(tr));
    }
    rec.u = sol.u0;
    rec.cost = sol.cost;
    tr.records.push_back(rec);
    x = plant(x, sol.u0, ds.sigma);
  }
  summarize(tr, Nr);
  return tr;
}

}  // namespace cmpc
