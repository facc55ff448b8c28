#include "contour_mpc/invariance.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <complex>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace cmpc {

namespace {

using CMat = Eigen::MatrixXcd;

// PBH: rank [A - λI, B] = n for every eigenvalue with |λ| >= 1.
bool pbh_ok(const Mat& A, const Mat& B, bool columns) {
  const Eigen::Index n = A.rows();
  Eigen::EigenSolver<Mat> es(A, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lam = es.eigenvalues()(i);
    if (std::abs(lam) < 1.0 - 1e-12) continue;
    CMat M;
    const CMat Al = A.cast<std::complex<double>>() - lam * CMat::Identity(n, n);
    if (columns) {
      M.resize(n, n + B.cols());
      M << Al, B.cast<std::complex<double>>();
    } else {
      M.resize(n + B.rows(), n);
      M << Al, B.cast<std::complex<double>>();
    }
    Eigen::JacobiSVD<CMat> svd(M);
    const auto& sv = svd.singularValues();
    const double tol = 1e-9 * std::max(1.0, sv(0));
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < sv.size(); ++k)
      if (sv(k) > tol) ++rank;
    if (rank < n) return false;
  }
  return true;
}

}  // namespace

void check_assumption1(const ModeModel& m) {
  const Eigen::Index n = m.A.rows();
  if (m.A.cols() != n || m.B.rows() != n || m.C.cols() != n)
    throw std::invalid_argument("mode " + std::to_string(m.mode_id) + ": inconsistent shapes");
  if (!pbh_ok(m.A, m.B, true))
    throw std::invalid_argument("mode " + std::to_string(m.mode_id) + ": (A, B) not stabilizable");
  if (!pbh_ok(m.A, m.C, false))
    throw std::invalid_argument("mode " + std::to_string(m.mode_id) + ": (A, C) not detectable");
}

void ModeGraph::validate() const {
  if (static_cast<int>(dwell.size()) != num_modes)
    throw std::invalid_argument("ModeGraph: one dwell bound per mode required");
  for (int d : dwell)
    if (d < 1) throw std::invalid_argument("ModeGraph: dwell bounds must be >= 1");
  for (auto [m, n] : edges)
    if (m < 0 || n < 0 || m >= num_modes || n >= num_modes)
      throw std::invalid_argument("ModeGraph: edge endpoint is not a mode");
}

std::vector<int> ModeGraph::successors(int m) const {
  std::vector<int> out;
  for (auto [a, b] : edges)
    if (a == m && b != m) out.push_back(b);
  return out;
}

bool ModeGraph::has_edge(int m, int n) const {
  return std::find(edges.begin(), edges.end(), std::make_pair(m, n)) != edges.end();
}

Polytope backward_reachable(const ModeModel& model, const Polytope& S, const Polytope& I,
                            const Polytope& U, std::size_t row_cap) {
  const int nx = static_cast<int>(model.A.rows());
  const int nu = static_cast<int>(model.B.cols());
  if (S.dim() != nx || I.dim() != nx || U.dim() != nu)
    throw std::invalid_argument("backward_reachable: dimension mismatch");
  if (is_empty(I) || is_empty(S) || is_empty(U)) return Polytope::empty(nx);
  Mat L(S.rows() + U.rows() + I.rows(), nx + nu);
  Vec h(L.rows());
  L.setZero();
  Eigen::Index r = 0;
  L.block(r, 0, S.rows(), nx) = S.A();
  h.segment(r, S.rows()) = S.b();
  r += S.rows();
  L.block(r, nx, U.rows(), nu) = U.A();
  h.segment(r, U.rows()) = U.b();
  r += U.rows();
  L.block(r, 0, I.rows(), nx) = I.A() * model.A;
  L.block(r, nx, I.rows(), nu) = I.A() * model.B;
  h.segment(r, I.rows()) = I.b();
  std::vector<int> keep(nx);
  for (int i = 0; i < nx; ++i) keep[i] = i;
  return project(Polytope(L, h), keep, row_cap);
}

Polytope backward_reachable_k(const ModeModel& model, const Polytope& S, const Polytope& I,
                              const Polytope& U, int i, std::size_t row_cap) {
  if (i < 0) throw std::invalid_argument("backward_reachable_k: negative step count");
  Polytope cur = I;
  for (int k = 0; k < i; ++k) {
    Polytope next = backward_reachable(model, S, cur, U, row_cap);
    if (set_equal(next, cur)) break;
    cur = std::move(next);
  }
  return cur;
}

std::vector<Polytope> reach_chain(const ModeModel& model, const Polytope& S, const Polytope& I,
                                  const Polytope& U, int d, std::size_t row_cap) {
  std::vector<Polytope> out{I};
  for (int j = 1; j <= d; ++j) {
    Polytope next = backward_reachable(model, S, out.back(), U, row_cap);
    if (set_equal(next, out.back())) break;
    out.push_back(std::move(next));
  }
  return out;
}

EmptyFamilyError::EmptyFamilyError(int mode_, const std::string& term_)
    : std::runtime_error("no switch CI family exists under given dwell times: mode " +
                         std::to_string(mode_) + " emptied by " + term_),
      mode(mode_),
      term(term_) {}

namespace {

// Tarjan; components come out sinks first.
struct SccFinder {
  const ModeGraph& g;
  std::vector<int> index, low, stack;
  std::vector<char> on_stack;
  std::vector<std::vector<int>> comps;
  int counter = 0;

  explicit SccFinder(const ModeGraph& graph)
      : g(graph), index(graph.num_modes, -1), low(graph.num_modes, 0),
        on_stack(graph.num_modes, 0) {
    for (int v = 0; v < g.num_modes; ++v)
      if (index[v] < 0) visit(v);
  }

  void visit(int v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = 1;
    for (int w : g.successors(v)) {
      if (index[w] < 0) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<int> comp;
      int w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = 0;
        comp.push_back(w);
      } while (w != v);
      std::sort(comp.begin(), comp.end());
      comps.push_back(std::move(comp));
    }
  }
};

void check_inputs(const std::vector<ModeModel>& models, const ModeGraph& graph) {
  graph.validate();
  if (static_cast<int>(models.size()) != graph.num_modes)
    throw std::invalid_argument("switch CI: one model per graph mode required");
}

std::string label_of(const ModeModel& m, int idx) {
  return m.label.empty() ? std::to_string(idx) : m.label;
}

}  // namespace

SwitchCiFamily switch_ci_sets(const std::vector<ModeModel>& models, const ModeGraph& graph,
                              const Polytope& U, const SwitchCiOptions& opt) {
  check_inputs(models, graph);
  const int k = graph.num_modes;
  auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  for (int m = 0; m < k; ++m)
    if (is_empty(models[m].S)) throw EmptyFamilyError(m, "the feasible set S_m itself");

  SwitchCiFamily fam;
  fam.C.assign(k, Polytope());
  fam.tubes.assign(k, {});
  std::vector<Polytope> I(k);
  for (int m = 0; m < k; ++m) I[m] = remove_redundant(models[m].S);
  std::vector<char> done(k, 0);

  SccFinder scc(graph);
  for (const auto& comp : scc.comps) {
    int sweeps = 0;
    while (true) {
      if (++sweeps > opt.max_iter)
        throw NonConvergenceError("switch CI: no fixpoint after " + std::to_string(opt.max_iter) +
                                  " iterations (mode group starting at " +
                                  label_of(models[comp.front()], comp.front()) + ")");
      bool changed = false;
      std::vector<Polytope> next;
      for (int m : comp) {
        const ModeModel& mm = models[m];
        Polytope J = intersect(I[m], backward_reachable(mm, mm.S, I[m], U, opt.row_cap));
        if (is_empty(J)) throw EmptyFamilyError(m, "the one-step term B_m(S_m, I_m)");
        for (int n : graph.successors(m)) {
          const int dn = graph.dwell[n];
          const Polytope T =
              done[n] ? tube_at(fam.tubes[n], dn)
                      : backward_reachable_k(models[n], models[n].S, I[n], U, dn, opt.row_cap);
          J = intersect(J, T);
          if (is_empty(J))
            throw EmptyFamilyError(m, "the edge term B_n^{d_n}(S_n, I_n) with n = " +
                                          std::to_string(n));
        }
        if (!contains_set(I[m], J))
          throw std::logic_error("switch CI: iterate grew (monotonicity violated)");
        if (!set_equal(J, I[m])) changed = true;
        next.push_back(std::move(J));
      }
      for (std::size_t i = 0; i < comp.size(); ++i) I[comp[i]] = std::move(next[i]);
      log("group " + label_of(models[comp.front()], comp.front()) + " sweep " +
          std::to_string(sweeps) + (changed ? " changed" : " fixed"));
      if (!changed) break;
    }
    fam.iterations = std::max(fam.iterations, sweeps);
    for (int m : comp) {
      fam.C[m] = I[m];
      fam.tubes[m] = reach_chain(models[m], models[m].S, I[m], U, graph.dwell[m], opt.row_cap);
      done[m] = 1;
    }
  }
  fam.converged = true;
  return fam;
}

void attach_tubes(SwitchCiFamily& family, const std::vector<ModeModel>& models,
                  const ModeGraph& graph, const Polytope& U, std::size_t row_cap) {
  check_inputs(models, graph);
  if (static_cast<int>(family.C.size()) != graph.num_modes)
    throw std::invalid_argument("attach_tubes: family size does not match the graph");
  family.tubes.assign(graph.num_modes, {});
  for (int m = 0; m < graph.num_modes; ++m)
    family.tubes[m] =
        reach_chain(models[m], models[m].S, family.C[m], U, graph.dwell[m], row_cap);
}

VerifyReport verify_family(const SwitchCiFamily& family, const std::vector<ModeModel>& models,
                           const ModeGraph& graph, const Polytope& U, int n_samples,
                           std::uint64_t seed) {
  check_inputs(models, graph);
  if (static_cast<int>(family.C.size()) != graph.num_modes)
    throw std::invalid_argument("verify_family: family size does not match the graph");
  VerifyReport rep;
  const int nx = static_cast<int>(models.front().A.rows());
  for (int m = 0; m < graph.num_modes; ++m) {
    const Polytope& C = family.C[m];
    const ModeModel& mm = models[m];
    const std::string name = "mode " + label_of(mm, m);
    if (is_empty(C)) {
      rep.violations.push_back({name + ": C_m is empty", Vec::Zero(nx)});
      continue;
    }
    ++rep.inclusions_checked;
    if (auto w = containment_witness(mm.S, C))
      rep.violations.push_back({name + ": C_m is not contained in S_m", *w});
    if (n_samples > 0) {
      const auto pts = sample_uniform(C, n_samples, seed + static_cast<std::uint64_t>(m));
      numsolve::QpProblem qp;
      const Eigen::Index nu = mm.B.cols();
      qp.H = Mat::Identity(nu, nu);
      qp.f = Vec::Zero(nu);
      qp.G.resize(U.rows() + C.rows(), nu);
      qp.G << U.A(), C.A() * mm.B;
      qp.E = Mat(0, nu);
      qp.e = Vec(0);
      for (const Vec& x : pts) {
        qp.h.resize(qp.G.rows());
        qp.h << U.b(), C.b() - C.A() * (mm.A * x);
        qp.h.array() += kSetSlack;
        ++rep.samples_checked;
        if (!numsolve::solve_qp(qp).optimal())
          rep.violations.push_back({name + ": no admissible input keeps the sample in C_m", x});
      }
    }
  }
  for (auto [m, n] : graph.edges) {
    if (m == n) continue;
    const Polytope T = backward_reachable_k(models[n], models[n].S, family.C[n], U,
                                            graph.dwell[n]);
    ++rep.inclusions_checked;
    if (auto w = containment_witness(T, family.C[m]))
      rep.violations.push_back({"edge " + label_of(models[m], m) + " -> " +
                                    label_of(models[n], n) +
                                    ": C_m is not contained in B_n^{d_n}(S_n, C_n)",
                                *w});
  }
  return rep;
}

void write_family(std::ostream& os, const SwitchCiFamily& f) {
  os << "family " << f.C.size() << ' ' << f.iterations << ' ' << (f.converged ? 1 : 0) << '\n';
  for (const Polytope& P : f.C) write_polytope(os, P);
}

SwitchCiFamily read_family(std::istream& is) {
  std::string tag;
  long k = -1;
  int conv = -1;
  SwitchCiFamily f;
  if (!(is >> tag >> k >> f.iterations >> conv) || tag != "family" || k < 0 ||
      (conv != 0 && conv != 1))
    throw std::runtime_error("read_family: malformed header");
  f.converged = conv == 1;
  for (long i = 0; i < k; ++i) f.C.push_back(read_polytope(is));
  return f;
}

}  // namespace cmpc
