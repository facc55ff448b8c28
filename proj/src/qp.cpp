#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "numsolve_internal.hpp"

namespace cmpc::numsolve {

namespace {

struct CoreQp {
  Status status = Status::NumericalFailure;
  Vec w;
  Vec lambda;
  int iterations = 0;
};

// Feasible starting point of {G w <= h} from the LP machinery.
bool feasible_start(const Mat& G, const Vec& h, Eigen::Index n, Vec& w,
                    Status& why) {
  LpProblem lp;
  lp.c = Vec::Zero(n);
  lp.G = G;
  lp.h = h;
  lp.E = Mat(0, n);
  lp.e = Vec(0);
  SolveResult r = solve_lp(lp);
  why = r.status;
  if (r.status != Status::Optimal) return false;
  w = r.z;
  return true;
}

// Primal active-set method for a convex (possibly semidefinite) QP
//   min 1/2 w'Hw + f'w  s.t.  G w <= h.
// Steps are computed in the null space of the working set; zero-curvature
// directions with nonzero slope are followed as rays.
CoreQp active_set(const Mat& H, const Vec& f, const Mat& G, const Vec& h) {
  CoreQp out;
  const Eigen::Index n = f.size();
  const Eigen::Index m = G.rows();
  out.lambda = Vec::Zero(m);

  Vec w = Vec::Zero(n);
  bool have_start = false;
  {
    Eigen::LLT<Mat> llt(H);
    if (llt.info() == Eigen::Success) {
      Vec wu = -llt.solve(f);
      if (wu.allFinite() && (m == 0 || (G * wu - h).maxCoeff() <= 0.0)) {
        w = wu;
        have_start = true;
      }
    }
  }
  if (!have_start && m > 0) {
    Status why;
    if (!feasible_start(G, h, n, w, why)) {
      out.status = why == Status::Infeasible ? Status::Infeasible
                                             : Status::NumericalFailure;
      return out;
    }
  }

  std::vector<Eigen::Index> work;
  std::vector<char> in_work(m, 0);
  auto try_add = [&](Eigen::Index j) {
    if (static_cast<Eigen::Index>(work.size()) >= n) return false;
    Mat A(work.size() + 1, n);
    for (std::size_t k = 0; k < work.size(); ++k) A.row(k) = G.row(work[k]);
    A.row(work.size()) = G.row(j);
    Eigen::ColPivHouseholderQR<Mat> qr(A.transpose());
    qr.setThreshold(1e-10);
    if (qr.rank() < static_cast<Eigen::Index>(work.size()) + 1) return false;
    work.push_back(j);
    in_work[j] = 1;
    return true;
  };
  for (Eigen::Index j = 0; j < m; ++j)
    if (std::abs(G.row(j).dot(w) - h(j)) <= 1e-10 * (1.0 + std::abs(h(j))))
      try_add(j);

  // Set after an unblocked full step: w minimizes over the current working
  // set, so the next step is rounding noise.
  bool at_min = false;
  for (int it = 0; it < kIterationCap; ++it) {
    out.iterations = it;
    const Vec g = H * w + f;
    const Eigen::Index k = static_cast<Eigen::Index>(work.size());
    Mat Aw(k, n);
    for (Eigen::Index i = 0; i < k; ++i) Aw.row(i) = G.row(work[i]);

    Mat Z;
    if (k == 0) {
      Z = Mat::Identity(n, n);
    } else {
      Eigen::HouseholderQR<Mat> qr(Aw.transpose());
      Mat Q = qr.householderQ() * Mat::Identity(n, n);
      Z = Q.rightCols(n - k);
    }

    Vec p = Vec::Zero(n);
    bool ray = false;
    if (Z.cols() > 0) {
      const Mat M = Z.transpose() * H * Z;
      const Vec q = Z.transpose() * g;
      Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()));
      const Vec& ev = es.eigenvalues();
      const double emax = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
      Vec step = Vec::Zero(Z.cols());
      for (Eigen::Index i = 0; i < ev.size(); ++i) {
        const Vec vi = es.eigenvectors().col(i);
        const double slope = q.dot(vi);
        if (ev(i) <= 1e-12 * emax) {
          if (std::abs(slope) > 1e-12 * (1.0 + q.norm())) {
            step = -(slope > 0 ? 1.0 : -1.0) * vi;
            ray = true;
            break;
          }
        } else {
          step -= vi * (slope / ev(i));
        }
      }
      p = Z * step;
    }

    const double pscale = 1e-12 * (1.0 + w.norm());
    if (!ray && (at_min || p.norm() <= pscale)) {
      at_min = false;
      if (k == 0) {
        out.status = Status::Optimal;
        break;
      }
      // multipliers: Aw' lambda = -g
      Vec lam = Aw.transpose().colPivHouseholderQr().solve(-g);
      Eigen::Index drop = -1;
      double most = -1e-12;
      for (Eigen::Index i = 0; i < k; ++i) {
        if (lam(i) < most) {
          most = lam(i);
          drop = i;
        }
      }
      if (drop < 0) {
        for (Eigen::Index i = 0; i < k; ++i)
          out.lambda(work[i]) = std::max(lam(i), 0.0);
        out.status = Status::Optimal;
        break;
      }
      in_work[work[drop]] = 0;
      work.erase(work.begin() + drop);
      continue;
    }

    double alpha = ray ? std::numeric_limits<double>::infinity() : 1.0;
    Eigen::Index block = -1;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (in_work[j]) continue;
      const double gp = G.row(j).dot(p);
      if (gp > 1e-14 * (1.0 + p.norm())) {
        const double slack = std::max(h(j) - G.row(j).dot(w), 0.0);
        const double a = slack / gp;
        if (a < alpha) {
          alpha = a;
          block = j;
        }
      }
    }
    if (!std::isfinite(alpha)) {
      out.status = Status::Unbounded;
      return out;
    }
    w += alpha * p;
    at_min = block < 0;
    if (block >= 0 && !try_add(block)) {
      // Blocking row dependent on the working set: cannot enter; treat as
      // degenerate and stop moving along p this round.
      in_work[block] = 0;
    }
  }
  out.w = w;
  if (out.status != Status::Optimal) out.status = Status::NumericalFailure;
  return out;
}

}  // namespace

SolveResult solve_qp(const QpProblem& p) {
  const Eigen::Index n = p.f.size();
  if (p.H.rows() != n || p.H.cols() != n)
    throw std::invalid_argument("QP Hessian has inconsistent shape");
  detail::check_shapes(n, p.G, p.h, p.E, p.e);
  if (!p.H.allFinite() || !p.f.allFinite())
    throw std::invalid_argument("QP cost must be finite");

  SolveResult r;
  Vec z0;
  Mat N;
  if (!detail::eliminate_equalities(p.E, p.e, n, z0, N)) {
    r.status = Status::Infeasible;
    return r;
  }
  const Mat Hs = 0.5 * (p.H + p.H.transpose());
  const Mat Hw = N.transpose() * Hs * N;
  const Vec fw = N.transpose() * (Hs * z0 + p.f);
  const Mat Gw = p.G.rows() > 0 ? Mat(p.G * N) : Mat(0, N.cols());
  const Vec hw = p.G.rows() > 0 ? Vec(p.h - p.G * z0) : Vec(0);

  CoreQp core = active_set(Hw, fw, Gw, hw);
  r.iterations = core.iterations;
  r.status = core.status;
  if (core.status != Status::Optimal) return r;

  r.z = z0 + N * core.w;
  r.lambda = core.lambda;
  r.nu = Vec::Zero(p.E.rows());
  if (p.E.rows() > 0) {
    Vec rhs = -(Hs * r.z + p.f);
    if (p.G.rows() > 0) rhs -= p.G.transpose() * r.lambda;
    r.nu = p.E.transpose().completeOrthogonalDecomposition().solve(rhs);
  }
  detail::fill_residuals(r, &Hs, p.f, p.G, p.h, p.E, p.e);
  detail::certify(r, true);
  return r;
}

}  // namespace cmpc::numsolve
