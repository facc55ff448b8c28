#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <vector>

#include "numsolve_internal.hpp"

namespace cmpc::numsolve {

const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal:
      return "Optimal";
    case Status::Infeasible:
      return "Infeasible";
    case Status::Unbounded:
      return "Unbounded";
    case Status::NumericalFailure:
      return "NumericalFailure";
  }
  return "?";
}

namespace {

std::atomic<std::uint64_t> g_lp_optimal{0};
std::atomic<std::uint64_t> g_qp_optimal{0};
std::atomic<std::uint64_t> g_violations{0};
std::mutex g_worst_mutex;
double g_worst_primal = 0.0;
double g_worst_stationarity = 0.0;

constexpr double kPivotTol = 1e-10;
constexpr double kCostTol = 1e-10;
constexpr double kHarrisTol = 1e-11;

// Dense two-phase tableau simplex for  min cost'y  s.t.  A y = b, y >= 0.
// Small row count (the LP's variable count), many columns.
struct StandardFormResult {
  Status status = Status::NumericalFailure;
  Vec y;
  std::vector<Eigen::Index> basis;
  int iterations = 0;
};

class Tableau {
 public:
  Tableau(const Mat& A, const Vec& b) : rows_(A.rows()), cols_(A.cols()) {
    // columns: originals, artificials, rhs
    T_.setZero(rows_ + 1, cols_ + rows_ + 1);
    for (Eigen::Index i = 0; i < rows_; ++i) {
      const double sgn = b(i) < 0 ? -1.0 : 1.0;
      T_.row(i).head(cols_) = sgn * A.row(i);
      T_(i, cols_ + i) = 1.0;
      T_(i, rhs()) = sgn * b(i);
    }
    basis_.resize(rows_);
    for (Eigen::Index i = 0; i < rows_; ++i) basis_[i] = cols_ + i;
    allow_artificial_ = true;
  }

  Eigen::Index rhs() const { return T_.cols() - 1; }

  void set_phase1_objective() {
    T_.row(rows_).setZero();
    for (Eigen::Index i = 0; i < rows_; ++i) {
      T_.row(rows_).head(cols_) -= T_.row(i).head(cols_);
      T_(rows_, rhs()) -= T_(i, rhs());
    }
  }

  void set_phase2_objective(const Vec& cost) {
    allow_artificial_ = false;
    T_.row(rows_).setZero();
    T_.row(rows_).head(cols_) = cost.transpose();
    for (Eigen::Index i = 0; i < rows_; ++i) {
      const Eigen::Index bi = basis_[i];
      const double cb = bi < cols_ ? cost(bi) : 0.0;
      if (cb != 0.0) T_.row(rows_) -= cb * T_.row(i);
    }
  }

  // Minimization value of the current objective row.
  double objective() const { return -T_(rows_, rhs()); }

  // Returns Optimal, Unbounded or NumericalFailure (iteration cap).
  Status iterate(int& iterations) {
    // Dantzig pricing with a Harris ratio test until progress stalls, then
    // Bland's rule with the textbook ratio test (finite, no cycling).
    int stalled = 0;
    bool bland = false;
    double last_obj = objective();
    const Eigen::Index ncand = allow_artificial_ ? cols_ + rows_ : cols_;
    std::vector<char> rejected(ncand, 0);
    while (true) {
      if (iterations >= kIterationCap) return Status::NumericalFailure;
      Eigen::Index enter = -1;
      double best = -kCostTol;
      for (Eigen::Index j = 0; j < ncand; ++j) {
        const double rc = T_(rows_, j);
        if (rc < -kCostTol && !rejected[j]) {
          if (bland) {
            enter = j;
            break;
          }
          if (rc < best) {
            best = rc;
            enter = j;
          }
        }
      }
      if (enter < 0) return Status::Optimal;
      double colmax = 0.0;
      for (Eigen::Index i = 0; i < rows_; ++i) colmax = std::max(colmax, T_(i, enter));
      Eigen::Index leave = -1;
      if (bland) {
        double min_ratio = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < rows_; ++i)
          if (T_(i, enter) > kPivotTol)
            min_ratio = std::min(min_ratio, std::max(T_(i, rhs()), 0.0) / T_(i, enter));
        const double tie = 1e-12 * std::max(1.0, min_ratio);
        for (Eigen::Index i = 0; i < rows_; ++i) {
          const double a = T_(i, enter);
          if (a > kPivotTol && std::max(T_(i, rhs()), 0.0) / a <= min_ratio + tie &&
              (leave < 0 || basis_[i] < basis_[leave]))
            leave = i;
        }
      } else {
        // Harris two-pass ratio test: bound the step with slightly relaxed
        // right-hand sides, then take the largest pivot among the candidates.
        double bound = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < rows_; ++i) {
          const double a = T_(i, enter);
          if (a > kPivotTol)
            bound = std::min(bound, (std::max(T_(i, rhs()), 0.0) + kHarrisTol) / a);
        }
        double best_pivot = 0.0;
        for (Eigen::Index i = 0; i < rows_; ++i) {
          const double a = T_(i, enter);
          if (a > kPivotTol && std::max(T_(i, rhs()), 0.0) / a <= bound && a > best_pivot) {
            best_pivot = a;
            leave = i;
          }
        }
      }
      if (leave < 0) {
        // A column whose only positive entries are below the pivot tolerance
        // is numerical noise, not a recession direction.
        if (colmax > 0.0 || allow_artificial_) {
          rejected[enter] = 1;
          continue;
        }
        return Status::Unbounded;
      }
      pivot(leave, enter);
      std::fill(rejected.begin(), rejected.end(), 0);
      ++iterations;
      const double obj = objective();
      if (obj < last_obj - 1e-12 * (1.0 + std::abs(last_obj))) {
        stalled = 0;
        last_obj = obj;
      } else if (++stalled > 50) {
        bland = true;
      }
    }
  }

  void pivot(Eigen::Index r, Eigen::Index c) {
    T_.row(r) /= T_(r, c);
    for (Eigen::Index i = 0; i <= rows_; ++i) {
      if (i == r) continue;
      const double f = T_(i, c);
      if (f != 0.0) T_.row(i) -= f * T_.row(r);
    }
    basis_[r] = c;
  }

  // After phase 1: pivot zero-level artificials out, dropping rows that are
  // linear combinations of the others.
  void purge_artificials() {
    for (Eigen::Index i = 0; i < rows_;) {
      if (basis_[i] < cols_) {
        ++i;
        continue;
      }
      Eigen::Index col = -1;
      double best = 1e-9;
      for (Eigen::Index j = 0; j < cols_; ++j) {
        if (std::abs(T_(i, j)) > best) {
          best = std::abs(T_(i, j));
          col = j;
        }
      }
      if (col >= 0) {
        pivot(i, col);
        ++i;
      } else {
        drop_row(i);
      }
    }
  }

  Vec solution() const {
    Vec y = Vec::Zero(cols_);
    for (Eigen::Index i = 0; i < rows_; ++i)
      if (basis_[i] < cols_) y(basis_[i]) = std::max(T_(i, rhs()), 0.0);
    return y;
  }

  const std::vector<Eigen::Index>& basis() const { return basis_; }

  // Rebuilds the tableau from scratch for the current basis so rounding
  // accumulated over many pivots does not fake optimality. Returns false
  // when the basis matrix is rank deficient or no longer feasible.
  bool refactor(const Mat& A, const Vec& b, const Vec& cost) {
    const Eigen::Index r = rows_;
    Mat AB(A.rows(), r);
    for (Eigen::Index k = 0; k < r; ++k) {
      if (basis_[k] >= cols_) return false;
      AB.col(k) = A.col(basis_[k]);
    }
    Eigen::ColPivHouseholderQR<Mat> qr(AB);
    if (qr.rank() < r) return false;
    const Mat X = qr.solve(A);
    const Vec xb = qr.solve(b);
    if (xb.minCoeff() < -1e-9 * (1.0 + xb.cwiseAbs().maxCoeff())) return false;
    T_.setZero();
    T_.topLeftCorner(r, cols_) = X;
    T_.col(rhs()).head(r) = xb.cwiseMax(0.0);
    Vec cb(r);
    for (Eigen::Index k = 0; k < r; ++k) cb(k) = cost(basis_[k]);
    T_.row(r).head(cols_) = cost.transpose() - cb.transpose() * X;
    T_(r, rhs()) = -cb.dot(xb.cwiseMax(0.0));
    return true;
  }


 private:
  void drop_row(Eigen::Index r) {
    const Eigen::Index last = rows_ - 1;
    T_.row(r) = T_.row(last);
    T_.row(last) = T_.row(rows_);
    basis_[r] = basis_[last];
    basis_.pop_back();
    T_.conservativeResize(rows_, Eigen::NoChange);
    --rows_;
  }

  Eigen::Index rows_;
  Eigen::Index cols_;
  Mat T_;
  std::vector<Eigen::Index> basis_;
  bool allow_artificial_;
};

StandardFormResult simplex_standard(const Mat& A, const Vec& b, const Vec& cost) {
  StandardFormResult out;
  Tableau tab(A, b);
  tab.set_phase1_objective();
  Status s = tab.iterate(out.iterations);
  if (s != Status::Optimal) {
    out.status = Status::NumericalFailure;
    return out;
  }
  if (tab.objective() > 1e-9 * (1.0 + b.cwiseAbs().sum())) {
    out.status = Status::Infeasible;
    return out;
  }
  tab.purge_artificials();
  tab.set_phase2_objective(cost);
  s = tab.iterate(out.iterations);
  for (int round = 0; s == Status::Optimal && round < 5; ++round) {
    if (!tab.refactor(A, b, cost)) break;
    const int before = out.iterations;
    s = tab.iterate(out.iterations);
    if (out.iterations == before) break;
  }
  out.status = s;
  if (s == Status::Optimal) {
    out.y = tab.solution();
    out.basis = tab.basis();
  }
  return out;
}

struct CoreResult {
  Status status = Status::NumericalFailure;
  Vec w;
  Vec y;
  int iterations = 0;
};

// min c'w  s.t.  G w <= h, w free. Solved through its dual
// min h'y  s.t.  G'y = -c, y >= 0.
CoreResult core_lp_scaled(const Vec& c, const Mat& G, const Vec& h);

// Column equilibration w = D v keeps the dual tableau rows comparable.
CoreResult core_lp(const Vec& c, const Mat& G, const Vec& h) {
  Vec d = Vec::Ones(c.size());
  for (Eigen::Index j = 0; j < c.size(); ++j) {
    const double nrm = G.rows() > 0 ? G.col(j).cwiseAbs().maxCoeff() : 0.0;
    if (nrm > 0.0) d(j) = 1.0 / nrm;
  }
  CoreResult out = core_lp_scaled(d.asDiagonal() * c, G * d.asDiagonal(), h);
  if (out.status == Status::Optimal) out.w = d.asDiagonal() * out.w;
  return out;
}

CoreResult core_lp_scaled(const Vec& c, const Mat& G, const Vec& h) {
  CoreResult out;
  const Eigen::Index n = c.size();
  const Eigen::Index m = G.rows();
  if (n == 0) {
    out.w = Vec::Zero(0);
    out.y = Vec::Zero(m);
    out.status = (m == 0 || h.minCoeff() >= -kFeasTol) ? Status::Optimal
                                                       : Status::Infeasible;
    return out;
  }
  StandardFormResult dual = simplex_standard(G.transpose(), -c, h);
  out.iterations = dual.iterations;
  if (dual.status == Status::Optimal) {
    // Every basic dual column is an active primal row: G_B w = h_B. When G
    // is column-rank deficient the system is underdetermined but G w is
    // the same for every solution.
    out.y = dual.y;
    const auto& basis = dual.basis;
    Mat GB(static_cast<Eigen::Index>(basis.size()), n);
    Vec hB(static_cast<Eigen::Index>(basis.size()));
    for (std::size_t k = 0; k < basis.size(); ++k) {
      GB.row(k) = G.row(basis[k]);
      hB(k) = h(basis[k]);
    }
    // The tableau accumulates rounding on badly scaled rows; re-solve the
    // basic multipliers G_B' y_B = -c directly and keep them when cleaner.
    if (!basis.empty()) {
      const Vec yB = GB.transpose().completeOrthogonalDecomposition().solve(-c);
      Vec y = Vec::Zero(m);
      for (std::size_t k = 0; k < basis.size(); ++k) y(basis[k]) = yB(k);
      const double old_res = (G.transpose() * out.y + c).cwiseAbs().maxCoeff();
      const double new_res = (G.transpose() * y + c).cwiseAbs().maxCoeff();
      if (y.minCoeff() >= -1e-12 && new_res < old_res) out.y = y.cwiseMax(0.0);
    }
    out.w = basis.empty() ? Vec(Vec::Zero(n))
                          : Vec(GB.completeOrthogonalDecomposition().solve(hB));
    out.status = Status::Optimal;
    return out;
  }
  if (dual.status == Status::Unbounded) {
    out.status = Status::Infeasible;
    return out;
  }
  if (dual.status == Status::Infeasible) {
    // Primal is either infeasible or unbounded: decide feasibility with
    // min t  s.t.  G w - t <= h,  -t <= 1.
    Vec c2 = Vec::Zero(n + 1);
    c2(n) = 1.0;
    Mat G2 = Mat::Zero(m + 1, n + 1);
    G2.topLeftCorner(m, n) = G;
    G2.col(n).head(m).setConstant(-1.0);
    G2(m, n) = -1.0;
    Vec h2(m + 1);
    h2.head(m) = h;
    h2(m) = 1.0;
    StandardFormResult feas = simplex_standard(G2.transpose(), -c2, h2);
    out.iterations += feas.iterations;
    if (feas.status != Status::Optimal) {
      out.status = Status::NumericalFailure;
      return out;
    }
    // optimal t equals the dual objective -h2'y
    const double t = -h2.dot(feas.y);
    out.status = t <= kFeasTol ? Status::Unbounded : Status::Infeasible;
    return out;
  }
  out.status = Status::NumericalFailure;
  return out;
}

}  // namespace

namespace detail {

void check_shapes(Eigen::Index n, const Mat& G, const Vec& h, const Mat& E,
                  const Vec& e) {
  if (G.rows() != h.size() || (G.rows() > 0 && G.cols() != n))
    throw std::invalid_argument("inequality system has inconsistent shape");
  if (E.rows() != e.size() || (E.rows() > 0 && E.cols() != n))
    throw std::invalid_argument("equality system has inconsistent shape");
  if (!G.allFinite() || !h.allFinite() || !E.allFinite() || !e.allFinite())
    throw std::invalid_argument("constraint data must be finite");
}

bool eliminate_equalities(const Mat& E, const Vec& e, Eigen::Index n, Vec& z0,
                          Mat& N) {
  if (E.rows() == 0) {
    z0 = Vec::Zero(n);
    N = Mat::Identity(n, n);
    return true;
  }
  Eigen::JacobiSVD<Mat> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec& s = svd.singularValues();
  const double smax = s.size() > 0 ? s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > 1e-12 * std::max(1.0, smax)) ++rank;
  z0 = Vec::Zero(n);
  for (Eigen::Index i = 0; i < rank; ++i)
    z0 += svd.matrixV().col(i) * (svd.matrixU().col(i).dot(e) / s(i));
  N = svd.matrixV().rightCols(n - rank);
  const double res = (E * z0 - e).cwiseAbs().maxCoeff();
  return res <= 1e-9 * (1.0 + e.cwiseAbs().maxCoeff());
}

void fill_residuals(SolveResult& r, const Mat* H, const Vec& f, const Mat& G,
                    const Vec& h, const Mat& E, const Vec& e) {
  const Vec& z = r.z;
  double primal = 0.0;
  if (G.rows() > 0) primal = std::max(primal, (G * z - h).maxCoeff());
  if (E.rows() > 0) primal = std::max(primal, (E * z - e).cwiseAbs().maxCoeff());
  r.primal_residual = std::max(primal, 0.0);
  Vec grad = f;
  if (H) grad += (*H) * z;
  r.objective = f.dot(z) + (H ? 0.5 * z.dot((*H) * z) : 0.0);
  if (G.rows() > 0) grad += G.transpose() * r.lambda;
  if (E.rows() > 0) grad += E.transpose() * r.nu;
  r.stationarity_residual = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
}

void certify(SolveResult& r, bool is_qp) {
  if (r.status != Status::Optimal) return;
  const bool ok = r.primal_residual <= kFeasTol &&
                  r.stationarity_residual <= kOptTol &&
                  (r.lambda.size() == 0 || r.lambda.minCoeff() >= -kOptTol);
  if (!ok) {
    r.status = Status::NumericalFailure;
    g_violations.fetch_add(1, std::memory_order_relaxed);
    return;
  }
  (is_qp ? g_qp_optimal : g_lp_optimal).fetch_add(1, std::memory_order_relaxed);
  std::lock_guard<std::mutex> lock(g_worst_mutex);
  g_worst_primal = std::max(g_worst_primal, r.primal_residual);
  g_worst_stationarity = std::max(g_worst_stationarity, r.stationarity_residual);
}

}  // namespace detail

ContractStats contract_stats() {
  ContractStats s;
  s.lp_optimal = g_lp_optimal.load();
  s.qp_optimal = g_qp_optimal.load();
  s.violations = g_violations.load();
  std::lock_guard<std::mutex> lock(g_worst_mutex);
  s.worst_primal = g_worst_primal;
  s.worst_stationarity = g_worst_stationarity;
  return s;
}

void reset_contract_stats() {
  g_lp_optimal = 0;
  g_qp_optimal = 0;
  g_violations = 0;
  std::lock_guard<std::mutex> lock(g_worst_mutex);
  g_worst_primal = 0.0;
  g_worst_stationarity = 0.0;
}

SolveResult solve_lp(const LpProblem& p) {
  const Eigen::Index n = p.c.size();
  detail::check_shapes(n, p.G, p.h, p.E, p.e);
  if (!p.c.allFinite()) throw std::invalid_argument("LP cost must be finite");

  SolveResult r;
  Vec z0;
  Mat N;
  if (!detail::eliminate_equalities(p.E, p.e, n, z0, N)) {
    r.status = Status::Infeasible;
    return r;
  }
  const Mat Gw = p.G.rows() > 0 ? Mat(p.G * N) : Mat(0, N.cols());
  const Vec hw = p.G.rows() > 0 ? Vec(p.h - p.G * z0) : Vec(0);
  const Vec cw = N.transpose() * p.c;

  CoreResult core = core_lp(cw, Gw, hw);
  r.iterations = core.iterations;
  r.status = core.status;
  if (core.status != Status::Optimal) return r;

  const Vec& w = core.w;
  r.z = z0 + N * w;
  r.lambda = core.y;
  r.nu = Vec::Zero(p.E.rows());
  if (p.E.rows() > 0) {
    const Vec rhs = -(p.c + p.G.transpose() * r.lambda);
    r.nu = p.E.transpose().completeOrthogonalDecomposition().solve(rhs);
  }
  detail::fill_residuals(r, nullptr, p.c, p.G, p.h, p.E, p.e);
  r.objective = p.c.dot(r.z);
  detail::certify(r, false);
  return r;
}

}  // namespace cmpc::numsolve
