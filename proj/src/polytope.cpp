#include "contour_mpc/polytope.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

namespace cmpc {

using numsolve::LpProblem;
using numsolve::SolveResult;
using numsolve::SolverError;
using numsolve::Status;

namespace {

constexpr double kZeroRow = 1e-10;
constexpr double kFmZero = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

SolveResult lp_max(const Mat& A, const Vec& b, const Vec& c) {
  LpProblem lp;
  lp.c = -c;
  lp.G = A;
  lp.h = b;
  lp.E = Mat(0, c.size());
  lp.e = Vec(0);
  SolveResult r = numsolve::solve_lp(lp);
  if (r.status == Status::NumericalFailure) {
    throw SolverError("polytope: LP numerical failure");
  }
  if (r.optimal()) r.objective = -r.objective;
  return r;
}

// max r s.t. a_i x + r <= b_i, r <= cap. Rows are unit norm, so r is the
// inscribed radius when positive and minus the least worst violation otherwise.
SolveResult chebyshev_lp(const Mat& A, const Vec& b, double cap) {
  const Eigen::Index n = A.cols();
  const bool capped = std::isfinite(cap);
  Mat G(A.rows() + (capped ? 1 : 0), n + 1);
  Vec h(G.rows());
  G.topLeftCorner(A.rows(), n) = A;
  G.block(0, n, A.rows(), 1).setOnes();
  h.head(A.rows()) = b;
  if (capped) {
    G.row(A.rows()).setZero();
    G(A.rows(), n) = 1.0;
    h(A.rows()) = cap;
  }
  Vec c = Vec::Zero(n + 1);
  c(n) = 1.0;
  return lp_max(G, h, c);
}

Mat gather(const Mat& A, const std::vector<Eigen::Index>& idx) {
  Mat out(idx.size(), A.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(k) = A.row(idx[k]);
  return out;
}

Vec gather(const Vec& b, const std::vector<Eigen::Index>& idx) {
  Vec out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out(k) = b(idx[k]);
  return out;
}

// Row j is redundant w.r.t. the rows in `others` iff max a_j x over them (with
// row j relaxed by one unit to keep the LP bounded) stays below b_j.
bool redundant_against(const Mat& A, const Vec& b, Eigen::Index j,
                       const std::vector<Eigen::Index>& others) {
  std::vector<Eigen::Index> idx = others;
  Mat G = gather(A, idx);
  Vec h = gather(b, idx);
  G.conservativeResize(G.rows() + 1, Eigen::NoChange);
  h.conservativeResize(h.size() + 1);
  G.row(G.rows() - 1) = A.row(j);
  h(h.size() - 1) = b(j) + 1.0;
  SolveResult r = lp_max(G, h, A.row(j).transpose());
  if (r.status == Status::Infeasible) return true;
  if (!r.optimal()) throw SolverError("polytope: redundancy LP failed");
  return r.objective <= b(j) + kSetSlack;
}

std::vector<Eigen::Index> dedupe(const Mat& A, const Vec& b) {
  std::map<std::vector<long long>, Eigen::Index> seen;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    std::vector<long long> key(A.cols());
    for (Eigen::Index k = 0; k < A.cols(); ++k)
      key[k] = std::llround(A(i, k) * 1e9);
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, static_cast<Eigen::Index>(keep.size()));
      keep.push_back(i);
    } else if (b(i) < b(keep[it->second])) {
      keep[it->second] = i;
    }
  }
  return keep;
}

}  // namespace

Polytope::Polytope(int dim) : dim_(dim), A_(Mat(0, dim)), b_(Vec(0)) {
  if (dim < 0) throw std::invalid_argument("Polytope: negative dimension");
}

Polytope::Polytope(const Mat& A, const Vec& b) : dim_(static_cast<int>(A.cols())) {
  if (A.rows() != b.size())
    throw std::invalid_argument("Polytope: A and b row counts differ");
  if (!A.allFinite() || !b.allFinite())
    throw std::invalid_argument("Polytope: non-finite data");
  std::vector<Eigen::Index> keep;
  Vec norms(A.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    norms(i) = A.row(i).norm();
    if (norms(i) == 0.0) {
      if (b(i) < 0.0) marked_empty_ = true;
    } else {
      keep.push_back(i);
    }
  }
  if (marked_empty_) {
    *this = Polytope::empty(dim_);
    return;
  }
  A_.resize(keep.size(), dim_);
  b_.resize(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    // rows already unit to rounding are kept bit-exact (text round trips)
    const double s = std::abs(norms(keep[k]) - 1.0) <= 4e-16 ? 1.0 : norms(keep[k]);
    A_.row(k) = A.row(keep[k]) / s;
    b_(k) = b(keep[k]) / s;
  }
}

Polytope Polytope::empty(int dim) {
  Polytope P(dim);
  P.A_ = Mat::Zero(1, dim);
  P.b_ = Vec::Constant(1, -1.0);
  P.marked_empty_ = true;
  return P;
}

Polytope Polytope::box(const Vec& lo, const Vec& hi) {
  if (lo.size() != hi.size()) throw std::invalid_argument("box: bound sizes differ");
  const Eigen::Index n = lo.size();
  Mat A(2 * n, n);
  A << Mat::Identity(n, n), -Mat::Identity(n, n);
  Vec b(2 * n);
  b << hi, -lo;
  return Polytope(A, b);
}

Polytope Polytope::with_rows(const Mat& A, const Vec& b) const {
  if (A.cols() != dim_) throw std::invalid_argument("with_rows: dimension mismatch");
  if (marked_empty_) return *this;
  Mat AA(A_.rows() + A.rows(), dim_);
  AA << A_, A;
  Vec bb(b_.size() + b.size());
  bb << b_, b;
  return Polytope(AA, bb);
}

bool is_empty(const Polytope& P) {
  if (P.marked_empty()) return true;
  if (P.rows() == 0) return false;
  SolveResult r = chebyshev_lp(P.A(), P.b(), 1.0);
  if (!r.optimal()) throw SolverError("is_empty: feasibility LP failed");
  return r.objective < -kSetSlack;
}

bool is_bounded(const Polytope& P) {
  if (P.marked_empty() || P.dim() == 0) return true;
  if (P.rows() == 0) return false;
  for (int k = 0; k < P.dim(); ++k)
    for (double s : {1.0, -1.0}) {
      Vec c = Vec::Zero(P.dim());
      c(k) = s;
      SolveResult r = lp_max(P.A(), P.b(), c);
      if (r.status == Status::Unbounded) return false;
      if (r.status == Status::Infeasible) return true;
    }
  return true;
}

bool contains_point(const Polytope& P, const Vec& x, double slack) {
  if (x.size() != P.dim()) throw std::invalid_argument("contains_point: dimension mismatch");
  if (P.marked_empty()) return false;
  if (P.rows() == 0) return true;
  return (P.A() * x - P.b()).maxCoeff() <= slack;
}

bool contains_set(const Polytope& P, const Polytope& Q) {
  if (P.dim() != Q.dim()) throw std::invalid_argument("contains_set: dimension mismatch");
  if (is_empty(Q)) return true;
  if (P.marked_empty()) return false;
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    if (Q.rows() == 0) return false;
    SolveResult r = lp_max(Q.A(), Q.b(), P.A().row(i).transpose());
    if (r.status == Status::Unbounded) return false;
    if (r.status == Status::Infeasible) return true;
    if (r.objective > P.b()(i) + kSetSlack) return false;
  }
  return true;
}

std::optional<Vec> containment_witness(const Polytope& P, const Polytope& Q) {
  if (P.dim() != Q.dim()) throw std::invalid_argument("containment_witness: dimension mismatch");
  if (is_empty(Q)) return std::nullopt;
  if (P.marked_empty() || Q.rows() == 0) return chebyshev_center(Q).center;
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    SolveResult r = lp_max(Q.A(), Q.b(), P.A().row(i).transpose());
    if (r.status == Status::Unbounded) return chebyshev_center(Q).center;
    if (r.optimal() && r.objective > P.b()(i) + kSetSlack) return r.z;
  }
  return std::nullopt;
}

bool set_equal(const Polytope& P, const Polytope& Q) {
  return contains_set(P, Q) && contains_set(Q, P);
}

Polytope remove_redundant(const Polytope& P) {
  if (P.marked_empty() || P.rows() == 0) return P;
  const std::vector<Eigen::Index> rows = dedupe(P.A(), P.b());
  const Mat A = gather(P.A(), rows);
  const Vec b = gather(P.b(), rows);
  const Eigen::Index m = A.rows();
  const int n = P.dim();

  SolveResult cheb = chebyshev_lp(A, b, 1.0);
  if (!cheb.optimal()) throw SolverError("remove_redundant: interior LP failed");
  const double radius = cheb.z(n);
  if (radius < -kSetSlack) return Polytope::empty(n);

  // 0 unknown, 1 irredundant, 2 redundant
  std::vector<int> state(m, 0);
  auto live_except = [&](Eigen::Index j) {
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < m; ++i)
      if (i != j && state[i] != 2) out.push_back(i);
    return out;
  };

  if (radius <= 1e-7) {
    // Flat set: row-by-row test against everything still alive.
    for (Eigen::Index j = 0; j < m; ++j)
      state[j] = redundant_against(A, b, j, live_except(j)) ? 2 : 1;
  } else {
    // Clarkson: LP over the kept rows, then a ray shot from the interior
    // point identifies a new irredundant facet.
    const Vec c = cheb.z.head(n);
    std::vector<Eigen::Index> kept;
    for (Eigen::Index i = 0; i < m; ++i) {
      int guard = 0;
      while (state[i] == 0) {
        if (++guard > m + 2) {
          state[i] = redundant_against(A, b, i, live_except(i)) ? 2 : 1;
          if (state[i] == 1) kept.push_back(i);
          break;
        }
        Mat G = gather(A, kept);
        Vec h = gather(b, kept);
        G.conservativeResize(G.rows() + 1, Eigen::NoChange);
        h.conservativeResize(h.size() + 1);
        G.row(G.rows() - 1) = A.row(i);
        h(h.size() - 1) = b(i) + 1.0;
        SolveResult r = lp_max(G, h, A.row(i).transpose());
        if (!r.optimal()) throw SolverError("remove_redundant: Clarkson LP failed");
        if (r.objective <= b(i) + kSetSlack) {
          state[i] = 2;
          break;
        }
        const Vec d = r.z - c;
        double tmin = kInf;
        Vec t = Vec::Constant(m, kInf);
        for (Eigen::Index j = 0; j < m; ++j) {
          if (state[j] == 2) continue;
          const double ad = A.row(j).dot(d);
          if (ad > 1e-14) {
            t(j) = (b(j) - A.row(j).dot(c)) / ad;
            tmin = std::min(tmin, t(j));
          }
        }
        std::vector<Eigen::Index> hits;
        for (Eigen::Index j = 0; j < m; ++j)
          if (t(j) <= tmin * (1.0 + 1e-9) + 1e-12 && state[j] == 0) hits.push_back(j);
        if (hits.size() == 1) {
          state[hits[0]] = 1;
          kept.push_back(hits[0]);
        } else {
          for (Eigen::Index j : hits) {
            state[j] = redundant_against(A, b, j, live_except(j)) ? 2 : 1;
            if (state[j] == 1) kept.push_back(j);
          }
        }
      }
    }
  }

  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < m; ++i)
    if (state[i] == 1) out.push_back(i);
  return Polytope(gather(A, out), gather(b, out));
}

Polytope intersect(const Polytope& P, const Polytope& Q) {
  if (P.dim() != Q.dim()) throw std::invalid_argument("intersect: dimension mismatch");
  if (P.marked_empty() || Q.marked_empty()) return Polytope::empty(P.dim());
  return remove_redundant(P.with_rows(Q.A(), Q.b()));
}

Polytope project(const Polytope& P, const std::vector<int>& keep_dims, std::size_t row_cap) {
  const int n = P.dim();
  for (std::size_t k = 0; k < keep_dims.size(); ++k) {
    if (keep_dims[k] < 0 || keep_dims[k] >= n)
      throw std::invalid_argument("project: index out of range");
    if (k > 0 && keep_dims[k] <= keep_dims[k - 1])
      throw std::invalid_argument("project: keep_dims must be strictly increasing");
  }
  const int nk = static_cast<int>(keep_dims.size());
  if (is_empty(P)) return Polytope::empty(nk);

  Polytope cur = remove_redundant(P);
  std::vector<int> cols(n);
  for (int i = 0; i < n; ++i) cols[i] = i;
  auto is_kept = [&](int orig) {
    return std::binary_search(keep_dims.begin(), keep_dims.end(), orig);
  };

  while (static_cast<int>(cols.size()) > nk) {
    const Mat& A = cur.A();
    const Vec& b = cur.b();
    // pick the dropped column with the fewest generated rows
    int best = -1;
    std::size_t best_cost = 0;
    for (int c = 0; c < static_cast<int>(cols.size()); ++c) {
      if (is_kept(cols[c])) continue;
      std::size_t np = 0, nn = 0;
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        if (A(i, c) > kFmZero) ++np;
        else if (A(i, c) < -kFmZero) ++nn;
      }
      const std::size_t cost = np * nn + (A.rows() - np - nn);
      if (best < 0 || cost < best_cost) {
        best = c;
        best_cost = cost;
      }
    }
    if (best_cost > row_cap)
      throw std::runtime_error(
          "project: Fourier-Motzkin step would create " + std::to_string(best_cost) +
          " rows (cap " + std::to_string(row_cap) +
          "); reorder the eliminations or relax the constraint set");

    std::vector<Eigen::Index> pos, neg, zero;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      if (A(i, best) > kFmZero) pos.push_back(i);
      else if (A(i, best) < -kFmZero) neg.push_back(i);
      else zero.push_back(i);
    }
    const Eigen::Index nc = static_cast<Eigen::Index>(cols.size()) - 1;
    Mat An(zero.size() + pos.size() * neg.size(), nc);
    Vec bn(An.rows());
    auto drop_col = [&](const Eigen::RowVectorXd& row) {
      Eigen::RowVectorXd out(nc);
      for (Eigen::Index k = 0, o = 0; k < row.size(); ++k)
        if (k != best) out(o++) = row(k);
      return out;
    };
    Eigen::Index r = 0;
    for (Eigen::Index i : zero) {
      An.row(r) = drop_col(A.row(i));
      bn(r++) = b(i);
    }
    for (Eigen::Index p : pos)
      for (Eigen::Index q : neg) {
        const double sp = 1.0 / A(p, best), sq = -1.0 / A(q, best);
        An.row(r) = drop_col(sp * A.row(p) + sq * A.row(q));
        bn(r++) = sp * b(p) + sq * b(q);
      }
    // scrub rows that cancelled to zero
    std::vector<Eigen::Index> good;
    for (Eigen::Index i = 0; i < An.rows(); ++i) {
      const double nrm = An.row(i).norm();
      if (nrm <= kZeroRow * std::max(1.0, std::abs(bn(i)))) {
        if (bn(i) < -kSetSlack) return Polytope::empty(nk);
        continue;
      }
      for (Eigen::Index k = 0; k < nc; ++k)
        if (std::abs(An(i, k)) <= kFmZero * nrm) An(i, k) = 0.0;
      good.push_back(i);
    }
    cols.erase(cols.begin() + best);
    cur = remove_redundant(Polytope(gather(An, good), gather(bn, good)));
    if (cur.marked_empty()) return Polytope::empty(nk);
  }
  return cur;
}

ChebyshevBall chebyshev_center(const Polytope& P) {
  if (is_empty(P)) throw std::invalid_argument("chebyshev_center: empty polytope");
  if (!is_bounded(P)) throw std::invalid_argument("chebyshev_center: unbounded polytope");
  SolveResult r = chebyshev_lp(P.A(), P.b(), kInf);
  if (!r.optimal()) throw SolverError("chebyshev_center: LP failed");
  ChebyshevBall out;
  out.center = r.z.head(P.dim());
  out.radius = std::max(r.z(P.dim()), 0.0);
  return out;
}

double ray_exit(const Polytope& P, const Vec& x, const Vec& d) {
  double t = kInf;
  for (Eigen::Index j = 0; j < P.rows(); ++j) {
    const double ad = P.A().row(j).dot(d);
    if (ad > 0.0) t = std::min(t, std::max(P.b()(j) - P.A().row(j).dot(x), 0.0) / ad);
  }
  return t;
}

std::vector<Vec> sample_uniform(const Polytope& P, int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample_uniform: negative count");
  if (is_empty(P)) throw std::invalid_argument("sample_uniform: empty polytope");
  if (!is_bounded(P)) throw std::invalid_argument("sample_uniform: unbounded polytope");
  const int d = P.dim();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Vec x = chebyshev_center(P).center;
  auto step = [&] {
    Vec dir(d);
    for (int k = 0; k < d; ++k) dir(k) = nd(rng);
    const double nrm = dir.norm();
    if (nrm == 0.0) return;
    dir /= nrm;
    const double hi = ray_exit(P, x, dir);
    const double lo = -ray_exit(P, x, -dir);
    x += (lo + (hi - lo) * ud(rng)) * dir;
  };
  const int burn = 50 * d + 100;
  const int thin = 2 * d + 1;
  for (int i = 0; i < burn; ++i) step();
  std::vector<Vec> out;
  out.reserve(n);
  for (int s = 0; s < n; ++s) {
    for (int i = 0; i < thin; ++i) step();
    out.push_back(x);
  }
  return out;
}

void write_polytope(std::ostream& os, const Polytope& P) {
  os << P.dim() << ' ' << P.rows() << '\n';
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    for (int k = 0; k < P.dim(); ++k) os << P.A()(i, k) << ' ';
    os << P.b()(i) << '\n';
  }
}

Polytope read_polytope(std::istream& is) {
  long dim = -1, m = -1;
  if (!(is >> dim >> m) || dim < 0 || m < 0)
    throw std::runtime_error("read_polytope: bad header line");
  Mat A(m, dim);
  Vec b(m);
  for (long i = 0; i < m; ++i) {
    for (long k = 0; k < dim; ++k)
      if (!(is >> A(i, k))) throw std::runtime_error("read_polytope: truncated row");
    if (!(is >> b(i))) throw std::runtime_error("read_polytope: truncated row");
  }
  if (m == 0) return Polytope(static_cast<int>(dim));
  return Polytope(A, b);
}

std::string to_text(const Polytope& P) {
  std::ostringstream os;
  write_polytope(os, P);
  return os.str();
}

Polytope from_text(const std::string& s) {
  std::istringstream is(s);
  return read_polytope(is);
}

}  // namespace cmpc
