#include "contour_mpc/contour.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace cmpc {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

// angle - start wrapped into [0, 2π)
double wrap_from(double angle, double start) {
  double d = std::fmod(angle - start, kTwoPi);
  if (d < 0) d += kTwoPi;
  return d;
}

Polytope halfspaces(const std::vector<Eigen::RowVector2d>& n, const std::vector<double>& b) {
  Mat A(n.size(), 2);
  Vec bb(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    A.row(i) = n[i];
    bb(i) = b[i];
  }
  return Polytope(A, bb);
}

}  // namespace

Line line_through(double x0, double y0, double x1, double y1) {
  Line l;
  l.a = -(y1 - y0);
  l.b = x1 - x0;
  if (l.a == 0.0 && l.b == 0.0) throw std::invalid_argument("line_through: coincident points");
  l.c = -(l.a * x0 + l.b * y0);
  l.bounded = true;
  l.x0 = x0;
  l.y0 = y0;
  l.x1 = x1;
  l.y1 = y1;
  return l;
}

double segment_distance(double x, double y, const ContourSegment& seg) {
  if (seg.is_line()) {
    const Line& l = seg.line();
    if (!l.bounded) return std::abs(l.a * x + l.b * y + l.c) / std::hypot(l.a, l.b);
    const double dx = l.x1 - l.x0, dy = l.y1 - l.y0;
    const double t = std::clamp(((x - l.x0) * dx + (y - l.y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
    return std::hypot(x - l.x0 - t * dx, y - l.y0 - t * dy);
  }
  const Arc& a = seg.arc();
  const double dx = x - a.xo, dy = y - a.yo;
  const double r = std::hypot(dx, dy);
  const double span = a.angle_end - a.angle_start;
  if (span >= kTwoPi || r == 0.0 || wrap_from(std::atan2(dy, dx), a.angle_start) <= span)
    return std::abs(a.R - r);
  const double d0 = std::hypot(x - a.xo - a.R * std::cos(a.angle_start),
                               y - a.yo - a.R * std::sin(a.angle_start));
  const double d1 = std::hypot(x - a.xo - a.R * std::cos(a.angle_end),
                               y - a.yo - a.R * std::sin(a.angle_end));
  return std::min(d0, d1);
}

double contouring_error(double x, double y, const std::vector<ContourSegment>& contour) {
  if (contour.empty()) throw std::invalid_argument("contouring_error: empty contour");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : contour) best = std::min(best, segment_distance(x, y, s));
  return best;
}

Polytope pullback(const Polytope& Y, const Mat& C, const Polytope& X) {
  if (C.rows() != Y.dim() || C.cols() != X.dim())
    throw std::invalid_argument("pullback: output map has wrong shape");
  if (Y.marked_empty()) return Polytope::empty(X.dim());
  return remove_redundant(X.with_rows(Y.A() * C, Y.b()));
}

Polytope linear_feasible_set(const Line& line, double eps, const Polytope& X, const Mat& C) {
  if (line.a == 0.0 && line.b == 0.0)
    throw std::invalid_argument("linear_feasible_set: zero line normal");
  if (!(eps > 0.0)) throw std::invalid_argument("linear_feasible_set: tolerance must be positive");
  const double w = eps * std::hypot(line.a, line.b);
  Mat A(2, 2);
  A << line.a, line.b, -line.a, -line.b;
  Vec b(2);
  b << w - line.c, w + line.c;
  return pullback(Polytope(A, b), C, X);
}

double inner_vertex_radius(double R, double eps, int n_i) {
  return (R - eps) / std::cos(M_PI / n_i);
}

double outer_apothem(double R, double eps, int n_o) {
  return (R + eps) * std::cos(M_PI / n_o);
}

SideCounts polygon_side_counts(double R, double eps, double slack) {
  if (!(eps > 0.0)) throw std::invalid_argument("polygon_side_counts: tolerance must be positive");
  if (!(eps < R))
    throw std::invalid_argument("polygon_side_counts: tolerance must be smaller than the radius");
  SideCounts s;
  const int cap = 1000000;
  for (s.n_i = 3; s.n_i < cap; ++s.n_i)
    if (inner_vertex_radius(R, eps, s.n_i) <= R + slack) break;
  const double lv = inner_vertex_radius(R, eps, s.n_i);
  for (s.n_o = 3; s.n_o < cap; ++s.n_o)
    if (lv <= outer_apothem(R, eps, s.n_o) + slack) break;
  // reference circle must sit between the polygons
  while (!(lv <= R + slack && R <= outer_apothem(R, eps, s.n_o) + slack) && s.n_o < cap) ++s.n_o;
  if (s.n_i >= cap || s.n_o >= cap)
    throw std::runtime_error("polygon_side_counts: no admissible side counts");
  return s;
}

double AnnulusApprox::sector_start(int p) const {
  return phase + (2.0 * p - 3.0) * M_PI / n_i;
}

AnnulusApprox build_annulus(const Arc& arc, double eps, int n_i, int n_o, double phase) {
  if (!(arc.R > 0.0)) throw std::invalid_argument("build_annulus: radius must be positive");
  if (!(eps > 0.0) || !(eps < arc.R))
    throw std::invalid_argument("build_annulus: need 0 < eps < R");
  if (n_i < 3 || n_o < 3) throw std::invalid_argument("build_annulus: side counts must be >= 3");
  AnnulusApprox out;
  out.xo = arc.xo;
  out.yo = arc.yo;
  out.R = arc.R;
  out.eps = eps;
  out.n_i = n_i;
  out.n_o = n_o;
  out.phase = phase;
  out.l_v = inner_vertex_radius(arc.R, eps, n_i);
  out.l_s = outer_apothem(arc.R, eps, n_o);
  const Eigen::RowVector2d c(arc.xo, arc.yo);
  const double ri = arc.R - eps;

  std::vector<Eigen::RowVector2d> on;
  std::vector<double> ob;
  for (int k = 0; k < n_o; ++k) {
    const double psi = phase + (2.0 * k + 1.0) * M_PI / n_o;
    const Eigen::RowVector2d nrm(std::cos(psi), std::sin(psi));
    on.push_back(nrm);
    ob.push_back(out.l_s + nrm.dot(c));
  }
  out.outer = halfspaces(on, ob);

  std::vector<Eigen::RowVector2d> in;
  std::vector<double> ib;
  for (int p = 1; p <= n_i; ++p) {
    const double phi = phase + kTwoPi * (p - 1) / n_i;
    const Eigen::RowVector2d nrm(std::cos(phi), std::sin(phi));
    in.push_back(nrm);
    ib.push_back(ri + nrm.dot(c));
  }
  out.inner = halfspaces(in, ib);

  for (int p = 1; p <= n_i; ++p) {
    const Eigen::RowVector2d nrm = in[p - 1];
    std::vector<Eigen::RowVector2d> rn = on;
    std::vector<double> rb = ob;
    rn.push_back(-nrm);
    rb.push_back(-ib[p - 1]);
    Polytope cap = halfspaces(rn, rb);
    out.caps.push_back(cap);
    const double lo = out.sector_start(p);
    const double hi = lo + kTwoPi / n_i;
    const Eigen::RowVector2d cut_lo(std::sin(lo), -std::cos(lo));
    const Eigen::RowVector2d cut_hi(-std::sin(hi), std::cos(hi));
    rn.push_back(cut_lo);
    rb.push_back(cut_lo.dot(c));
    rn.push_back(cut_hi);
    rb.push_back(cut_hi.dot(c));
    out.sectors.push_back(halfspaces(rn, rb));
  }
  return out;
}

AnnulusApprox circular_feasible_sectors(const Arc& arc, double eps, int n_i, int n_o,
                                        double phase, const Polytope& X, const Mat& C) {
  AnnulusApprox out = build_annulus(arc, eps, n_i, n_o, phase);
  for (int p = 1; p <= n_i; ++p) {
    Polytope S = pullback(out.sectors[p - 1], C, X);
    if (is_empty(S))
      throw std::runtime_error("circular_feasible_sectors: sector " + std::to_string(p) +
                               " is empty after intersection with the state constraints");
    out.state_sectors.push_back(S);
  }
  return out;
}

int active_sector(double x, double y, const AnnulusApprox& approx) {
  Vec pt(2);
  pt << x, y;
  for (std::size_t p = 0; p < approx.sectors.size(); ++p)
    if (contains_point(approx.sectors[p], pt)) return static_cast<int>(p) + 1;
  throw std::out_of_range("active_sector: point lies outside the annulus approximation");
}

void write_annulus(std::ostream& os, const AnnulusApprox& a) {
  os << std::setprecision(17) << "annulus " << a.R << ' ' << a.eps << ' ' << a.n_i << ' '
     << a.n_o << ' ' << a.phase << '\n';
  for (const Polytope& s : a.sectors) write_polytope(os, s);
}

}  // namespace cmpc
