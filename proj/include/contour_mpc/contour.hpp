#pragma once

// Contour geometry: contouring error, linear feasible slabs and the polygonal
// annulus approximation of a circular path.

#include <iosfwd>
#include <variant>
#include <vector>

#include "contour_mpc/polytope.hpp"

namespace cmpc {

/// a x + b y + c = 0. When `bounded` is set the contour is only the segment
/// from (x0, y0) to (x1, y1).
struct Line {
  double a = 0.0, b = 0.0, c = 0.0;
  bool bounded = false;
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
};

/// Counter-clockwise arc from angle_start to angle_end (radians, end > start).
struct Arc {
  double xo = 0.0, yo = 0.0;
  double R = 0.0;
  double angle_start = 0.0, angle_end = 0.0;
};

struct ContourSegment {
  std::variant<Line, Arc> shape;
  long k_start = 0;
  long k_end = 0;

  bool is_line() const { return std::holds_alternative<Line>(shape); }
  const Line& line() const { return std::get<Line>(shape); }
  const Arc& arc() const { return std::get<Arc>(shape); }
};

/// Segment from (x0, y0) to (x1, y1), carrying its implicit line.
Line line_through(double x0, double y0, double x1, double y1);

double segment_distance(double x, double y, const ContourSegment& seg);
/// Minimum distance from (x, y) to any segment of the contour.
double contouring_error(double x, double y, const std::vector<ContourSegment>& contour);

/// X ∩ {x : |a (Cx)_1 + b (Cx)_2 + c| <= eps * sqrt(a^2 + b^2)}.
Polytope linear_feasible_set(const Line& line, double eps, const Polytope& X, const Mat& C);

/// Pulls an output-space polytope back through y = C x and intersects with X.
Polytope pullback(const Polytope& Y, const Mat& C, const Polytope& X);

struct SideCounts {
  int n_i = 0;
  int n_o = 0;
};

/// Smallest admissible inner/outer polygon side counts. `slack` is the
/// comparison slack for every inequality (strict arithmetic by default).
SideCounts polygon_side_counts(double R, double eps, double slack = 1e-9);

double inner_vertex_radius(double R, double eps, int n_i);  // l_v
double outer_apothem(double R, double eps, int n_o);        // l_s

struct AnnulusApprox {
  double xo = 0.0, yo = 0.0;
  double R = 0.0, eps = 0.0;
  int n_i = 0, n_o = 0;
  double l_v = 0.0, l_s = 0.0;
  double phase = 0.0;
  Polytope inner;                 ///< inner n_i-gon (output space)
  Polytope outer;                 ///< outer n_o-gon (output space)
  std::vector<Polytope> sectors;  ///< output-space sectors, index p-1
  /// Sector p without its radial cuts: inner edge p halfspace ∩ outer polygon.
  std::vector<Polytope> caps;
  /// Sector pull-backs into state space (filled by circular_feasible_sectors).
  std::vector<Polytope> state_sectors;

  /// Angular window [lo, lo + 2π/n_i) of sector p (1-based).
  double sector_start(int p) const;
};

/// Output-space construction. Sector 1 is centered on angle `phase`.
AnnulusApprox build_annulus(const Arc& arc, double eps, int n_i, int n_o, double phase);

/// build_annulus plus state-space sectors X ∩ C^{-1}(sector). Throws
/// std::runtime_error naming the sector when a pull-back is empty.
AnnulusApprox circular_feasible_sectors(const Arc& arc, double eps, int n_i, int n_o,
                                        double phase, const Polytope& X, const Mat& C);

/// Lowest 1-based index whose sector contains the point; throws
/// std::out_of_range when no sector does.
int active_sector(double x, double y, const AnnulusApprox& approx);

/// Header "annulus R eps n_i n_o phase" then the sectors in polytope format.
void write_annulus(std::ostream& os, const AnnulusApprox& a);

}  // namespace cmpc
