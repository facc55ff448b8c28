#pragma once

// H-representation convex polyhedra {x : A x <= b}.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "contour_mpc/numsolve.hpp"

namespace cmpc {

/// Membership / containment slack used everywhere (closed-set convention).
inline constexpr double kSetSlack = 1e-9;

/// Default cap on intermediate row counts during Fourier-Motzkin elimination.
inline constexpr std::size_t kDefaultProjectionRowCap = 20000;

class Polytope {
 public:
  Polytope() = default;
  /// Whole space R^dim.
  explicit Polytope(int dim);
  /// Rows are normalized to unit 2-norm. All-zero rows are dropped when
  /// b >= 0 and make the set empty when b < 0.
  Polytope(const Mat& A, const Vec& b);

  static Polytope universe(int dim) { return Polytope(dim); }
  static Polytope empty(int dim);
  static Polytope box(const Vec& lo, const Vec& hi);

  int dim() const { return dim_; }
  Eigen::Index rows() const { return A_.rows(); }
  const Mat& A() const { return A_; }
  const Vec& b() const { return b_; }
  /// True when the empty flag was raised syntactically (zero row with b < 0).
  /// A set can still be empty without this flag; use is_empty() to decide.
  bool marked_empty() const { return marked_empty_; }

  /// Concatenate constraint lists without redundancy removal.
  Polytope with_rows(const Mat& A, const Vec& b) const;

 private:
  int dim_ = 0;
  Mat A_ = Mat(0, 0);
  Vec b_ = Vec(0);
  bool marked_empty_ = false;
};

Polytope intersect(const Polytope& P, const Polytope& Q);
bool is_empty(const Polytope& P);
bool is_bounded(const Polytope& P);
/// Q subset of P.
bool contains_set(const Polytope& P, const Polytope& Q);
bool contains_point(const Polytope& P, const Vec& x, double slack = kSetSlack);
/// Mutual containment.
/// A point of Q outside P (beyond kSetSlack), or nothing when Q ⊆ P.
std::optional<Vec> containment_witness(const Polytope& P, const Polytope& Q);
bool set_equal(const Polytope& P, const Polytope& Q);
Polytope remove_redundant(const Polytope& P);
/// Orthogonal projection onto the listed coordinates (strictly increasing).
Polytope project(const Polytope& P, const std::vector<int>& keep_dims,
                 std::size_t row_cap = kDefaultProjectionRowCap);

struct ChebyshevBall {
  Vec center;
  double radius = 0.0;
};
ChebyshevBall chebyshev_center(const Polytope& P);

std::vector<Vec> sample_uniform(const Polytope& P, int n, std::uint64_t seed);

/// Largest t with x + t d still inside P (infinite when unbounded along d).
double ray_exit(const Polytope& P, const Vec& x, const Vec& d);

void write_polytope(std::ostream& os, const Polytope& P);
/// Reads one block written by write_polytope. Throws std::runtime_error on
/// malformed input.
Polytope read_polytope(std::istream& is);
std::string to_text(const Polytope& P);
Polytope from_text(const std::string& s);

}  // namespace cmpc
