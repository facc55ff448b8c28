#pragma once

// Backward reachable sets and switch control-invariant families over a mode
// graph with dwell times.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "contour_mpc/polytope.hpp"

namespace cmpc {

struct ModeModel {
  int mode_id = 0;
  Mat A, B, C;
  /// Scheduling-variable region (1-D polytope over x_m) for physical modes.
  Polytope region;
  /// Feasible set: state constraints ∩ contouring constraints.
  Polytope S;
  std::string label;
};

/// Throws std::invalid_argument when (A, B) is not stabilizable or (A, C) is
/// not detectable (PBH rank tests on the non-Schur eigenvalues).
void check_assumption1(const ModeModel& m);

/// Modes are indices 0..size-1 into the model list.
struct ModeGraph {
  int num_modes = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<int> dwell;  ///< d_m >= 1

  void validate() const;
  std::vector<int> successors(int m) const;
  bool has_edge(int m, int n) const;
};

/// {x ∈ S : ∃u ∈ U, A x + B u ∈ I}
Polytope backward_reachable(const ModeModel& model, const Polytope& S, const Polytope& I,
                            const Polytope& U, std::size_t row_cap = kDefaultProjectionRowCap);

/// i-fold application with S fixed; i = 0 returns I. Stops early once an
/// application leaves the set unchanged (every later one would too).
Polytope backward_reachable_k(const ModeModel& model, const Polytope& S, const Polytope& I,
                              const Polytope& U, int i,
                              std::size_t row_cap = kDefaultProjectionRowCap);

/// B^j(S, I) for j = 0..d. The sequence is cut once it stops changing, so
/// tube[j] for j >= tube.size() equals tube.back().
std::vector<Polytope> reach_chain(const ModeModel& model, const Polytope& S, const Polytope& I,
                                  const Polytope& U, int d,
                                  std::size_t row_cap = kDefaultProjectionRowCap);

inline const Polytope& tube_at(const std::vector<Polytope>& tube, int j) {
  return tube[std::min<std::size_t>(static_cast<std::size_t>(std::max(j, 0)), tube.size() - 1)];
}

struct SwitchCiFamily {
  std::vector<Polytope> C;
  /// tubes[n][j] = B_n^j(S_n, C_n), saturated as in reach_chain.
  std::vector<std::vector<Polytope>> tubes;
  int iterations = 0;
  bool converged = false;
};

struct SwitchCiOptions {
  int max_iter = 200;
  std::size_t row_cap = kDefaultProjectionRowCap;
  std::function<void(const std::string&)> log;
};

/// Thrown when an iterate empties; names the mode and the term responsible.
class EmptyFamilyError : public std::runtime_error {
 public:
  EmptyFamilyError(int mode, const std::string& term);
  int mode;
  std::string term;
};

/// Thrown when the iteration cap is hit before the fixpoint.
class NonConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Switch CI fixpoint. Strongly connected groups of modes are iterated
/// jointly, sinks first, so every edge into a finished group uses its final
/// sets. `iterations` is the largest sweep count over the groups. Throws
/// EmptyFamilyError on an empty iterate and NonConvergenceError when a group
/// needs more than max_iter sweeps.
SwitchCiFamily switch_ci_sets(const std::vector<ModeModel>& models, const ModeGraph& graph,
                              const Polytope& U, const SwitchCiOptions& opt = {});

/// Recomputes family.tubes from family.C (needed after read_family).
void attach_tubes(SwitchCiFamily& family, const std::vector<ModeModel>& models,
                  const ModeGraph& graph, const Polytope& U,
                  std::size_t row_cap = kDefaultProjectionRowCap);

struct Violation {
  std::string what;
  Vec witness;
};

struct VerifyReport {
  std::vector<Violation> violations;
  int samples_checked = 0;
  int inclusions_checked = 0;
  bool ok() const { return violations.empty(); }
};

/// Post-hoc certification: sampled one-step invariance for every C_m and the
/// exact inclusion C_m ⊆ B_n^{d_n}(S_n, C_n) for every edge. Tubes stored in
/// the family are ignored; everything is recomputed from C.
VerifyReport verify_family(const SwitchCiFamily& family, const std::vector<ModeModel>& models,
                           const ModeGraph& graph, const Polytope& U, int n_samples,
                           std::uint64_t seed);

/// Header "family k_modes iterations converged" then one polytope per mode.
void write_family(std::ostream& os, const SwitchCiFamily& f);
SwitchCiFamily read_family(std::istream& is);

}  // namespace cmpc
