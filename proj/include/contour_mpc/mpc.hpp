#pragma once

// Online control: steady targets, terminal ingredients, dwell bookkeeping,
// the condensed switched MPC QP and the closed-loop driver.

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "contour_mpc/contour.hpp"
#include "contour_mpc/invariance.hpp"

namespace cmpc {

struct MpcConfig {
  int N = 3;
  Mat Q;   ///< output-error weight (2x2)
  Mat R;   ///< input weight
  Mat Qs;  ///< steady-target weight (2x2)
  /// rho in C'QC + rho I, the state weight used to synthesize K and P. A
  /// mode whose output misses a state would otherwise get a singular P.
  double state_reg = 1.0;
  Polytope U;
  Polytope X;

  /// Throws std::invalid_argument on a bad horizon, weight or dimension.
  void validate(int nx, int nu) const;
};

struct EdgeCertificate {
  int from = 0;
  int to = 0;
  double min_eig = 0.0;
};

struct TerminalIngredients {
  std::vector<Mat> K;  ///< u = u_s + K (x - x_s)
  std::vector<Mat> P;
  std::vector<double> lambda;
  /// One entry per edge plus one self-loop per mode.
  std::vector<EdgeCertificate> certificate;

  double worst_certificate() const;
};

class TerminalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// K_m, P_m from dlqr/dlyap with C'QC + rho I, then per-mode λ-scaling of P_m
/// until every outgoing edge (self-loop included) passes the C'QC inequality.
TerminalIngredients synthesize_terminal(const std::vector<ModeModel>& models,
                                        const ModeGraph& graph, const MpcConfig& cfg);

/// Minimum eigenvalue of P_m - Acl'P_n Acl - C'QC - K'RK for mode m.
double assumption3_min_eig(const ModeModel& m, const Mat& K, const Mat& Pm, const Mat& Pn,
                           const MpcConfig& cfg);

struct SteadyTarget {
  Vec x_s, u_s, y_s;
};

/// Constrained equilibrium whose output is Qs-closest to r. Throws
/// numsolve::SolverError when no equilibrium lies in X x U.
SteadyTarget steady_target(const Vec& r, const ModeModel& model, const MpcConfig& cfg);

struct DwellState {
  int sigma = 0;
  int sigma_next = -1;  ///< -1 when the mode has no announced successor
  int delta = 0;
};

class DwellError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Remaining-dwell recursion. A switch needs delta = 0 and a graph edge.
/// sigma_next is left for the caller to announce.
DwellState update_dwell(const DwellState& ds, int sigma_new, const ModeGraph& graph);

struct MpcSolution {
  Vec u0;
  double cost = 0.0;
  std::vector<Vec> predicted;  ///< x(0|k) .. x(N|k)
  std::vector<Vec> inputs;     ///< u(0|k) .. u(N-1|k)
  numsolve::Status status = numsolve::Status::NumericalFailure;
  bool feasible() const { return status == numsolve::Status::Optimal; }
};

/// Constraint set demanded of x(i+1|k). Before the switch window closes this
/// is the reach tube slice B^{delta-i-1}(S_sigma, C_sigma) when tubes are
/// attached, S_active otherwise; afterwards it is C_sigma.
const Polytope& mpc_stage_set(int i, const DwellState& ds, const SwitchCiFamily& family,
                              const Polytope& S_active);

/// One condensed QP solve over u(0|k)..u(N-1|k). `cost` includes the
/// constant i = 0 stage term.
MpcSolution mpc_step(const Vec& x, const DwellState& ds, const SteadyTarget& target,
                     const SwitchCiFamily& family, const Polytope& S_active,
                     const std::vector<ModeModel>& models, const MpcConfig& cfg,
                     const TerminalIngredients& terminal);

struct TraceRecord {
  long k = 0;
  double t = 0.0;
  Vec r;
  Vec x;
  Vec u;
  Vec y;
  int mode = 0;
  int delta = 0;
  double eps = 0.0;
  double cost = 0.0;
  std::string qp_status;
};

struct TraceSummary {
  double max_eps = 0.0;
  double max_track_x = 0.0;
  double max_track_y = 0.0;
  int switches = 0;
  int infeasible = 0;
  long reference_length = 0;
  long settle_steps = 0;
  bool converged = false;
  double final_output_error = 0.0;
};

struct Trace {
  std::vector<TraceRecord> records;
  TraceSummary summary;
  std::vector<ContourSegment> contour;
};

/// Offline artifacts the loop consumes.
struct OnlineProblem {
  std::vector<ModeModel> models;
  ModeGraph graph;
  SwitchCiFamily family;
  TerminalIngredients terminal;
  MpcConfig cfg;
};

struct ReferenceStream {
  std::vector<Vec> points;  ///< r(k)
  std::vector<int> modes;   ///< timeline mode of each sample
  std::vector<ContourSegment> contour;
  double Ts = 0.002;
};

struct LoopOptions {
  int settle_cap = 5000;
  double convergence_tol = 1e-4;
  /// Plant step; the active mode's own model when empty.
  std::function<Vec(const Vec& x, const Vec& u, int mode)> plant;
};

class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(long k, Trace prefix);
  long k;
  Trace prefix;
};

/// Closed loop over the reference, then a regulation phase on the last
/// point until ||y - y_s|| <= convergence_tol or settle_cap steps.
Trace control_loop(const OnlineProblem& problem, const ReferenceStream& ref, const Vec& x0,
                   const LoopOptions& opt = {});

/// Fills the summary from the records.
void summarize(Trace& trace, long reference_length);

}  // namespace cmpc
