#pragma once

// Synthetic dual-drive gantry: 5-mode switched plant, line/arc reference
// generation, composite (region x contour box) modes and the end-to-end
// closed-loop experiment.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "contour_mpc/contour.hpp"
#include "contour_mpc/invariance.hpp"
#include "contour_mpc/mpc.hpp"

namespace cmpc {

struct GantryParams {
  double Ts = 0.002;
  double x_travel = 0.125;  ///< |x_m| limit
  std::vector<double> boundaries{-0.075, -0.025, 0.025, 0.075};
  std::vector<double> xbar{-0.1, -0.05, 0.0, 0.05, 0.1};
  std::vector<double> omega{2 * M_PI * 12, 2 * M_PI * 15, 2 * M_PI * 18, 2 * M_PI * 15,
                            2 * M_PI * 12};
  double zeta = 0.05;
  double k1 = 5.0, k2 = 2.5, k3 = 40.0;
  /// Per-channel current bound; every input in U also satisfies it.
  double u_max = 5.0;
  /// U = {|u1| <= u_max, |u2 + u3| <= sum_max, |u3 - u2| <= diff_max}.
  double sum_max = 6.0;
  double diff_max = 4.0;
  double y_travel = 0.15;
  double v_limit = 0.25;  ///< |x_m'|, |y_N'| state bounds
  double theta_max = 0.005;
  double theta_rate_max = 0.5;

  int num_modes() const { return static_cast<int>(xbar.size()); }
  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
};

/// Output map y = (x_m, y_N + xbar theta).
Mat output_map(double xbar);

/// ZOH discretization of the 6-state model of physical mode j (0-based).
ModeModel physical_model(const GantryParams& p, int j);
/// All physical modes with their x_m regions; S = X. Stabilizability and detectability are checked.
std::vector<ModeModel> build_plant(const GantryParams& p);

Polytope state_set(const GantryParams& p);
Polytope input_set(const GantryParams& p);

/// 1-based region index of x_m. A point on a boundary stays in `previous`
/// (1-based) when that region touches it.
int physical_mode(double x_m, const GantryParams& p, int previous = 0);

// Path geometry. Lines must be bounded segments.
double segment_length(const ContourSegment& s);
Vec segment_point(const ContourSegment& s, double arclen);
Vec segment_tangent(const ContourSegment& s, double arclen);

/// (0.08, -0.08) -> (0.08, 0), full CCW circle R = 0.08 about the origin,
/// (0.08, 0) -> (0.08, 0.08).
std::vector<ContourSegment> default_path();

struct ReferenceSample {
  long k = 0;
  double x = 0.0, y = 0.0;
  int segment = 0;
  double s = 0.0;  ///< arc length along the segment
};

struct ReferencePlan {
  Vec start;  ///< path start; the plant starts here at rest
  std::vector<ReferenceSample> samples;
  std::vector<ContourSegment> segments;  ///< k windows filled in
  double Ts = 0.0;
  double v_max = 0.0, a_max = 0.0;
  // Filled by plan_composite_modes.
  std::vector<int> sample_mode;
  std::vector<int> mode_sequence;
  std::vector<int> dwell_bounds;
};

/// Trapezoidal speed profile per tangent-continuous run of segments, at rest
/// at every tangent discontinuity. Samples at t = k Ts, k = 1..ceil(T/Ts) per
/// run. On runs with arcs the tangential acceleration is reduced so the total
/// acceleration stays within a_max. Throws std::invalid_argument when the
/// path is disconnected or a line is unbounded.
ReferencePlan generate_reference(const std::vector<ContourSegment>& path, double v_max,
                                 double a_max, double Ts);

struct CoverOptions {
  double margin = 0.001;   ///< box padding around the covered samples
  double overlap = 0.002;  ///< path length shared by consecutive boxes
  double max_length = 0.0; ///< optional cap on box path length (0 = none)
  int snap = 3;            ///< samples within which a box split moves to a region crossing
};

/// Axis-aligned output box [x0, x1] x [y0, y1] inside the contour tolerance band.
struct OutputBox {
  double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
  int segment = 0;  ///< segment whose band certifies the box
};

/// True when every point of the box is within eps of segment s.
bool box_in_band(const OutputBox& b, const ContourSegment& s, double eps);

struct CompositeMode {
  int physical = 0;  ///< 0-based physical mode
  int box = 0;
  long k_begin = 0, k_end = 0;  ///< samples [k_begin, k_end)
};

struct CompositePlan {
  std::vector<OutputBox> boxes;
  std::vector<CompositeMode> modes;
  std::vector<ModeModel> models;
  ModeGraph graph;
};

/// Covers the reference with boxes, splits box runs at region crossings and
/// builds one composite mode per run: the physical dynamics of the run's
/// region and S = X ∩ {x_m in box, y_N in box shrunk by |xbar| theta_max}.
/// Dwell d = run length - 1 (>= 1). Fills the plan's timeline fields.
CompositePlan plan_composite_modes(ReferencePlan& plan, const GantryParams& p, double eps,
                                   const CoverOptions& opt = {});

struct ExperimentConfig {
  GantryParams plant;
  std::vector<ContourSegment> path = default_path();
  double eps = 0.004;
  double v_max = 0.1;
  double a_max = 1.0;
  int N = 3;
  Mat Q = Eigen::Vector2d(1e5, 1e5).asDiagonal();
  Mat R = Eigen::Vector3d(1e-1, 1e-3, 1e-2).asDiagonal();
  Mat Qs = Mat::Identity(2, 2);
  double state_reg = 1.0;
  CoverOptions cover;
  int max_iter = 200;
  std::size_t row_cap = kDefaultProjectionRowCap;
  int settle_cap = 5000;
  double convergence_tol = 1e-4;
  double side_count_slack = 1e-9;
};

/// Offline stage failure tagged with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what);
  std::string stage;
};

struct OfflineArtifacts {
  ReferencePlan plan;
  CompositePlan composite;
  OnlineProblem online;
  /// Side counts and annulus for the first arc of the path (empty otherwise).
  std::vector<AnnulusApprox> annuli;
};

using LogFn = std::function<void(const std::string&)>;

/// Reference, composite modes and feasible sets only (no invariant sets).
OfflineArtifacts build_problem(const ExperimentConfig& cfg);
/// build_problem plus the switch CI family (with tubes) and terminal ingredients.
OfflineArtifacts build_offline(const ExperimentConfig& cfg, const LogFn& log = {});

ReferenceStream reference_stream(const OfflineArtifacts& art);
/// Rest state at the path start.
Vec initial_state(const OfflineArtifacts& art);

Trace run_online(const OfflineArtifacts& art, const ExperimentConfig& cfg);
/// build_offline + run_online.
Trace run_experiment(const ExperimentConfig& cfg, const LogFn& log = {});

inline constexpr const char* kCsvHeader =
    "k,t,rx,ry,x1,x2,x3,x4,x5,x6,u1,u2,u3,ye_x,ye_y,mode,delta,eps,cost,qp_status";

/// One row per record, 12 significant digits.
void write_csv(std::ostream& os, const Trace& trace);
void write_summary(std::ostream& os, const Trace& trace);

}  // namespace cmpc
