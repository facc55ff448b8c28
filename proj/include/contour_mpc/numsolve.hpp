#pragma once

// Dense small-scale numerical kernels: LP, convex QP, discrete Riccati and
// Lyapunov solvers. Everything here is a pure function of its inputs.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace numsolve {

/// Repo-wide solver tolerances.
inline constexpr double kFeasTol = 1e-8;
inline constexpr double kOptTol = 1e-6;
inline constexpr int kIterationCap = 100000;

enum class Status { Optimal, Infeasible, Unbounded, NumericalFailure };

const char* to_string(Status s);

/// min c'z  s.t.  G z <= h,  E z = e.
struct LpProblem {
  Vec c;
  Mat G;
  Vec h;
  Mat E;
  Vec e;
};

/// min 1/2 z'Hz + f'z  s.t.  G z <= h,  E z = e.
struct QpProblem {
  Mat H;
  Vec f;
  Mat G;
  Vec h;
  Mat E;
  Vec e;
};

struct SolveResult {
  Status status = Status::NumericalFailure;
  Vec z;
  double objective = 0.0;
  /// max(0, max(Gz - h)) combined with max |Ez - e|.
  double primal_residual = 0.0;
  /// infinity norm of the Lagrangian gradient.
  double stationarity_residual = 0.0;
  Vec lambda;  ///< inequality multipliers (>= 0)
  Vec nu;      ///< equality multipliers
  int iterations = 0;

  bool optimal() const { return status == Status::Optimal; }
};

/// Thrown by the matrix-equation solvers and by callers that require an
/// Optimal answer.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

SolveResult solve_lp(const LpProblem& p);
SolveResult solve_qp(const QpProblem& p);

/// Discrete LQR with the convention u = K x, K = -(R + B'PB)^{-1} B'PA.
struct LqrResult {
  Mat K;
  Mat P;
  double riccati_residual = 0.0;
  double closed_loop_radius = 0.0;
};

LqrResult dlqr(const Mat& A, const Mat& B, const Mat& Qx, const Mat& R);

/// Solves P = Acl' P Acl + W. Throws SolverError when rho(Acl) >= 1.
Mat dlyap(const Mat& Acl, const Mat& W);

double spectral_radius(const Mat& A);

/// Residual of the discrete algebraic Riccati equation at P (Frobenius norm).
double riccati_residual(const Mat& A, const Mat& B, const Mat& Qx, const Mat& R,
                        const Mat& P);

/// || P - A'PA - W ||_F
double lyapunov_residual(const Mat& Acl, const Mat& W, const Mat& P);

/// Process-wide audit of every Optimal LP/QP answer handed out. The counters
/// are atomics, so concurrent solves stay safe.
struct ContractStats {
  std::uint64_t lp_optimal = 0;
  std::uint64_t qp_optimal = 0;
  std::uint64_t violations = 0;  ///< answers downgraded for missing the contract
  double worst_primal = 0.0;
  double worst_stationarity = 0.0;
};

ContractStats contract_stats();
void reset_contract_stats();

}  // namespace numsolve
}  // namespace cmpc
