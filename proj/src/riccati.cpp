#include <Eigen/Eigenvalues>

#include <cmath>

#include "contour_mpc/numsolve.hpp"

namespace cmpc::numsolve {

double spectral_radius(const Mat& A) {
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double lyapunov_residual(const Mat& Acl, const Mat& W, const Mat& P) {
  return (P - Acl.transpose() * P * Acl - W).norm();
}

double riccati_residual(const Mat& A, const Mat& B, const Mat& Qx, const Mat& R,
                        const Mat& P) {
  const Mat BtP = B.transpose() * P;
  const Mat S = R + BtP * B;
  const Mat res = A.transpose() * P * A - P -
                  (BtP * A).transpose() * S.ldlt().solve(BtP * A) + Qx;
  return res.norm();
}

namespace {

Mat lyap_direct(const Mat& Acl, const Mat& W) {
  const Eigen::Index n = Acl.rows();
  const Mat At = Acl.transpose();
  // vec(A' P A) = (A' kron A') vec(P) for column-major vec.
  Mat K = Mat::Identity(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      K.block(i * n, j * n, n, n) -= At(i, j) * At;
  Eigen::PartialPivLU<Mat> lu(K);
  Vec w = Eigen::Map<const Vec>(W.data(), n * n);
  Vec p = lu.solve(w);
  // two rounds of iterative refinement
  for (int r = 0; r < 2; ++r) {
    Mat P = Eigen::Map<Mat>(p.data(), n, n);
    Mat res = W - (P - At * P * Acl);
    Vec rv = Eigen::Map<Vec>(res.data(), n * n);
    p += lu.solve(rv);
  }
  Mat P = Eigen::Map<Mat>(p.data(), n, n);
  return 0.5 * (P + P.transpose());
}

Mat lyap_doubling(const Mat& Acl, const Mat& W) {
  Mat P = W;
  Mat Ak = Acl;
  for (int it = 0; it < 10000; ++it) {
    Mat next = P + Ak.transpose() * P * Ak;
    Ak = Ak * Ak;
    const double step = (next - P).norm();
    P = 0.5 * (next + next.transpose());
    if (step <= 1e-16 * (1.0 + P.norm()) || Ak.norm() < 1e-300) break;
  }
  return P;
}

}  // namespace

Mat dlyap(const Mat& Acl, const Mat& W) {
  if (Acl.rows() != Acl.cols() || W.rows() != Acl.rows() || W.cols() != W.rows())
    throw std::invalid_argument("dlyap: inconsistent shapes");
  if ((W - W.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + W.norm()))
    throw std::invalid_argument("dlyap: W must be symmetric");
  const double rho = spectral_radius(Acl);
  if (!(rho < 1.0))
    throw SolverError("dlyap: closed-loop matrix is not Schur stable (rho = " +
                      std::to_string(rho) + ")");
  return Acl.rows() <= 20 ? lyap_direct(Acl, W) : lyap_doubling(Acl, W);
}

LqrResult dlqr(const Mat& A, const Mat& B, const Mat& Qx, const Mat& R) {
  const Eigen::Index n = A.rows();
  const Eigen::Index m = B.cols();
  if (A.cols() != n || B.rows() != n || Qx.rows() != n || Qx.cols() != n ||
      R.rows() != m || R.cols() != m)
    throw std::invalid_argument("dlqr: inconsistent shapes");
  Eigen::LLT<Mat> Rllt(0.5 * (R + R.transpose()));
  if (Rllt.info() != Eigen::Success)
    throw std::invalid_argument("dlqr: R must be positive definite");

  // Structure-preserving doubling for the stabilizing DARE solution.
  Mat Ak = A;
  Mat Gk = B * Rllt.solve(B.transpose());
  Mat Hk = 0.5 * (Qx + Qx.transpose());
  const Mat I = Mat::Identity(n, n);
  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    const Mat Wm = I + Gk * Hk;
    Eigen::PartialPivLU<Mat> lu(Wm);
    const Mat V1 = lu.solve(Ak);
    const Mat V2 = lu.solve(Gk);
    const Mat Hnext = Hk + Ak.transpose() * Hk * V1;
    Gk = Gk + Ak * V2 * Ak.transpose();
    Gk = 0.5 * (Gk + Gk.transpose());
    Ak = Ak * V1;
    const double delta = (Hnext - Hk).norm();
    Hk = 0.5 * (Hnext + Hnext.transpose());
    if (!Hk.allFinite()) break;
    if (delta <= 1e-15 * std::max(1.0, Hk.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw SolverError("dlqr: Riccati iteration did not converge (pair not stabilizable?)");

  auto gain = [&](const Mat& P) -> Mat {
    const Mat BtP = B.transpose() * P;
    return -(R + BtP * B).ldlt().solve(BtP * A);
  };
  Mat P = Hk;
  Mat K = gain(P);
  // Newton-Kleinman polishing: P <- dlyap(A + BK, Qx + K'RK).
  for (int r = 0; r < 2; ++r) {
    const Mat Acl = A + B * K;
    if (!(spectral_radius(Acl) < 1.0)) break;
    P = dlyap(Acl, 0.5 * (Qx + Qx.transpose()) + K.transpose() * R * K);
    K = gain(P);
  }

  LqrResult out;
  out.P = P;
  out.K = K;
  out.closed_loop_radius = spectral_radius(A + B * K);
  out.riccati_residual = riccati_residual(A, B, Qx, R, P);
  if (!(out.closed_loop_radius < 1.0 - 1e-9))
    throw SolverError("dlqr: synthesized gain is not stabilizing (pair not stabilizable)");
  return out;
}

}  // namespace cmpc::numsolve
