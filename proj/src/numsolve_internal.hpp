#pragma once

#include "contour_mpc/numsolve.hpp"

namespace cmpc::numsolve::detail {

/// Fills primal_residual / stationarity_residual / objective of an answer.
void fill_residuals(SolveResult& r, const Mat* H, const Vec& f, const Mat& G,
                    const Vec& h, const Mat& E, const Vec& e);

/// Downgrades an Optimal answer that misses the residual contract and records
/// the answer in the process-wide audit.
void certify(SolveResult& r, bool is_qp);

/// Rows/cols sanity shared by LP and QP entry points.
void check_shapes(Eigen::Index n, const Mat& G, const Vec& h, const Mat& E,
                  const Vec& e);

/// z = z0 + N w parameterizes {z : Ez = e}. Returns false when Ez = e is
/// inconsistent.
bool eliminate_equalities(const Mat& E, const Vec& e, Eigen::Index n, Vec& z0,
                          Mat& N);

}  // namespace cmpc::numsolve::detail
