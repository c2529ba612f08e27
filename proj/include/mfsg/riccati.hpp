#pragma once

#include "mfsg/fbsde.hpp"
#include "mfsg/sample_path.hpp"

namespace mfsg {

// Ground truth for the scalar linear-quadratic FBSDE
//   dX = (a X - b Y) dt,   -dY = (q X + a Y) dt,   Y(T) = r_T X(T),
// via Y(t) = r(t) X(t) with r solving r' = b r^2 - 2 a r - q, r(T) = r_T.
// r and X are integrated on a grid refine_factor times finer than the target
// grid (classic RK4) and sampled at the solver nodes.
struct RiccatiLqOracle {
  double a = 0.0;
  double b = 1.0;
  double q = 0.0;
  double r_terminal = 1.0;
  double x0 = 1.0;
  int refine_factor = 10;

  // Returns (X, Y) on the given grid. Throws OracleDomainError on blowup.
  std::pair<SamplePath, SamplePath> paths(const TimeGrid& grid) const;
  // The Riccati function r at the grid nodes.
  Eigen::VectorXd riccati(const TimeGrid& grid) const;
};

// The matching FbsdeProblem (deterministic, n1 = m1 = 1, G = I).
FbsdeProblem make_lq_problem(const RiccatiLqOracle& oracle);

// Monotone conditional mean-field test family in dimension n1 = m1 = dim:
//   Psi = -beta G^T Y - gamma G^T Yhat,  D = beta G X,  M = gamma G Xhat,
//   h = G X(T),
// which satisfies the monotone conditions with constants (beta, gamma, beta,
// gamma, 1) by direct expansion.
FbsdeProblem make_monotone_problem(int dim, double beta, double gamma, double theta0_scale,
                                   double theta1_scale, const Eigen::VectorXd& x0_mean);

// Fully decoupled zero system: Psi = D = M = 0, h = 0.
FbsdeProblem make_zero_problem(int dim_x, int dim_y, const Eigen::MatrixXd& theta0,
                               const Eigen::MatrixXd& theta1, const Eigen::VectorXd& x0);

}  // namespace mfsg
