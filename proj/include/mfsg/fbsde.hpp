#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfsg/ensemble.hpp"
#include "mfsg/errors.hpp"

namespace mfsg {

// Fully coupled conditional mean-field FBSDE
//   dX = Psi(t, X, Y, Xhat, Yhat) dt + theta0 dW0 + theta1 dW1
//  -dY = [D(t, X, Y, Xhat, Yhat) + E[M(t, X, Y, Xhat, Yhat) | F0_t]] dt
//        - L0 dW0 - L1 dW1
//   X(0) = chi0,  Y(T) = h(X(T))
// where Xhat, Yhat are conditional means given the common-noise filtration.

struct FbsdeDims {
  int n1 = 1;  // forward dimension
  int m1 = 1;  // backward dimension
  int j0 = 0;  // common noise dimension
  int j = 0;   // idiosyncratic noise dimension
};

struct FbsdeArgs {
  int node = 0;
  int realization = 0;
  int particle = 0;
  double t = 0.0;
  Eigen::VectorXd x, y, x_hat, y_hat;
};

using FbsdeCoefficientFn = std::function<Eigen::VectorXd(const FbsdeArgs&)>;
using FbsdeTerminalFn =
    std::function<Eigen::VectorXd(int realization, int particle, const Eigen::VectorXd& x_terminal)>;
using FbsdeInitialFn = std::function<Eigen::VectorXd(int realization, int particle)>;

struct FbsdeProblem {
  FbsdeDims dims;
  FbsdeCoefficientFn forward_drift;       // Psi -> R^{n1}
  FbsdeCoefficientFn backward_driver;     // D   -> R^{m1}
  FbsdeCoefficientFn conditional_driver;  // M   -> R^{m1}; null means zero
  FbsdeTerminalFn terminal;               // h
  FbsdeInitialFn initial;                 // chi0
  Eigen::MatrixXd theta0;  // n1 x j0
  Eigen::MatrixXd theta1;  // n1 x j
  Eigen::MatrixXd coupling;  // G, m1 x n1, full rank

  static Eigen::MatrixXd default_coupling(int m1, int n1);
  void validate() const;
};

struct FbsdeSolution {
  PathEnsemble x;   // n1
  PathEnsemble y;   // m1
  PathEnsemble l0;  // m1*j0, row-major flattening of the m1 x j0 integrand
  PathEnsemble l1;  // m1*j

  // Diagnostics of the run that produced this solution.
  std::vector<double> iterate_distances;     // successive-iterate Eq.(38)-style values
  std::vector<double> contraction_factors;   // ratios of successive distances
  std::vector<double> stage_ladder;          // continuation lambdas actually used
  int iterations = 0;
  bool converged = false;
  double final_distance = 0.0;
};

struct PicardOptions {
  double damping = 1.0;        // 1 = undamped Picard
  double tol = 1e-10;          // threshold on the Eq.(38)-style distance
  int max_iter = 200;
  int regression_degree = 2;   // basis degree for E[.|F_t] estimation
  bool throw_on_divergence = true;
  // Run one undamped pass after convergence so the returned tuple satisfies
  // the discrete equations exactly. Disable to inspect a raw iterate.
  bool final_refresh = true;
};

// Time-integrated ensemble-mean squared differences of (X, Y, L0, L1) plus the
// terminal X defect. This squared functional is both the convergence metric and
// the quantity whose successive ratios make up the contraction audit.
double fbsde_distance(const FbsdeSolution& a, const FbsdeSolution& b);

// Decoupled seed: Y = 0, L = 0, X = chi0 + theta0 W0 + theta1 W1.
FbsdeSolution decoupled_seed(const FbsdeProblem& problem, const EnsembleNoise& noise,
                             const TimeGrid& grid);

FbsdeSolution random_guess(const FbsdeProblem& problem, const EnsembleNoise& noise,
                           const TimeGrid& grid, const RngSpec& rng, double scale = 1.0);

// Damped Picard iteration: each pass solves the system with the coupling
// terms frozen at the previous iterate (forward with frozen Y, backward given
// the fresh forward states).
FbsdeSolution solve_picard(const FbsdeProblem& problem, const FbsdeSolution* guess,
                           const EnsembleNoise& noise, const TimeGrid& grid,
                           const PicardOptions& options);

struct ContinuationSchedule {
  std::vector<double> lambdas = {0.0, 0.5, 1.0};
  double stage_tol = 1e-10;
  int stage_max_iter = 200;
  double damping = 1.0;
  int regression_degree = 2;
  double beta = 1.0;            // stabilization constant of the parameterized family
  double min_stage_width = 1e-4;
  enum class Branch { kAuto, kForwardStabilized, kBackwardStabilized } branch = Branch::kAuto;

  static ContinuationSchedule uniform(int n_stages, double max_width = 0.5);
  void validate() const;
};

FbsdeSolution solve_continuation(const FbsdeProblem& problem, ContinuationSchedule schedule,
                                 const EnsembleNoise& noise, const TimeGrid& grid);

// Discrete defects of both equations of the system along a candidate solution,
// evaluated with the scheme's own conventions so a converged solve scores ~0.
struct FbsdeResidual {
  Eigen::VectorXd forward_per_node;   // max over particles, per step
  Eigen::VectorXd backward_per_node;  // max over particles, per step
  double forward_max = 0.0;
  double backward_max = 0.0;
  double forward_l2 = 0.0;
  double backward_l2 = 0.0;
};

FbsdeResidual solution_residual(const FbsdeProblem& problem, const FbsdeSolution& solution,
                                const EnsembleNoise& noise, const TimeGrid& grid,
                                int regression_degree = 2);

// Outer iteration of the stage map at lambda0 -> lambda0 + delta: the delta
// increment of the coefficients is frozen at the previous outer iterate while
// the lambda0-level problem is solved to tolerance. Successive outer distances
// shrink proportionally to the stage width on monotone problems, which is the
// measurable form of the contraction estimate.
struct StageMapAudit {
  std::vector<double> distances;
  std::vector<double> factors;
  double fitted_rate = 0.0;  // median factor / delta
};

StageMapAudit audit_stage_contraction(const FbsdeProblem& problem, double lambda0, double delta,
                                      double beta, const EnsembleNoise& noise, const TimeGrid& grid,
                                      const PicardOptions& inner, int outer_iters,
                                      const RngSpec& rng);

}  // namespace mfsg
