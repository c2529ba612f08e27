#pragma once

#include <functional>

#include <Eigen/Dense>

#include "mfsg/sample_path.hpp"

namespace mfsg {

// Drift callback for the explicit Euler-Maruyama step. Exogenous inputs
// (other paths, controls) are captured in the closure; k is the node index.
using DriftFn = std::function<Eigen::VectorXd(int k, double t, const Eigen::VectorXd& x)>;

// X_{k+1} = X_k + drift(t_k, X_k) h + diffusion * (W_{k+1} - W_k).
// Pass an empty diffusion (0 columns) and noise = nullptr for deterministic ODEs.
SamplePath euler_forward(const DriftFn& drift, const Eigen::MatrixXd& diffusion,
                         const Eigen::VectorXd& x0, const SamplePath* noise,
                         const TimeGrid& grid);

// Backward generator for the deterministic sweep. y_next is the value at node
// k+1; the forward snapshot at node k is captured in the closure.
using BackwardGenFn = std::function<Eigen::VectorXd(int k, const Eigen::VectorXd& y_next)>;

// Y_k = Y_{k+1} + h * generator(k, Y_{k+1}); martingale integrands are zero.
// The stochastic backend lives with the ensemble solvers in fbsde.hpp.
SamplePath backward_sweep(const BackwardGenFn& generator, const Eigen::VectorXd& terminal,
                          const TimeGrid& grid);

}  // namespace mfsg
