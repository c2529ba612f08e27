#include "mfsg/sde.hpp"

#include "mfsg/errors.hpp"

namespace mfsg {

SamplePath euler_forward(const DriftFn& drift, const Eigen::MatrixXd& diffusion,
                         const Eigen::VectorXd& x0, const SamplePath* noise,
                         const TimeGrid& grid) {
  const int dim = static_cast<int>(x0.size());
  const bool noisy = diffusion.size() > 0 && noise != nullptr;
  if (noisy && diffusion.rows() != dim) {
    throw ConfigError("euler_forward: diffusion rows must match state dimension");
  }
  if (noisy && diffusion.cols() != noise->dim()) {
    throw ConfigError("euler_forward: diffusion columns must match noise dimension");
  }

  SamplePath path(grid, dim);
  const double h = grid.step();
  Eigen::VectorXd x = x0;
  path.set_value(0, x);
  for (int k = 0; k < grid.n_steps; ++k) {
    Eigen::VectorXd b = drift(k, grid.node(k), x);
    if (!b.allFinite()) {
      throw NumericalBlowupError("euler_forward: drift returned non-finite value", k);
    }
    x += h * b;
    if (noisy) x += diffusion * (noise->col(k + 1) - noise->col(k));
    if (!x.allFinite()) {
      throw NumericalBlowupError("euler_forward: state became non-finite", k + 1);
    }
    path.set_value(k + 1, x);
  }
  return path;
}

SamplePath backward_sweep(const BackwardGenFn& generator, const Eigen::VectorXd& terminal,
                          const TimeGrid& grid) {
  const int dim = static_cast<int>(terminal.size());
  SamplePath path(grid, dim);
  const double h = grid.step();
  Eigen::VectorXd y = terminal;
  path.set_value(grid.n_steps, y);
  for (int k = grid.n_steps - 1; k >= 0; --k) {
    Eigen::VectorXd g = generator(k, y);
    if (!g.allFinite()) {
      throw NumericalBlowupError("backward_sweep: generator returned non-finite value", k);
    }
    y += h * g;
    path.set_value(k, y);
  }
  return path;
}

}  // namespace mfsg
