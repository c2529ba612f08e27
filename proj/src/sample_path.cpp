#include "mfsg/sample_path.hpp"

#include <cmath>

#include "mfsg/errors.hpp"

namespace mfsg {

SamplePath sample_brownian(const TimeGrid& grid, int dim, RngStream& stream) {
  if (dim < 1) throw ConfigError("sample_brownian: dim must be >= 1");
  SamplePath path(grid, dim);
  const double sqrt_h = std::sqrt(grid.step());
  Eigen::VectorXd current = Eigen::VectorXd::Zero(dim);
  path.set_value(0, current);
  for (int k = 1; k <= grid.n_steps; ++k) {
    for (int i = 0; i < dim; ++i) current[i] += sqrt_h * stream.gaussian();
    path.set_value(k, current);
  }
  return path;
}

}  // namespace mfsg
