#pragma once

#include <Eigen/Dense>

#include "mfsg/rng.hpp"
#include "mfsg/time_grid.hpp"

namespace mfsg {

// Vector-valued process values on a TimeGrid, one column per node.
class SamplePath {
 public:
  SamplePath() = default;
  SamplePath(const TimeGrid& grid, int dim)
      : grid_(grid), values_(Eigen::MatrixXd::Zero(dim, grid.n_nodes())) {}

  const TimeGrid& grid() const { return grid_; }
  int dim() const { return static_cast<int>(values_.rows()); }
  int n_nodes() const { return static_cast<int>(values_.cols()); }

  Eigen::MatrixXd& data() { return values_; }
  const Eigen::MatrixXd& data() const { return values_; }

  Eigen::VectorXd value(int k) const { return values_.col(k); }
  Eigen::MatrixXd::ColXpr col(int k) { return values_.col(k); }
  Eigen::MatrixXd::ConstColXpr col(int k) const { return values_.col(k); }
  void set_value(int k, const Eigen::VectorXd& v) { values_.col(k) = v; }

  bool all_finite() const { return values_.allFinite(); }

  // Discrete squared L2 norm, h * sum_{k<n_steps} |x_k|^2 (left Riemann).
  double squared_l2() const {
    const double h = grid_.step();
    double acc = 0.0;
    for (int k = 0; k < grid_.n_steps; ++k) acc += values_.col(k).squaredNorm();
    return h * acc;
  }

  double max_abs() const { return values_.cwiseAbs().maxCoeff(); }

 private:
  TimeGrid grid_;
  Eigen::MatrixXd values_;
};

// Brownian path: W(0) = 0, increments i.i.d. N(0, h I).
SamplePath sample_brownian(const TimeGrid& grid, int dim, RngStream& stream);

}  // namespace mfsg
