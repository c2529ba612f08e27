#pragma once

#include <string>

#include "mfsg/errors.hpp"

namespace mfsg {

// Uniform discretization of [0, T]. Nodes are t_k = k*h for k = 0..n_steps,
// except the last node which is pinned to T exactly so refinement studies do
// not pick up endpoint drift.
struct TimeGrid {
  double horizon = 1.0;
  int n_steps = 1;

  static TimeGrid make(double horizon, int n_steps) {
    if (!(horizon > 0.0)) {
      throw ConfigError("TimeGrid: horizon must be positive, got " + std::to_string(horizon));
    }
    if (n_steps < 1) {
      throw ConfigError("TimeGrid: n_steps must be >= 1, got " + std::to_string(n_steps));
    }
    return TimeGrid{horizon, n_steps};
  }

  double step() const { return horizon / static_cast<double>(n_steps); }
  int n_nodes() const { return n_steps + 1; }

  double node(int k) const {
    return k == n_steps ? horizon : static_cast<double>(k) * step();
  }

  bool same_as(const TimeGrid& other) const {
    return horizon == other.horizon && n_steps == other.n_steps;
  }
};

inline TimeGrid make_grid(double horizon, int n_steps) { return TimeGrid::make(horizon, n_steps); }

}  // namespace mfsg
