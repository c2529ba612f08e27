#pragma once

#include <string>
#include <vector>

#include "mfsg/fbsde.hpp"

namespace mfsg {

// Sampled audit of the monotone conditions: on sampled process pairs the
// bilinear form
//   E< (-G^T dD - G^T E[dM|F0], G dPsi), (dX, dY) >
// must be dominated by
//   -b11 E|G dX|^2 - b21 E|G dXhat|^2 - b12 E|G^T dY|^2 - b22 E|G^T dYhat|^2
// and the terminal map must satisfy E<dh, G dX(T)> >= a11 E|G dX(T)|^2.
// Constants are fitted one at a time as infima over samples (conservative);
// a pass is sampled evidence, not a proof over all square-integrable pairs.
struct MonotonicityReport {
  double beta11 = 0.0;  // vs |G dX|^2
  double beta21 = 0.0;  // vs |G dXhat|^2
  double beta12 = 0.0;  // vs |G^T dY|^2
  double beta22 = 0.0;  // vs |G^T dYhat|^2
  double alpha11 = 0.0;

  bool form_holds = true;        // no sampled point with positive form and active denominators
  bool sum_condition = true;     // beta11 + beta12 > 0
  bool alpha_condition = true;   // alpha11 + beta12 > 0
  bool branch_condition = true;  // beta12 > 0 (n1 >= m1) or beta11 > 0 and alpha11 > 0
  bool pass = true;

  int samples = 0;
  // Witness of the worst violation (sample, node, value of the form).
  int witness_sample = -1;
  int witness_node = -1;
  double witness_value = 0.0;
  std::string note;
};

MonotonicityReport check_monotone(const FbsdeProblem& problem, const EnsembleNoise& noise,
                                  const TimeGrid& grid, int samples, const RngSpec& rng,
                                  double sample_scale = 1.0);

}  // namespace mfsg
