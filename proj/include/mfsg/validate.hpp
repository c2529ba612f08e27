#pragma once

#include <string>
#include <vector>

#include "mfsg/game_spec.hpp"

namespace mfsg {

// Symmetric sampling box: each argument is drawn uniformly from [-r, r]^dim
// with the per-argument radius below, t uniformly from [0, t_max].
struct AssumptionBox {
  double x0 = 1.0;
  double xi = 1.0;
  double u0 = 1.0;
  double ui = 1.0;
  double z = 1.0;
  double p = 1.0;
  double t_max = 1.0;
};

struct CheckEntry {
  std::string name;
  bool pass = true;
  double worst = 0.0;       // max relative discrepancy or growth ratio
  Vec witness;              // concatenated sample point of the worst case
  std::string detail;
};

// Sampled audit of the standing assumptions: derivative callbacks against
// central finite differences, two-scale growth ratios for drifts and costs,
// stationarity of alpha1, and projection sanity. Violations are report
// entries, never exceptions. The box is recorded because a pass is only
// evidence on the sampled region.
struct AssumptionReport {
  std::vector<CheckEntry> derivative_checks;
  std::vector<CheckEntry> growth_checks;
  CheckEntry stationarity;
  CheckEntry projection;
  AssumptionBox box;
  int samples = 0;
  bool all_pass = true;
};

AssumptionReport validate_assumptions(const GameSpec& spec, const AssumptionBox& box, int samples,
                                      const RngSpec& rng);

}  // namespace mfsg
