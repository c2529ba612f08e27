#pragma once

#include "mfsg/stackelberg.hpp"

namespace mfsg {

// Planar constant-speed vehicle with steered heading; followers minimize
// tracking + effort + mean-field tracking costs, the control center steers
// the population mean. All particles start at the origin at heading zero.
struct UnicycleParams {
  double v = 1.0;      // ground speed (m/s)
  double sigma = 0.0;  // angular-noise coefficient
  double a = 0.5;      // target x (m)
  double b = 0.3;      // target y (m)
  double c0 = 1.0;     // leader tracking weight
  double c1 = 1.0;     // follower tracking weight
  double d0 = 1.0;     // leader control weight
  double d1 = 1.0;     // follower control weight
  double e1 = 0.5;     // follower mean-field tracking weight
  double T = 1.0;      // horizon (s)

  void validate() const;
};

// Game family: state (x, y, theta, w), scalar controls, no leader state.
GameSpec make_unicycle_game(const UnicycleParams& params);

// Closed-form leader coefficients (B1, Phi and partials) for the family.
LeaderCoefficients make_unicycle_leader_coefficients(const UnicycleParams& params);

struct UnicycleFollowerSolution {
  FollowerMPSolution mp;
  UnicycleParams params;
};

UnicycleFollowerSolution solve_unicycle_follower(const ControlProfile& u0,
                                                 const UnicycleParams& params,
                                                 const EnsembleConfig& ens, const RngSpec& rng,
                                                 const TimeGrid& grid, double tol);

// Deterministic follower best response to a given leader control: the reduced
// (x, y, theta, p) two-point system solved by damped forward-backward sweep.
struct UnicycleFollowerResponse {
  SamplePath state;  // (x, y, theta)
  SamplePath p;      // (p11, p12, p13)
  Eigen::RowVectorXd ui;  // follower control -p13 / (2 d1)
  double leader_cost = 0.0;
  double follower_cost = 0.0;
  int sweeps = 0;
  bool converged = false;
};

UnicycleFollowerResponse solve_unicycle_follower_response(const UnicycleParams& params,
                                                          const Eigen::RowVectorXd& u0,
                                                          const TimeGrid& grid, double tol,
                                                          int max_sweeps = 500);

// The deterministic two-point boundary value problem of the control center:
// forward (x, y, theta, phi) from zero initial data, backward (p, K) from zero
// terminal data, with the closed-form control update each sweep. Refuses
// sigma > 0: the stochastic leader problem falls outside the smoothness
// assumptions the reduction relies on.
struct LeaderBvpSolution {
  SamplePath state;  // (x, y, theta)
  SamplePath p;      // (p11, p12, p13)
  SamplePath K;      // (K11, K12, K13)
  SamplePath phi;    // (phi11, phi12, phi13)
  Eigen::RowVectorXd u0;
  int sweeps = 0;
  bool used_shooting = false;
  bool converged = false;
  double leader_cost = 0.0;
};

LeaderBvpSolution solve_unicycle_leader_bvp(const UnicycleParams& params, const TimeGrid& grid,
                                            double tol, int max_sweeps = 2000);

struct AprioriBoundsReport {
  bool x_ok = true, y_ok = true, p11_ok = true, p12_ok = true;
  double worst_margin = 0.0;  // min over nodes of (bound - |value|)
  int witness_node = -1;
  std::string witness_quantity;
  bool pass() const { return x_ok && y_ok && p11_ok && p12_ok; }
};

AprioriBoundsReport check_apriori_bounds(const LeaderBvpSolution& sol,
                                         const UnicycleParams& params);

}  // namespace mfsg
