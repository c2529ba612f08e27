#pragma once

#include <optional>

#include "mfsg/fbsde.hpp"
#include "mfsg/game_spec.hpp"
#include "mfsg/leader_coefficients.hpp"

namespace mfsg {

// Deterministic (F0-trivial) control profile on a grid. Follower controls,
// which are adapted per particle, live in PathEnsembles instead.
struct ControlProfile {
  Mat values;  // m x n_nodes
  enum class Adaptedness { kDeterministic, kPerParticle } tag = Adaptedness::kDeterministic;
  std::function<Vec(const Vec&)> project;

  static ControlProfile zero(int dim, const TimeGrid& grid);
  static ControlProfile constant(const Vec& level, const TimeGrid& grid);

  Vec at(int k) const { return values.col(k); }
  Vec projected(const Vec& u) const { return project ? project(u) : u; }
  double squared_l2(const TimeGrid& grid) const;
  // Max projection defect over nodes; admissible profiles score ~0.
  double projection_residual() const;
};

struct EnsembleConfig {
  int n_common = 1;
  int n_particles = 1;
  int regression_degree = 2;
};

// Per-node least-squares fit of the follower adjoint against the follower
// state, so the decentralized control can be deployed open-loop in finite-N
// simulations.
struct FollowerPolicy {
  int degree = 2;
  int state_dim = 0;
  std::vector<Mat> coeffs;  // per node, basis_size x n

  Vec p_hat(int k, const Vec& state) const;
  bool empty() const { return coeffs.empty(); }
};

struct FollowerMPSolution {
  std::vector<SamplePath> leader_state;  // per realization, dim k (empty paths when k = 0)
  PathEnsemble follower_state;           // x_i
  PathEnsemble adjoint;                  // p_i
  PathEnsemble integrand_l;              // l_i vs W0, dim n*j0
  PathEnsemble integrand_q;              // q_i vs W_i, dim n*j
  PathEnsemble control;                  // realized follower control
  std::vector<SamplePath> z_path;        // conditional-mean path per realization
  FollowerPolicy policy;

  int outer_iterations = 0;
  bool converged = false;
  double final_change = 0.0;
  std::vector<double> change_history;
  double follower_cost = 0.0;  // ensemble average of the follower cost
};

FollowerMPSolution solve_follower_mp(const ControlProfile& u0, const GameSpec& spec,
                                     const EnsembleConfig& ens, const RngSpec& rng,
                                     const TimeGrid& grid, double tol, int max_iter = 200,
                                     double damping = 0.5);

// Per-node stationarity residual: max over particles of the projected-gradient
// norm of the follower Hamiltonian at the realized control.
SamplePath follower_stationarity_residual(const FollowerMPSolution& sol, const GameSpec& spec,
                                          const ControlProfile& u0);

// Leader state system packed into the conditional mean-field solver:
// X = (x0, x1), Y = p1, terminal G1_xi, conditional term over the x1 block.
struct LeaderSystemState {
  PathEnsemble x0;  // dim k (zero-dim allowed)
  PathEnsemble x1;  // dim n
  PathEnsemble p1;  // dim n
  PathEnsemble l1;  // dim n*j0
  PathEnsemble q1;  // dim n*j
  FbsdeSolution packed;
  Mat u0_values;  // control the system was solved at
};

LeaderSystemState solve_leader_state(const ControlProfile& u0, const GameSpec& spec,
                                     const LeaderCoefficients& lc, const EnsembleConfig& ens,
                                     const RngSpec& rng, const TimeGrid& grid,
                                     const PicardOptions& options,
                                     const FbsdeSolution* warm_start = nullptr);

double leader_cost(const LeaderSystemState& state, const GameSpec& spec, const ControlProfile& u0,
                   const TimeGrid& grid);

struct VariationalSolution {
  PathEnsemble x0;  // first-order leader state variation
  PathEnsemble x1;
  PathEnsemble p1;
  PathEnsemble l1, q1;
};

VariationalSolution solve_variational(const ControlProfile& u0, const ControlProfile& v0,
                                      const LeaderSystemState& frozen, const GameSpec& spec,
                                      const LeaderCoefficients& lc, const TimeGrid& grid,
                                      const PicardOptions& options);

// The adjoint's forward variable starts either at the continuous boundary pin
// phi(0) = 0 or at the O(h) discrete-adjoint start that makes the gradient the
// exact derivative of the discrete cost.
enum class AdjointStart { kContinuousPin, kDiscreteExact };

struct LeaderAdjointState {
  PathEnsemble K0;    // dim k
  PathEnsemble K1;    // dim n
  PathEnsemble phi1;  // dim n
  PathEnsemble Q00, Q01, Q10, Q11;
  AdjointStart start = AdjointStart::kDiscreteExact;
};

LeaderAdjointState solve_leader_adjoint(const LeaderSystemState& state, const ControlProfile& u0,
                                        const GameSpec& spec, const LeaderCoefficients& lc,
                                        const TimeGrid& grid, const PicardOptions& options,
                                        AdjointStart start = AdjointStart::kDiscreteExact);

// Conditional mean of dH0/du0 along the solved state/adjoint pair; the K
// factor is taken at node k+1 and phi at node k, the offsets under which the
// deterministic backend differentiates the discrete cost exactly.
Mat leader_gradient(const ControlProfile& u0, const LeaderSystemState& state,
                    const LeaderAdjointState& adjoint, const GameSpec& spec,
                    const LeaderCoefficients& lc, const TimeGrid& grid);

struct ConsistencyState {
  LeaderSystemState state;
  LeaderAdjointState adjoint;
  ControlProfile u0;
};

struct ConsistencyDiagnostics {
  double forward_state = 0.0;    // forward defects of the state system
  double backward_p1 = 0.0;      // backward defect of the follower adjoint block
  double backward_K = 0.0;       // backward defects of (K0, K1)
  double forward_phi = 0.0;      // forward defect of phi1
  double stationarity = 0.0;     // sup-node projected gradient norm
  double headline = 0.0;         // max of the blocks
  Eigen::VectorXd stationarity_per_node;
};

ConsistencyDiagnostics consistency_residual(const ConsistencyState& cs, const GameSpec& spec,
                                            const LeaderCoefficients& lc, const TimeGrid& grid);

struct DescentOptions {
  double tol = 1e-6;          // projected-gradient L2 norm
  int max_iter = 100;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double initial_step = 1.0;
  int max_backtracks = 40;
  // A stalled line search counts as converged when the projected-gradient
  // norm is within stall_factor of tol (cost differences drown in roundoff
  // near stationarity).
  double stall_factor = 10.0;
  // Fixed-point polish after the Armijo phase: u <- proj(u - step * grad)
  // without line search, which reaches stationarity levels the cost-based
  // search cannot resolve. polish_step <= 0 means inverse control curvature.
  int polish_iterations = 12;
  double polish_step = -1.0;
  PicardOptions inner;
  EnsembleConfig ensemble;
};

struct DescentResult {
  ControlProfile u0_dagger;
  ConsistencyState consistency;
  std::vector<double> cost_history;
  std::vector<double> gradient_norms;
  bool converged = false;
  int iterations = 0;
};

DescentResult leader_descent(const ControlProfile& init, const GameSpec& spec,
                             const LeaderCoefficients& lc, const RngSpec& rng,
                             const TimeGrid& grid, const DescentOptions& options);

}  // namespace mfsg
