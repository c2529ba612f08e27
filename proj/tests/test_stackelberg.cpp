#include <cmath>

#include "doctest.h"
#include "mfsg/unicycle.hpp"

using namespace mfsg;

namespace {

UnicycleParams base_params() {
  UnicycleParams p;
  p.v = 1.0;
  p.sigma = 0.0;
  p.a = 0.5;
  p.b = 0.3;
  p.c0 = 1.0;
  p.c1 = 1.0;
  p.d0 = 1.0;
  p.d1 = 1.0;
  p.e1 = 0.5;
  p.T = 1.0;
  return p;
}

PicardOptions tight_picard() {
  PicardOptions options;
  options.tol = 1e-26;
  options.max_iter = 500;
  options.damping = 0.5;
  return options;
}

double eval_leader_cost(const UnicycleParams& prm, const ControlProfile& u0, const TimeGrid& grid,
                        const RngSpec& rng) {
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  LeaderSystemState state =
      solve_leader_state(u0, spec, lc, EnsembleConfig{}, rng, grid, tight_picard());
  return leader_cost(state, spec, u0, grid);
}

}  // namespace

TEST_CASE("follower fixed point with zero tracking weights gives zero control") {
  UnicycleParams prm = base_params();
  prm.c1 = 0.0;
  prm.e1 = 0.0;
  prm.sigma = 0.4;
  TimeGrid grid = make_grid(1.0, 100);
  ControlProfile u0 = ControlProfile::constant(Vec::Constant(1, 0.3), grid);
  EnsembleConfig ens;
  ens.n_particles = 32;
  FollowerMPSolution sol =
      solve_follower_mp(u0, make_unicycle_game(prm), ens, RngSpec{5}, grid, 1e-12);
  CHECK(sol.converged);
  CHECK(sol.outer_iterations <= 2);  // homogeneous adjoint: p = 0 immediately
  for (int m = 0; m < 32; ++m) {
    CHECK(sol.adjoint.path(0, m).max_abs() == 0.0);
    CHECK(sol.control.path(0, m).max_abs() == 0.0);
  }
}

TEST_CASE("follower control equals the stationarity map of the returned adjoint exactly") {
  UnicycleParams prm = base_params();
  prm.sigma = 0.5;
  TimeGrid grid = make_grid(1.0, 120);
  ControlProfile u0 = ControlProfile::constant(Vec::Constant(1, 0.2), grid);
  GameSpec spec = make_unicycle_game(prm);
  EnsembleConfig ens;
  ens.n_particles = 64;
  // Tolerance sits above the conditioning floor of the chained per-node
  // regressions (~5e-9 on this ensemble).
  FollowerMPSolution sol = solve_follower_mp(u0, spec, ens, RngSpec{7}, grid, 1e-8);
  CHECK(sol.converged);
  double worst = 0.0;
  for (int m = 0; m < 64; ++m) {
    for (int k = 0; k <= grid.n_steps; ++k) {
      const double ui = sol.control.path(0, m).data()(0, k);
      const double p3 = sol.adjoint.path(0, m).data()(2, k);
      worst = std::max(worst, std::abs(ui + p3 / (2.0 * prm.d1)));
    }
  }
  CHECK(worst <= 1e-12);

  SamplePath residual = follower_stationarity_residual(sol, spec, u0);
  CHECK(residual.max_abs() <= 1e-8);

  // Fixed-point property: re-evaluating alpha1 along the converged tuple
  // reproduces the stored control.
  double refit = 0.0;
  for (int m = 0; m < 64; ++m) {
    for (int k = 0; k <= grid.n_steps; ++k) {
      Vec alpha = spec.stationarity.alpha1(grid.node(k), sol.follower_state.path(0, m).value(k),
                                           Vec(0), u0.values.col(k), sol.z_path[0].value(k),
                                           sol.adjoint.path(0, m).value(k));
      refit =
          std::max(refit, (alpha - sol.control.path(0, m).value(k)).cwiseAbs().maxCoeff());
    }
  }
  CHECK(refit <= 1e-10);
}

TEST_CASE("stationarity residual reacts linearly to a control perturbation") {
  UnicycleParams prm = base_params();
  TimeGrid grid = make_grid(1.0, 50);
  ControlProfile u0 = ControlProfile::zero(1, grid);
  GameSpec spec = make_unicycle_game(prm);
  FollowerMPSolution sol = solve_follower_mp(u0, spec, EnsembleConfig{}, RngSpec{3}, grid, 1e-12);
  const int node = 20;
  sol.control.path(0, 0).data()(0, node) += 0.1;
  SamplePath residual = follower_stationarity_residual(sol, spec, u0);
  CHECK(residual.data()(0, node) == doctest::Approx(2.0 * prm.d1 * 0.1).epsilon(1e-9));
}

TEST_CASE("active control-set constraint yields zero projected-gradient residual") {
  UnicycleParams prm = base_params();
  prm.b = -0.4;  // target below the axis: unconstrained steering is negative
  TimeGrid grid = make_grid(1.0, 80);
  GameSpec spec = make_unicycle_game(prm);
  spec.follower_set.project = [](const Vec& u) { return u.cwiseMax(0.0).eval(); };
  ControlProfile u0 = ControlProfile::zero(1, grid);
  FollowerMPSolution sol = solve_follower_mp(u0, spec, EnsembleConfig{}, RngSpec{3}, grid, 1e-12);
  CHECK(sol.converged);
  bool active = false;
  for (int k = 0; k <= grid.n_steps; ++k) {
    if (sol.adjoint.path(0, 0).data()(2, k) > 1e-6) active = true;
    CHECK(sol.control.path(0, 0).data()(0, k) >= 0.0);
  }
  CHECK(active);  // the unconstrained optimum is genuinely negative somewhere
  SamplePath residual = follower_stationarity_residual(sol, spec, u0);
  CHECK(residual.max_abs() <= 1e-10);
}

TEST_CASE("leader state: straight-line ride at zero weights") {
  UnicycleParams prm = base_params();
  prm.c1 = 0.0;
  TimeGrid grid = make_grid(1.0, 100);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  ControlProfile u0 = ControlProfile::zero(1, grid);
  LeaderSystemState state =
      solve_leader_state(u0, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, tight_picard());
  for (int k = 0; k <= grid.n_steps; ++k) {
    CHECK(std::abs(state.x1.path(0, 0).data()(0, k) - prm.v * grid.node(k)) <= 1e-12);
    CHECK(std::abs(state.x1.path(0, 0).data()(1, k)) <= 1e-12);
    CHECK(std::abs(state.x1.path(0, 0).data()(2, k)) <= 1e-12);
  }
  CHECK(state.p1.flat(0).max_abs() <= 1e-12);
}

TEST_CASE("leader state agrees with the reduced follower-response sweep") {
  UnicycleParams prm = base_params();
  TimeGrid grid = make_grid(1.0, 200);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  Eigen::RowVectorXd u0row(grid.n_nodes());
  for (int k = 0; k <= grid.n_steps; ++k) u0row[k] = 0.3 * std::sin(2.0 * grid.node(k));
  ControlProfile u0;
  u0.values = u0row;
  LeaderSystemState state =
      solve_leader_state(u0, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, tight_picard());
  UnicycleFollowerResponse reduced = solve_unicycle_follower_response(prm, u0row, grid, 1e-14);
  double worst = 0.0;
  for (int k = 0; k <= grid.n_steps; ++k) {
    worst =
        std::max(worst, std::abs(state.x1.path(0, 0).data()(0, k) - reduced.state.data()(0, k)));
    worst =
        std::max(worst, std::abs(state.x1.path(0, 0).data()(1, k) - reduced.state.data()(1, k)));
    worst =
        std::max(worst, std::abs(state.x1.path(0, 0).data()(2, k) - reduced.state.data()(2, k)));
    worst = std::max(worst, std::abs(state.p1.path(0, 0).data()(2, k) - reduced.p.data()(2, k)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("variational system: zero direction, linearity, finite differences") {
  UnicycleParams prm = base_params();
  TimeGrid grid = make_grid(1.0, 400);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  ControlProfile u0 = ControlProfile::constant(Vec::Constant(1, 0.2), grid);
  PicardOptions options = tight_picard();
  LeaderSystemState frozen =
      solve_leader_state(u0, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, options);

  ControlProfile zero = ControlProfile::zero(1, grid);
  VariationalSolution trivial = solve_variational(u0, zero, frozen, spec, lc, grid, options);
  CHECK(trivial.x1.flat(0).max_abs() == 0.0);
  CHECK(trivial.p1.flat(0).max_abs() == 0.0);

  ControlProfile v0;
  v0.values = Mat::Zero(1, grid.n_nodes());
  for (int k = 0; k <= grid.n_steps; ++k) v0.values(0, k) = std::cos(3.0 * grid.node(k));
  VariationalSolution lin = solve_variational(u0, v0, frozen, spec, lc, grid, options);
  ControlProfile v0x2;
  v0x2.values = 2.0 * v0.values;
  VariationalSolution lin2 = solve_variational(u0, v0x2, frozen, spec, lc, grid, options);
  double superpos = 0.0;
  for (int k = 0; k <= grid.n_steps; ++k) {
    superpos = std::max(
        superpos,
        (lin2.x1.flat(0).value(k) - 2.0 * lin.x1.flat(0).value(k)).cwiseAbs().maxCoeff());
  }
  CHECK(superpos <= 1e-9);

  // Central differences of the nonlinear solve around u0.
  const double rho = 1e-4;
  ControlProfile up = u0, um = u0;
  up.values += rho * v0.values;
  um.values -= rho * v0.values;
  LeaderSystemState sp =
      solve_leader_state(up, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, options,
                         &frozen.packed);
  LeaderSystemState sm =
      solve_leader_state(um, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, options,
                         &frozen.packed);
  double rel_worst = 0.0;
  double scale = 0.0;
  for (int k = 0; k <= grid.n_steps; ++k) {
    scale = std::max(scale, lin.x1.flat(0).value(k).cwiseAbs().maxCoeff());
  }
  for (int k = 0; k <= grid.n_steps; ++k) {
    Vec fd = (sp.x1.path(0, 0).value(k) - sm.x1.path(0, 0).value(k)) / (2.0 * rho);
    rel_worst = std::max(
        rel_worst, (fd - lin.x1.flat(0).value(k)).cwiseAbs().maxCoeff() / (1e-12 + scale));
  }
  CHECK(rel_worst <= 1e-3);
}

TEST_CASE("leader adjoint: costless leader gives identically zero adjoints") {
  UnicycleParams prm = base_params();
  prm.c0 = 0.0;
  TimeGrid grid = make_grid(1.0, 100);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  ControlProfile u0 = ControlProfile::zero(1, grid);
  LeaderSystemState state =
      solve_leader_state(u0, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, tight_picard());
  LeaderAdjointState adj = solve_leader_adjoint(state, u0, spec, lc, grid, tight_picard(),
                                                AdjointStart::kContinuousPin);
  CHECK(adj.K1.flat(0).max_abs() <= 1e-12);
  CHECK(adj.phi1.flat(0).max_abs() <= 1e-12);
}

TEST_CASE("leader adjoint pins: K(T) = 0 and phi(0) = 0 in pin mode") {
  UnicycleParams prm = base_params();
  TimeGrid grid = make_grid(1.0, 150);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  ControlProfile u0 = ControlProfile::constant(Vec::Constant(1, 0.15), grid);
  LeaderSystemState state =
      solve_leader_state(u0, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, tight_picard());
  LeaderAdjointState adj = solve_leader_adjoint(state, u0, spec, lc, grid, tight_picard(),
                                                AdjointStart::kContinuousPin);
  CHECK(adj.K1.flat(0).value(grid.n_steps).norm() <= 1e-10);
  CHECK(adj.phi1.flat(0).value(0).norm() <= 1e-10);
}

TEST_CASE("duality: adjoint gradient matches finite differences to machine level") {
  // The discrete-exact adjoint realizes the summation-by-parts identity behind
  // the gradient formula; agreement lands far below the 1e-6 requirement.
  UnicycleParams prm = base_params();
  TimeGrid grid = make_grid(1.0, 120);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  ControlProfile u0 = ControlProfile::constant(Vec::Constant(1, 0.2), grid);
  PicardOptions options = tight_picard();
  LeaderSystemState state =
      solve_leader_state(u0, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, options);
  LeaderAdjointState adj =
      solve_leader_adjoint(state, u0, spec, lc, grid, options, AdjointStart::kDiscreteExact);
  Mat grad = leader_gradient(u0, state, adj, spec, lc, grid);

  RngSpec rng{99};
  RngStream dir_stream(rng, stream::kDirection, 0, 0);
  const double rho = 1e-4;
  for (int trial = 0; trial < 3; ++trial) {
    ControlProfile v0 = ControlProfile::zero(1, grid);
    for (int k = 0; k <= grid.n_steps; ++k) v0.values(0, k) = dir_stream.gaussian();
    double pairing = 0.0;
    for (int k = 0; k < grid.n_steps; ++k) {
      pairing += grid.step() * grad.col(k).dot(v0.values.col(k));
    }
    ControlProfile up = u0, um = u0;
    up.values += rho * v0.values;
    um.values -= rho * v0.values;
    const double jp = eval_leader_cost(prm, up, grid, rng);
    const double jm = eval_leader_cost(prm, um, grid, rng);
    const double fd = (jp - jm) / (2.0 * rho);
    CHECK(std::abs(pairing - fd) <= 1e-6 * (1.0 + std::abs(fd)));
  }
}

TEST_CASE("leader gradient closed form for the unicycle") {
  UnicycleParams prm = base_params();
  TimeGrid grid = make_grid(1.0, 100);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  ControlProfile u0 = ControlProfile::constant(Vec::Constant(1, 0.1), grid);
  LeaderSystemState state =
      solve_leader_state(u0, spec, lc, EnsembleConfig{}, RngSpec{1}, grid, tight_picard());
  LeaderAdjointState adj = solve_leader_adjoint(state, u0, spec, lc, grid, tight_picard());
  Mat grad = leader_gradient(u0, state, adj, spec, lc, grid);
  for (int k = 0; k < grid.n_steps; ++k) {
    const double expected =
        2.0 * prm.d0 * u0.values(0, k) + adj.K1.flat(0).data()(2, std::min(k + 1, grid.n_steps));
    CHECK(grad(0, k) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("descent stops immediately when already stationary") {
  UnicycleParams prm = base_params();
  prm.c0 = 0.0;  // no tracking: u0 = 0 is already optimal
  TimeGrid grid = make_grid(1.0, 80);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  DescentOptions options;
  options.inner = tight_picard();
  DescentResult result =
      leader_descent(ControlProfile::zero(1, grid), spec, lc, RngSpec{1}, grid, options);
  CHECK(result.converged);
  CHECK(result.iterations == 0);
  CHECK(result.u0_dagger.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("descent decreases the cost monotonically and lands stationary") {
  UnicycleParams prm = base_params();
  TimeGrid grid = make_grid(1.0, 200);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  DescentOptions options;
  options.inner = tight_picard();
  options.tol = 1e-8;
  DescentResult result =
      leader_descent(ControlProfile::zero(1, grid), spec, lc, RngSpec{1}, grid, options);
  CHECK(result.converged);
  for (std::size_t i = 1; i < result.cost_history.size(); ++i) {
    CHECK(result.cost_history[i] < result.cost_history[i - 1]);
  }
  ConsistencyDiagnostics diag = consistency_residual(result.consistency, spec, lc, grid);
  CHECK(diag.stationarity <= 1e-6);
  CHECK(diag.headline <= 1e-5);
}

TEST_CASE("descent matches a piecewise-constant brute-force search on a tiny instance") {
  UnicycleParams prm = base_params();
  prm.T = 0.2;
  TimeGrid grid = make_grid(prm.T, 40);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  DescentOptions options;
  options.inner = tight_picard();
  options.tol = 1e-9;
  DescentResult result =
      leader_descent(ControlProfile::zero(1, grid), spec, lc, RngSpec{1}, grid, options);
  const double j_descent = leader_cost(result.consistency.state, spec, result.u0_dagger, grid);

  const int intervals = 4, levels = 9;
  const double lo = result.u0_dagger.values.minCoeff() - 0.05;
  const double hi = result.u0_dagger.values.maxCoeff() + 0.05;
  double best = std::numeric_limits<double>::infinity();
  const int nodes_per = grid.n_nodes() / intervals;
  RngSpec rng{1};
  const int combos = static_cast<int>(std::pow(levels, intervals));
  for (int combo = 0; combo < combos; ++combo) {
    int c = combo;
    ControlProfile u = ControlProfile::zero(1, grid);
    for (int i = 0; i < intervals; ++i) {
      const double level = lo + (hi - lo) * (c % levels) / (levels - 1);
      c /= levels;
      const int begin = i * nodes_per;
      const int end = (i == intervals - 1) ? grid.n_nodes() : (i + 1) * nodes_per;
      for (int k = begin; k < end; ++k) u.values(0, k) = level;
    }
    best = std::min(best, eval_leader_cost(prm, u, grid, rng));
  }
  CHECK(j_descent <= best + 1e-8);
}

TEST_CASE("consistency residual: zero-cost game exact, perturbation registers") {
  UnicycleParams prm = base_params();
  prm.c0 = 0.0;
  prm.c1 = 0.0;
  prm.e1 = 0.0;
  TimeGrid grid = make_grid(1.0, 60);
  GameSpec spec = make_unicycle_game(prm);
  LeaderCoefficients lc = make_unicycle_leader_coefficients(prm);
  DescentOptions options;
  options.inner = tight_picard();
  DescentResult result =
      leader_descent(ControlProfile::zero(1, grid), spec, lc, RngSpec{1}, grid, options);
  ConsistencyDiagnostics clean = consistency_residual(result.consistency, spec, lc, grid);
  CHECK(clean.headline <= 1e-14);

  const int node = 30;
  ConsistencyState perturbed = result.consistency;
  perturbed.u0.values(0, node) += 0.1;
  ConsistencyDiagnostics diag = consistency_residual(perturbed, spec, lc, grid);
  CHECK(diag.stationarity_per_node[node] >= 2.0 * prm.d0 * 0.1 - 1e-5);
}
