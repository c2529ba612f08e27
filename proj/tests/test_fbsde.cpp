#include <cmath>

#include "doctest.h"
#include "mfsg/monotonicity.hpp"
#include "mfsg/riccati.hpp"

using namespace mfsg;

namespace {

EnsembleNoise deterministic_noise(const TimeGrid& grid) {
  return make_ensemble_noise(grid, 0, 0, EnsembleShape{1, 1}, RngSpec{1});
}

double lq_error_vs_oracle(const FbsdeSolution& sol, const RiccatiLqOracle& oracle,
                          const TimeGrid& grid) {
  auto [x_ref, y_ref] = oracle.paths(grid);
  double worst = 0.0;
  for (int k = 0; k <= grid.n_steps; ++k) {
    worst = std::max(worst, std::abs(sol.x.flat(0).data()(0, k) - x_ref.data()(0, k)));
    worst = std::max(worst, std::abs(sol.y.flat(0).data()(0, k) - y_ref.data()(0, k)));
  }
  return worst;
}

}  // namespace

TEST_CASE("riccati oracle closed forms") {
  TimeGrid grid = make_grid(1.0, 64);

  RiccatiLqOracle separable{0.0, 1.0, 0.0, 1.0, 1.0, 20};
  Eigen::VectorXd r = separable.riccati(grid);
  for (int k = 0; k <= grid.n_steps; ++k) {
    CHECK(r[k] == doctest::Approx(1.0 / (1.0 + (1.0 - grid.node(k)))).epsilon(1e-8));
  }

  RiccatiLqOracle linear{0.7, 0.0, 0.0, 0.5, 1.0, 20};
  Eigen::VectorXd r2 = linear.riccati(grid);
  for (int k = 0; k <= grid.n_steps; ++k) {
    CHECK(r2[k] == doctest::Approx(0.5 * std::exp(2.0 * 0.7 * (1.0 - grid.node(k)))).epsilon(1e-8));
  }

  RiccatiLqOracle zero{0.3, 1.0, 0.0, 0.0, 1.0, 20};
  Eigen::VectorXd r3 = zero.riccati(grid);
  CHECK(r3.cwiseAbs().maxCoeff() == 0.0);
  auto [x3, y3] = zero.paths(grid);
  CHECK(y3.data().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero system solves in one pass to the closed form") {
  TimeGrid grid = make_grid(1.0, 32);
  Eigen::MatrixXd theta0 = Eigen::MatrixXd::Constant(2, 1, 0.4);
  Eigen::MatrixXd theta1 = Eigen::MatrixXd::Constant(2, 1, 0.9);
  Eigen::VectorXd x0(2);
  x0 << 1.0, -0.5;
  FbsdeProblem problem = make_zero_problem(2, 2, theta0, theta1, x0);
  EnsembleNoise noise = make_ensemble_noise(grid, 1, 1, EnsembleShape{2, 3}, RngSpec{5});
  PicardOptions options;
  FbsdeSolution sol = solve_picard(problem, nullptr, noise, grid, options);
  CHECK(sol.converged);
  CHECK(sol.iterations == 1);
  for (int r = 0; r < 2; ++r) {
    for (int m = 0; m < 3; ++m) {
      for (int k = 0; k <= grid.n_steps; ++k) {
        Eigen::VectorXd expected = x0 + theta0 * noise.common[r].value(k) +
                                   theta1 * noise.idio_path(r, m).value(k);
        CHECK((sol.x.path(r, m).value(k) - expected).norm() <= 1e-13);
        CHECK(sol.y.path(r, m).value(k).norm() <= 1e-13);
      }
    }
  }
}

TEST_CASE("picard matches the riccati oracle at 10h") {
  RiccatiLqOracle oracle{0.0, 1.0, 0.0, 1.0, 1.0, 10};
  TimeGrid grid = make_grid(1.0, 500);
  FbsdeProblem problem = make_lq_problem(oracle);
  EnsembleNoise noise = deterministic_noise(grid);
  PicardOptions options;
  options.tol = 1e-22;
  options.damping = 0.5;
  FbsdeSolution sol = solve_picard(problem, nullptr, noise, grid, options);
  CHECK(sol.converged);
  CHECK(lq_error_vs_oracle(sol, oracle, grid) <= 10.0 * grid.step());
}

TEST_CASE("picard contraction factor stays below one half in the paper regime") {
  // Scaled-down coefficients mimic a small stage width; the squared-functional
  // ratio between successive iterate distances must sit below 1/2.
  RiccatiLqOracle oracle{0.0, 1.0, 0.0, 1.0, 1.0, 10};
  TimeGrid grid = make_grid(1.0, 200);
  FbsdeProblem problem = make_lq_problem(oracle);
  EnsembleNoise noise = deterministic_noise(grid);
  PicardOptions inner;
  inner.tol = 1e-26;
  inner.max_iter = 400;
  inner.damping = 0.5;
  StageMapAudit audit =
      audit_stage_contraction(problem, 0.0, 0.2, 1.0, noise, grid, inner, 10, RngSpec{77});
  REQUIRE(audit.factors.size() >= 3);
  for (double f : audit.factors) CHECK(f <= 0.5);
}

TEST_CASE("continuation: one-stage schedule equals plain picard") {
  RiccatiLqOracle oracle{0.0, 1.0, 0.0, 1.0, 1.0, 10};
  TimeGrid grid = make_grid(1.0, 200);
  FbsdeProblem problem = make_lq_problem(oracle);
  EnsembleNoise noise = deterministic_noise(grid);
  PicardOptions options;
  options.tol = 1e-22;
  options.damping = 0.5;
  FbsdeSolution direct = solve_picard(problem, nullptr, noise, grid, options);
  ContinuationSchedule one;
  one.lambdas = {0.0, 1.0};
  one.stage_tol = options.tol;
  one.damping = 0.5;
  FbsdeSolution cont = solve_continuation(problem, one, noise, grid);
  CHECK(fbsde_distance(direct, cont) <= 1e-18);
}

TEST_CASE("continuation lambda=0 stage is the decoupled closed form") {
  TimeGrid grid = make_grid(1.0, 16);
  FbsdeProblem problem = make_monotone_problem(2, 1.0, 0.5, 0.3, 0.4, Eigen::VectorXd::Zero(2));
  EnsembleNoise noise = make_ensemble_noise(grid, 1, 1, EnsembleShape{2, 4}, RngSpec{8});
  FbsdeSolution seed = decoupled_seed(problem, noise, grid);
  for (int i = 0; i < 8; ++i) {
    CHECK(seed.y.flat(i).data().cwiseAbs().maxCoeff() == 0.0);
    CHECK(seed.l1.flat(i).data().cwiseAbs().maxCoeff() == 0.0);
    for (int k = 0; k <= grid.n_steps; ++k) {
      Eigen::VectorXd expected = problem.initial(i / 4, i % 4) +
                                 problem.theta0 * noise.common[i / 4].value(k) +
                                 problem.theta1 * noise.idiosyncratic[i].value(k);
      CHECK((seed.x.flat(i).value(k) - expected).norm() <= 1e-13);
    }
  }
}

TEST_CASE("continuation schedule refinement self-consistency") {
  RiccatiLqOracle oracle{0.2, 1.0, 0.5, 1.0, 1.0, 10};
  TimeGrid grid = make_grid(1.0, 200);
  FbsdeProblem problem = make_lq_problem(oracle);
  EnsembleNoise noise = deterministic_noise(grid);
  ContinuationSchedule coarse = ContinuationSchedule::uniform(2);
  ContinuationSchedule fine = ContinuationSchedule::uniform(4);
  coarse.stage_tol = fine.stage_tol = 1e-22;
  coarse.damping = fine.damping = 0.5;
  FbsdeSolution a = solve_continuation(problem, coarse, noise, grid);
  FbsdeSolution b = solve_continuation(problem, fine, noise, grid);
  CHECK(fbsde_distance(a, b) <= 1e-18);
}

TEST_CASE("check_monotone: analytic family passes with beta12 >= beta") {
  TimeGrid grid = make_grid(1.0, 12);
  const double beta = 0.8, gamma = 0.4;
  FbsdeProblem problem = make_monotone_problem(2, beta, gamma, 0.2, 0.3, Eigen::VectorXd::Zero(2));
  EnsembleNoise noise = make_ensemble_noise(grid, 1, 1, EnsembleShape{2, 6}, RngSpec{3});
  MonotonicityReport report = check_monotone(problem, noise, grid, 16, RngSpec{10});
  CHECK(report.pass);
  CHECK(report.form_holds);
  CHECK(report.beta12 >= beta - 1e-9);
  CHECK(report.beta11 >= beta - 1e-9);
  CHECK(report.alpha11 >= 1.0 - 1e-9);
  CHECK(report.branch_condition);
}

TEST_CASE("check_monotone: wrong sign fails with a witness") {
  TimeGrid grid = make_grid(1.0, 12);
  FbsdeProblem problem = make_monotone_problem(2, 0.8, 0.0, 0.2, 0.3, Eigen::VectorXd::Zero(2));
  // Flip the forward drift sign: Psi = +beta G^T Y.
  FbsdeProblem broken = problem;
  const Eigen::MatrixXd g = problem.coupling;
  broken.forward_drift = [g](const FbsdeArgs& s) { return (0.8 * (g.transpose() * s.y)).eval(); };
  EnsembleNoise noise = make_ensemble_noise(grid, 1, 1, EnsembleShape{2, 6}, RngSpec{3});
  MonotonicityReport report = check_monotone(broken, noise, grid, 16, RngSpec{10});
  CHECK_FALSE(report.pass);
  CHECK_FALSE(report.form_holds);
  CHECK(report.witness_sample >= 0);
  CHECK(report.witness_node >= 0);
}

TEST_CASE("check_monotone: zero coefficients pass degenerately with a flag") {
  TimeGrid grid = make_grid(1.0, 8);
  FbsdeProblem problem = make_zero_problem(2, 2, Eigen::MatrixXd::Constant(2, 1, 0.3),
                                           Eigen::MatrixXd::Constant(2, 1, 0.3),
                                           Eigen::VectorXd::Zero(2));
  EnsembleNoise noise = make_ensemble_noise(grid, 1, 1, EnsembleShape{2, 4}, RngSpec{4});
  MonotonicityReport report = check_monotone(problem, noise, grid, 8, RngSpec{10});
  CHECK(report.form_holds);
  CHECK_FALSE(report.sum_condition);
  CHECK_FALSE(report.pass);
  CHECK(report.note == "beta11 + beta12 > 0 violated");
}

TEST_CASE("solution residual: zero system exact, picard small, perturbation localizes") {
  TimeGrid grid = make_grid(1.0, 64);
  Eigen::MatrixXd theta0 = Eigen::MatrixXd::Constant(2, 1, 0.4);
  Eigen::MatrixXd theta1 = Eigen::MatrixXd::Constant(2, 1, 0.9);
  FbsdeProblem zero = make_zero_problem(2, 2, theta0, theta1, Eigen::VectorXd::Zero(2));
  EnsembleNoise noise = make_ensemble_noise(grid, 1, 1, EnsembleShape{1, 4}, RngSpec{5});
  PicardOptions options;
  FbsdeSolution sol = solve_picard(zero, nullptr, noise, grid, options);
  FbsdeResidual residual = solution_residual(zero, sol, noise, grid);
  CHECK(residual.forward_max <= 1e-13);
  CHECK(residual.backward_max <= 1e-13);

  RiccatiLqOracle oracle{0.0, 1.0, 0.0, 1.0, 1.0, 10};
  TimeGrid lq_grid = make_grid(1.0, 300);
  FbsdeProblem lq = make_lq_problem(oracle);
  EnsembleNoise det = deterministic_noise(lq_grid);
  PicardOptions tight;
  tight.tol = 1e-8;
  tight.damping = 0.5;
  FbsdeSolution lq_sol = solve_picard(lq, nullptr, det, lq_grid, tight);
  FbsdeResidual lq_res = solution_residual(lq, lq_sol, det, lq_grid);
  CHECK(lq_res.forward_max <= 10.0 * tight.tol);
  CHECK(lq_res.backward_max <= 10.0 * tight.tol);

  // Perturb Y at one node: the backward defect must spike exactly there.
  FbsdeSolution perturbed = lq_sol;
  const int node = 150;
  perturbed.y.flat(0).data()(0, node) += 1.0;
  FbsdeResidual spiked = solution_residual(lq, perturbed, det, lq_grid);
  int argmax = 0;
  spiked.backward_per_node.maxCoeff(&argmax);
  // the perturbed node enters steps node-1 (as the predictor) and node (as Y_k)
  CHECK(argmax >= node - 1);
  CHECK(argmax <= node);
  CHECK(spiked.backward_per_node[node] >= 0.9);
  for (int k = 0; k < lq_grid.n_steps; ++k) {
    if (k < node - 1 || k > node) CHECK(spiked.backward_per_node[k] <= 1e-6);
  }
}

TEST_CASE("uniqueness surrogate: independent random guesses agree") {
  // Deterministic LQ.
  RiccatiLqOracle oracle{0.0, 1.0, 0.0, 1.0, 1.0, 10};
  TimeGrid grid = make_grid(1.0, 200);
  FbsdeProblem lq = make_lq_problem(oracle);
  EnsembleNoise det = deterministic_noise(grid);
  PicardOptions options;
  options.tol = 1e-20;
  options.max_iter = 400;
  options.damping = 0.5;
  FbsdeSolution g1 = random_guess(lq, det, grid, RngSpec{100}, 2.0);
  FbsdeSolution g2 = random_guess(lq, det, grid, RngSpec{200}, 2.0);
  FbsdeSolution s1 = solve_picard(lq, &g1, det, grid, options);
  FbsdeSolution s2 = solve_picard(lq, &g2, det, grid, options);
  CHECK(fbsde_distance(s1, s2) <= 10.0 * options.tol);

  // Stochastic conditional mean-field family.
  TimeGrid sgrid = make_grid(1.0, 60);
  FbsdeProblem mono = make_monotone_problem(2, 0.5, 0.25, 0.25, 0.35, Eigen::VectorXd::Ones(2));
  EnsembleNoise noise = make_ensemble_noise(sgrid, 1, 1, EnsembleShape{2, 32}, RngSpec{42});
  PicardOptions sopt;
  sopt.tol = 1e-18;
  sopt.max_iter = 400;
  sopt.damping = 0.5;
  FbsdeSolution h1 = random_guess(mono, noise, sgrid, RngSpec{300}, 1.0);
  FbsdeSolution h2 = random_guess(mono, noise, sgrid, RngSpec{400}, 1.0);
  FbsdeSolution t1 = solve_picard(mono, &h1, noise, sgrid, sopt);
  FbsdeSolution t2 = solve_picard(mono, &h2, noise, sgrid, sopt);
  CHECK(fbsde_distance(t1, t2) <= 10.0 * sopt.tol);
}

TEST_CASE("adaptedness: zeroing future noise leaves the forward prefix unchanged") {
  TimeGrid grid = make_grid(1.0, 40);
  FbsdeProblem mono = make_monotone_problem(2, 0.5, 0.25, 0.25, 0.35, Eigen::VectorXd::Ones(2));
  EnsembleNoise noise = make_ensemble_noise(grid, 1, 1, EnsembleShape{2, 8}, RngSpec{21});
  PicardOptions options;
  options.tol = 1e-16;
  options.max_iter = 300;
  options.damping = 0.5;
  FbsdeSolution sol = solve_picard(mono, nullptr, noise, grid, options);

  const int cut = 25;
  EnsembleNoise truncated = noise;
  for (auto& path : truncated.common) {
    for (int k = cut + 1; k <= grid.n_steps; ++k) path.set_value(k, path.value(cut));
  }
  for (auto& path : truncated.idiosyncratic) {
    for (int k = cut + 1; k <= grid.n_steps; ++k) path.set_value(k, path.value(cut));
  }
  // One raw pass from the same frozen coupling iterate: the forward states up
  // to the cut node must agree bit-exactly (no look-ahead in the stepping).
  PicardOptions one;
  one.tol = 0.0;
  one.max_iter = 1;
  one.throw_on_divergence = false;
  one.final_refresh = false;
  FbsdeSolution a = solve_picard(mono, &sol, noise, grid, one);
  FbsdeSolution b = solve_picard(mono, &sol, truncated, grid, one);
  for (int i = 0; i < 16; ++i) {
    for (int k = 0; k <= cut; ++k) {
      CHECK((a.x.flat(i).value(k) - b.x.flat(i).value(k)).norm() == 0.0);
    }
  }
}

TEST_CASE("sup-norm estimate surrogate stable under refinement") {
  RiccatiLqOracle oracle{0.3, 1.0, 0.5, 1.0, 1.0, 10};
  auto fit_c = [&](int n) {
    TimeGrid grid = make_grid(1.0, n);
    FbsdeProblem lq = make_lq_problem(oracle);
    EnsembleNoise det = deterministic_noise(grid);
    PicardOptions options;
    options.tol = 1e-22;
    options.damping = 0.5;
    options.max_iter = 400;
    FbsdeSolution sol = solve_picard(lq, nullptr, det, grid, options);
    double sup_x = sol.x.flat(0).max_abs();
    double y_l2 = std::sqrt(sol.y.flat(0).squared_l2());
    return sup_x / std::sqrt(1.0 + y_l2 * y_l2);
  };
  const double c1 = fit_c(100);
  const double c2 = fit_c(200);
  const double c3 = fit_c(400);
  CHECK(std::abs(c2 - c1) <= 0.05 * std::abs(c1));
  CHECK(std::abs(c3 - c2) <= 0.05 * std::abs(c2));
}

TEST_CASE("divergence error carries the contraction estimate") {
  // A wrong-sign (expansive) system makes plain Picard diverge.
  TimeGrid grid = make_grid(1.0, 50);
  FbsdeProblem bad = make_monotone_problem(1, 1.0, 0.0, 0.0, 0.0, Eigen::VectorXd::Ones(1));
  const Eigen::MatrixXd g = bad.coupling;
  bad.forward_drift = [g](const FbsdeArgs& s) { return (4.0 * (g.transpose() * s.y)).eval(); };
  bad.backward_driver = [g](const FbsdeArgs& s) { return (4.0 * (g * s.x)).eval(); };
  bad.terminal = [g](int, int, const Eigen::VectorXd& xT) { return (4.0 * (g * xT)).eval(); };
  EnsembleNoise det = deterministic_noise(grid);
  PicardOptions options;
  options.tol = 1e-16;
  options.max_iter = 60;
  FbsdeSolution guess = random_guess(bad, det, grid, RngSpec{7}, 1.0);
  CHECK_THROWS_AS(solve_picard(bad, &guess, det, grid, options), DivergenceError);
}
