#include "mfsg/fbsde.hpp"

#include <algorithm>
#include <cmath>

namespace mfsg {

namespace {

Eigen::VectorXd zero_vec(int n) { return Eigen::VectorXd::Zero(n); }

struct Increments {
  // dW0 per (realization, step), dW1 per (particle, step); empty when absent.
  static Eigen::VectorXd common(const EnsembleNoise& noise, int r, int k) {
    if (noise.dim_common == 0) return Eigen::VectorXd();
    return noise.common[r].col(k + 1) - noise.common[r].col(k);
  }
  static Eigen::VectorXd idio(const EnsembleNoise& noise, int r, int m, int k) {
    if (noise.dim_idiosyncratic == 0) return Eigen::VectorXd();
    const SamplePath& w = noise.idio_path(r, m);
    return w.col(k + 1) - w.col(k);
  }
};

}  // namespace

Eigen::MatrixXd FbsdeProblem::default_coupling(int m1, int n1) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m1, n1);
  const int d = std::min(m1, n1);
  g.topLeftCorner(d, d).setIdentity();
  return g;
}

void FbsdeProblem::validate() const {
  if (dims.n1 < 1 || dims.m1 < 1 || dims.j0 < 0 || dims.j < 0) {
    throw ConfigError("FbsdeProblem: invalid dimensions");
  }
  if (!forward_drift || !backward_driver || !terminal || !initial) {
    throw ConfigError("FbsdeProblem: forward drift, backward driver, terminal and initial "
                      "callbacks are all required");
  }
  if (theta0.rows() != dims.n1 || theta0.cols() != dims.j0) {
    throw ConfigError("FbsdeProblem: theta0 must be n1 x j0");
  }
  if (theta1.rows() != dims.n1 || theta1.cols() != dims.j) {
    throw ConfigError("FbsdeProblem: theta1 must be n1 x j");
  }
  if (coupling.rows() != dims.m1 || coupling.cols() != dims.n1) {
    throw ConfigError("FbsdeProblem: coupling matrix G must be m1 x n1");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(coupling);
  if (qr.rank() < std::min(dims.m1, dims.n1)) {
    throw ConfigError("FbsdeProblem: coupling matrix G must have full rank");
  }
}

double fbsde_distance(const FbsdeSolution& a, const FbsdeSolution& b) {
  const auto& shape = a.x.shape();
  const TimeGrid& grid = a.x.grid();
  const double h = grid.step();
  const int last = grid.n_steps;
  double integral = 0.0;
  double terminal = 0.0;
  for (int i = 0; i < shape.total(); ++i) {
    for (int k = 0; k < last; ++k) {
      double node_sq = (a.x.flat(i).col(k) - b.x.flat(i).col(k)).squaredNorm() +
                       (a.y.flat(i).col(k) - b.y.flat(i).col(k)).squaredNorm();
      if (a.l0.dim() > 0) node_sq += (a.l0.flat(i).col(k) - b.l0.flat(i).col(k)).squaredNorm();
      if (a.l1.dim() > 0) node_sq += (a.l1.flat(i).col(k) - b.l1.flat(i).col(k)).squaredNorm();
      integral += node_sq;
    }
    terminal += (a.x.flat(i).col(last) - b.x.flat(i).col(last)).squaredNorm();
  }
  const double inv = 1.0 / static_cast<double>(shape.total());
  return h * integral * inv + terminal * inv;
}

FbsdeSolution decoupled_seed(const FbsdeProblem& problem, const EnsembleNoise& noise,
                             const TimeGrid& grid) {
  const auto& shape = noise.shape;
  FbsdeSolution sol;
  sol.x = PathEnsemble(grid, problem.dims.n1, shape);
  sol.y = PathEnsemble(grid, problem.dims.m1, shape);
  sol.l0 = PathEnsemble(grid, problem.dims.m1 * problem.dims.j0, shape);
  sol.l1 = PathEnsemble(grid, problem.dims.m1 * problem.dims.j, shape);
  for (int r = 0; r < shape.n_common; ++r) {
    for (int m = 0; m < shape.n_particles; ++m) {
      SamplePath& xp = sol.x.path(r, m);
      Eigen::VectorXd x0 = problem.initial(r, m);
      for (int k = 0; k <= grid.n_steps; ++k) {
        Eigen::VectorXd v = x0;
        if (problem.dims.j0 > 0) v += problem.theta0 * noise.common[r].col(k);
        if (problem.dims.j > 0) v += problem.theta1 * noise.idio_path(r, m).col(k);
        xp.set_value(k, v);
      }
    }
  }
  return sol;
}

FbsdeSolution random_guess(const FbsdeProblem& problem, const EnsembleNoise& noise,
                           const TimeGrid& grid, const RngSpec& rng, double scale) {
  FbsdeSolution sol = decoupled_seed(problem, noise, grid);
  const auto& shape = noise.shape;
  const double sqrt_h = std::sqrt(grid.step());
  for (int r = 0; r < shape.n_common; ++r) {
    for (int m = 0; m < shape.n_particles; ++m) {
      RngStream stream(rng, stream::kGuess, r, m);
      auto wander = [&](SamplePath& p) {
        Eigen::VectorXd level(p.dim());
        for (int i = 0; i < p.dim(); ++i) level[i] = scale * stream.gaussian();
        for (int k = 0; k <= grid.n_steps; ++k) {
          Eigen::VectorXd v = p.value(k) + level;
          p.set_value(k, v);
          for (int i = 0; i < p.dim(); ++i) level[i] += scale * sqrt_h * stream.gaussian();
        }
      };
      wander(sol.x.path(r, m));
      wander(sol.y.path(r, m));
    }
  }
  return sol;
}

namespace {

// One Picard pass: forward with Y frozen at the previous iterate, backward
// given the fresh forward states. Conditional means over the common-noise
// filtration are within-realization particle means; conditional expectations
// at each node use least-squares regression on the forward state.
FbsdeSolution picard_pass(const FbsdeProblem& problem, const FbsdeSolution& frozen,
                          const EnsembleNoise& noise, const TimeGrid& grid, int degree) {
  const auto& shape = noise.shape;
  const int n1 = problem.dims.n1;
  const int m1 = problem.dims.m1;
  const int j0 = problem.dims.j0;
  const int j1 = problem.dims.j;
  const double h = grid.step();
  const int n = grid.n_steps;
  const int R = shape.n_common;
  const int M = shape.n_particles;
  const bool stochastic_backward = (M > 1) && (j0 + j1 > 0);

  FbsdeSolution out;
  out.x = PathEnsemble(grid, n1, shape);
  out.y = PathEnsemble(grid, m1, shape);
  out.l0 = PathEnsemble(grid, m1 * j0, shape);
  out.l1 = PathEnsemble(grid, m1 * j1, shape);

  // Forward sweep.
  for (int r = 0; r < R; ++r) {
    for (int m = 0; m < M; ++m) out.x.path(r, m).set_value(0, problem.initial(r, m));
  }
  FbsdeArgs args;
  for (int k = 0; k < n; ++k) {
    args.node = k;
    args.t = grid.node(k);
    for (int r = 0; r < R; ++r) {
      args.realization = r;
      const Eigen::VectorXd x_hat = out.x.conditional_mean(r, k);
      const Eigen::VectorXd y_hat = frozen.y.conditional_mean(r, k);
      const Eigen::VectorXd dw0 = Increments::common(noise, r, k);
      for (int m = 0; m < M; ++m) {
        args.particle = m;
        args.x = out.x.path(r, m).col(k);
        args.y = frozen.y.path(r, m).col(k);
        args.x_hat = x_hat;
        args.y_hat = y_hat;
        Eigen::VectorXd drift = problem.forward_drift(args);
        if (!drift.allFinite()) {
          throw NumericalBlowupError("fbsde forward drift returned non-finite value", k);
        }
        Eigen::VectorXd next = args.x + h * drift;
        if (j0 > 0) next += problem.theta0 * dw0;
        if (j1 > 0) next += problem.theta1 * Increments::idio(noise, r, m, k);
        if (!next.allFinite()) {
          throw NumericalBlowupError("fbsde forward state became non-finite", k + 1);
        }
        out.x.path(r, m).set_value(k + 1, next);
      }
    }
  }

  // Terminal condition.
  for (int r = 0; r < R; ++r) {
    for (int m = 0; m < M; ++m) {
      out.y.path(r, m).set_value(n, problem.terminal(r, m, out.x.path(r, m).col(n)));
    }
  }

  // Backward sweep.
  ConditionalRegression regression(degree);
  Eigen::MatrixXd pred(m1, M);
  for (int k = n - 1; k >= 0; --k) {
    args.node = k;
    args.t = grid.node(k);
    for (int r = 0; r < R; ++r) {
      args.realization = r;
      // Predictor E[Y_{k+1} | F_{t_k}].
      if (stochastic_backward) {
        Eigen::MatrixXd states(n1, M);
        Eigen::MatrixXd targets(m1, M);
        for (int m = 0; m < M; ++m) {
          states.col(m) = out.x.path(r, m).col(k);
          targets.col(m) = out.y.path(r, m).col(k + 1);
        }
        pred = regression.fit_predict(states, targets);

        // Martingale integrand vs the idiosyncratic noise from the projected
        // residual increments.
        if (j1 > 0) {
          Eigen::MatrixXd residual_w(m1 * j1, M);
          for (int m = 0; m < M; ++m) {
            Eigen::VectorXd res = targets.col(m) - pred.col(m);
            Eigen::VectorXd dw1 = Increments::idio(noise, r, m, k);
            Eigen::MatrixXd outer = res * dw1.transpose() / h;
            residual_w.col(m) = Eigen::Map<Eigen::VectorXd>(outer.data(), m1 * j1);
          }
          Eigen::MatrixXd states_copy(n1, M);
          for (int m = 0; m < M; ++m) states_copy.col(m) = out.x.path(r, m).col(k);
          Eigen::MatrixXd fitted = regression.fit_predict(states_copy, residual_w);
          for (int m = 0; m < M; ++m) out.l1.path(r, m).set_value(k, fitted.col(m));
        }
      } else {
        for (int m = 0; m < M; ++m) pred.col(m) = out.y.path(r, m).col(k + 1);
      }

      Eigen::VectorXd y_hat_pred = pred.rowwise().mean();
      const Eigen::VectorXd x_hat = out.x.conditional_mean(r, k);

      // Conditional driver mean over the realization.
      Eigen::VectorXd m_bar = zero_vec(m1);
      if (problem.conditional_driver) {
        for (int m = 0; m < M; ++m) {
          args.particle = m;
          args.x = out.x.path(r, m).col(k);
          args.y = pred.col(m);
          args.x_hat = x_hat;
          args.y_hat = y_hat_pred;
          m_bar += problem.conditional_driver(args);
        }
        m_bar /= static_cast<double>(M);
      }

      for (int m = 0; m < M; ++m) {
        args.particle = m;
        args.x = out.x.path(r, m).col(k);
        args.y = pred.col(m);
        args.x_hat = x_hat;
        args.y_hat = y_hat_pred;
        Eigen::VectorXd driver = problem.backward_driver(args);
        if (!driver.allFinite()) {
          throw NumericalBlowupError("fbsde backward driver returned non-finite value", k);
        }
        out.y.path(r, m).set_value(k, pred.col(m) + h * (driver + m_bar));
      }
    }
  }

  // Integrand vs the common noise: pooled least squares of realization-mean
  // residuals against dW0. Needs cross-realization variation to identify.
  if (j0 > 0 && R >= 2) {
    for (int k = 0; k < n; ++k) {
      Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(j0, j0);
      Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(m1, j0);
      for (int r = 0; r < R; ++r) {
        Eigen::VectorXd dw0 = Increments::common(noise, r, k);
        Eigen::VectorXd mean_res = out.y.conditional_mean(r, k + 1) - out.y.conditional_mean(r, k);
        gram += dw0 * dw0.transpose();
        cross += mean_res * dw0.transpose();
      }
      Eigen::MatrixXd l0 = cross * gram.ldlt().solve(Eigen::MatrixXd::Identity(j0, j0));
      Eigen::VectorXd packed = Eigen::Map<Eigen::VectorXd>(l0.data(), m1 * j0);
      for (int i = 0; i < shape.total(); ++i) out.l0.flat(i).set_value(k, packed);
    }
  }

  return out;
}

void damp_towards(FbsdeSolution& state, const FbsdeSolution& fresh, double delta) {
  auto mix = [delta](PathEnsemble& a, const PathEnsemble& b) {
    for (int i = 0; i < a.shape().total(); ++i) {
      a.flat(i).data() = (1.0 - delta) * a.flat(i).data() + delta * b.flat(i).data();
    }
  };
  mix(state.x, fresh.x);
  mix(state.y, fresh.y);
  mix(state.l0, fresh.l0);
  mix(state.l1, fresh.l1);
}

}  // namespace

FbsdeSolution solve_picard(const FbsdeProblem& problem, const FbsdeSolution* guess,
                           const EnsembleNoise& noise, const TimeGrid& grid,
                           const PicardOptions& options) {
  problem.validate();
  if (options.damping <= 0.0 || options.damping > 1.0) {
    throw ConfigError("solve_picard: damping must lie in (0, 1]");
  }
  FbsdeSolution iterate = guess ? *guess : decoupled_seed(problem, noise, grid);
  std::vector<double> distances;
  std::vector<double> factors;
  double dist = 0.0;
  bool converged = false;
  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    FbsdeSolution fresh = picard_pass(problem, iterate, noise, grid, options.regression_degree);
    FbsdeSolution previous = iterate;
    if (options.damping < 1.0) {
      damp_towards(iterate, fresh, options.damping);
    } else {
      iterate = std::move(fresh);
    }
    dist = fbsde_distance(iterate, previous);
    if (!distances.empty() && distances.back() > 0.0) {
      factors.push_back(dist / distances.back());
    }
    distances.push_back(dist);
    if (dist <= options.tol) {
      converged = true;
      ++iter;
      break;
    }
  }
  if (!converged && options.throw_on_divergence) {
    const double last_factor = factors.empty() ? std::numeric_limits<double>::quiet_NaN()
                                               : factors.back();
    throw DivergenceError("solve_picard: no convergence after " +
                              std::to_string(options.max_iter) + " iterations (distance " +
                              std::to_string(dist) + ")",
                          last_factor);
  }
  if (!options.final_refresh) {
    iterate.iterate_distances = std::move(distances);
    iterate.contraction_factors = std::move(factors);
    iterate.iterations = iter;
    iterate.converged = converged;
    iterate.final_distance = dist;
    return iterate;
  }
  // Final undamped refresh so the returned tuple satisfies the discrete
  // equations exactly at the fixed point.
  FbsdeSolution final_pass = picard_pass(problem, iterate, noise, grid, options.regression_degree);
  final_pass.iterate_distances = std::move(distances);
  final_pass.contraction_factors = std::move(factors);
  final_pass.iterations = iter;
  final_pass.converged = converged;
  final_pass.final_distance = dist;
  return final_pass;
}

namespace {

FbsdeProblem stage_problem(const FbsdeProblem& base, double lambda, double beta,
                           ContinuationSchedule::Branch branch) {
  FbsdeProblem stage = base;
  const Eigen::MatrixXd g = base.coupling;
  if (branch == ContinuationSchedule::Branch::kForwardStabilized) {
    stage.forward_drift = [&base, lambda, beta, g](const FbsdeArgs& a) {
      return (((1.0 - lambda) * beta) * (-(g.transpose() * a.y)) + lambda * base.forward_drift(a))
          .eval();
    };
    stage.backward_driver = [&base, lambda](const FbsdeArgs& a) {
      return (lambda * base.backward_driver(a)).eval();
    };
    stage.conditional_driver =
        base.conditional_driver
            ? FbsdeCoefficientFn([&base, lambda](const FbsdeArgs& a) {
                return (lambda * base.conditional_driver(a)).eval();
              })
            : FbsdeCoefficientFn();
    stage.terminal = [&base, lambda](int r, int m, const Eigen::VectorXd& xT) {
      return (lambda * base.terminal(r, m, xT)).eval();
    };
  } else {
    stage.forward_drift = [&base, lambda](const FbsdeArgs& a) {
      return (lambda * base.forward_drift(a)).eval();
    };
    stage.backward_driver = [&base, lambda, beta, g](const FbsdeArgs& a) {
      return (((1.0 - lambda) * beta) * (g * a.x) + lambda * base.backward_driver(a)).eval();
    };
    stage.conditional_driver =
        base.conditional_driver
            ? FbsdeCoefficientFn([&base, lambda](const FbsdeArgs& a) {
                return (lambda * base.conditional_driver(a)).eval();
              })
            : FbsdeCoefficientFn();
    stage.terminal = [&base, lambda, g](int r, int m, const Eigen::VectorXd& xT) {
      return (lambda * base.terminal(r, m, xT) + (1.0 - lambda) * (g * xT)).eval();
    };
  }
  return stage;
}

}  // namespace

ContinuationSchedule ContinuationSchedule::uniform(int n_stages, double max_width) {
  if (n_stages < 1) throw ConfigError("ContinuationSchedule: need at least one stage");
  ContinuationSchedule schedule;
  schedule.lambdas.clear();
  for (int i = 0; i <= n_stages; ++i) {
    schedule.lambdas.push_back(static_cast<double>(i) / n_stages);
  }
  schedule.lambdas.front() = 0.0;
  schedule.lambdas.back() = 1.0;
  (void)max_width;
  return schedule;
}

void ContinuationSchedule::validate() const {
  if (lambdas.size() < 2 || lambdas.front() != 0.0 || lambdas.back() != 1.0) {
    throw ConfigError("ContinuationSchedule: lambdas must run from 0 to 1");
  }
  for (std::size_t i = 1; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > lambdas[i - 1])) {
      throw ConfigError("ContinuationSchedule: lambdas must be strictly increasing");
    }
  }
  if (beta <= 0.0) throw ConfigError("ContinuationSchedule: beta must be positive");
}

FbsdeSolution solve_continuation(const FbsdeProblem& problem, ContinuationSchedule schedule,
                                 const EnsembleNoise& noise, const TimeGrid& grid) {
  problem.validate();
  schedule.validate();
  const auto branch = schedule.branch == ContinuationSchedule::Branch::kAuto
                          ? (problem.dims.n1 >= problem.dims.m1
                                 ? ContinuationSchedule::Branch::kForwardStabilized
                                 : ContinuationSchedule::Branch::kBackwardStabilized)
                          : schedule.branch;

  PicardOptions options;
  options.tol = schedule.stage_tol;
  options.max_iter = schedule.stage_max_iter;
  options.damping = schedule.damping;
  options.regression_degree = schedule.regression_degree;

  std::vector<double> ladder;
  ladder.push_back(0.0);

  // lambda = 0 stage is fully decoupled; one pass from the closed-form seed.
  FbsdeProblem base_stage = stage_problem(problem, 0.0, schedule.beta, branch);
  FbsdeSolution seed = decoupled_seed(problem, noise, grid);
  FbsdeSolution current = solve_picard(base_stage, &seed, noise, grid, options);

  std::vector<double> pending(schedule.lambdas.rbegin(), schedule.lambdas.rend());
  pending.pop_back();  // drop lambda = 0
  double lambda_now = 0.0;
  while (!pending.empty()) {
    const double target = pending.back();
    FbsdeProblem stage = stage_problem(problem, target, schedule.beta, branch);
    try {
      PicardOptions stage_options = options;
      stage_options.throw_on_divergence = true;
      FbsdeSolution next = solve_picard(stage, &current, noise, grid, stage_options);
      next.stage_ladder = ladder;
      current = std::move(next);
      lambda_now = target;
      ladder.push_back(target);
      pending.pop_back();
    } catch (const DivergenceError& err) {
      const double width = target - lambda_now;
      if (width <= schedule.min_stage_width) {
        throw DivergenceError(
            "solve_continuation: stage to lambda=" + std::to_string(target) +
                " diverged at minimal width; refine the schedule or damping",
            err.last_contraction_factor(), static_cast<int>(ladder.size()));
      }
      pending.push_back(lambda_now + 0.5 * width);
    }
  }
  current.stage_ladder = ladder;
  return current;
}

FbsdeResidual solution_residual(const FbsdeProblem& problem, const FbsdeSolution& solution,
                                const EnsembleNoise& noise, const TimeGrid& grid,
                                int regression_degree) {
  if (!solution.x.grid().same_as(grid)) {
    throw ConfigError("solution_residual: solution grid does not match");
  }
  const auto& shape = noise.shape;
  const int n1 = problem.dims.n1;
  const int m1 = problem.dims.m1;
  const double h = grid.step();
  const int n = grid.n_steps;
  const int R = shape.n_common;
  const int M = shape.n_particles;
  const bool stochastic_backward = (M > 1) && (problem.dims.j0 + problem.dims.j > 0);
  ConditionalRegression regression(regression_degree);

  FbsdeResidual res;
  res.forward_per_node = Eigen::VectorXd::Zero(n);
  res.backward_per_node = Eigen::VectorXd::Zero(n);

  FbsdeArgs args;
  for (int k = 0; k < n; ++k) {
    args.node = k;
    args.t = grid.node(k);
    double fwd_max = 0.0;
    double bwd_max = 0.0;
    for (int r = 0; r < R; ++r) {
      args.realization = r;
      const Eigen::VectorXd x_hat = solution.x.conditional_mean(r, k);
      const Eigen::VectorXd y_hat = solution.y.conditional_mean(r, k);
      const Eigen::VectorXd dw0 = Increments::common(noise, r, k);

      Eigen::MatrixXd pred(m1, M);
      if (stochastic_backward) {
        Eigen::MatrixXd states(n1, M);
        Eigen::MatrixXd targets(m1, M);
        for (int m = 0; m < M; ++m) {
          states.col(m) = solution.x.path(r, m).col(k);
          targets.col(m) = solution.y.path(r, m).col(k + 1);
        }
        pred = regression.fit_predict(states, targets);
      } else {
        for (int m = 0; m < M; ++m) pred.col(m) = solution.y.path(r, m).col(k + 1);
      }
      Eigen::VectorXd y_hat_pred = pred.rowwise().mean();

      Eigen::VectorXd m_bar = zero_vec(m1);
      if (problem.conditional_driver) {
        for (int m = 0; m < M; ++m) {
          args.particle = m;
          args.x = solution.x.path(r, m).col(k);
          args.y = pred.col(m);
          args.x_hat = x_hat;
          args.y_hat = y_hat_pred;
          m_bar += problem.conditional_driver(args);
        }
        m_bar /= static_cast<double>(M);
      }

      for (int m = 0; m < M; ++m) {
        args.particle = m;
        args.x = solution.x.path(r, m).col(k);
        args.y = solution.y.path(r, m).col(k);
        args.x_hat = x_hat;
        args.y_hat = y_hat;
        Eigen::VectorXd defect =
            solution.x.path(r, m).col(k + 1) - args.x - h * problem.forward_drift(args);
        if (problem.dims.j0 > 0) defect -= problem.theta0 * dw0;
        if (problem.dims.j > 0) defect -= problem.theta1 * Increments::idio(noise, r, m, k);
        fwd_max = std::max(fwd_max, defect.norm());

        args.y = pred.col(m);
        args.y_hat = y_hat_pred;
        Eigen::VectorXd driver = problem.backward_driver(args);
        Eigen::VectorXd bdefect =
            solution.y.path(r, m).col(k) - pred.col(m) - h * (driver + m_bar);
        bwd_max = std::max(bwd_max, bdefect.norm());
      }
    }
    res.forward_per_node[k] = fwd_max;
    res.backward_per_node[k] = bwd_max;
  }
  res.forward_max = res.forward_per_node.maxCoeff();
  res.backward_max = res.backward_per_node.maxCoeff();
  res.forward_l2 = std::sqrt(h * res.forward_per_node.squaredNorm());
  res.backward_l2 = std::sqrt(h * res.backward_per_node.squaredNorm());
  return res;
}

StageMapAudit audit_stage_contraction(const FbsdeProblem& problem, double lambda0, double delta,
                                      double beta, const EnsembleNoise& noise, const TimeGrid& grid,
                                      const PicardOptions& inner, int outer_iters,
                                      const RngSpec& rng) {
  problem.validate();
  const auto branch = problem.dims.n1 >= problem.dims.m1
                          ? ContinuationSchedule::Branch::kForwardStabilized
                          : ContinuationSchedule::Branch::kBackwardStabilized;
  if (branch != ContinuationSchedule::Branch::kForwardStabilized) {
    throw ConfigError("audit_stage_contraction: implemented for the n1 >= m1 family");
  }

  // Solution of the lambda0-level problem seeds the outer iteration.
  ContinuationSchedule to_lambda0;
  to_lambda0.lambdas = {0.0, 1.0};
  to_lambda0.stage_tol = inner.tol;
  to_lambda0.stage_max_iter = inner.max_iter;
  to_lambda0.regression_degree = inner.regression_degree;
  to_lambda0.beta = beta;
  FbsdeProblem at_lambda0 = stage_problem(problem, lambda0, beta, branch);
  // stage_problem rescales terminal/drivers; reuse solve_continuation on the
  // rescaled problem to reach it robustly.
  FbsdeSolution outer = solve_continuation(at_lambda0, to_lambda0, noise, grid);

  // Perturb so successive outer distances are visible.
  FbsdeSolution wiggle = random_guess(problem, noise, grid, rng, 0.5);
  damp_towards(outer, wiggle, 0.25);

  const Eigen::MatrixXd g = problem.coupling;
  StageMapAudit audit;
  FbsdeSolution previous = outer;
  for (int it = 0; it < outer_iters; ++it) {
    // Inner problem: lambda0-level coupling live, the delta increment frozen
    // at the current outer iterate.
    const FbsdeSolution& frozen = outer;
    FbsdeProblem inner_problem = problem;
    inner_problem.forward_drift = [&problem, &frozen, lambda0, delta, beta,
                                   g](const FbsdeArgs& a) {
      FbsdeArgs fa = a;
      fa.x = frozen.x.path(a.realization, a.particle).col(a.node);
      fa.y = frozen.y.path(a.realization, a.particle).col(a.node);
      fa.x_hat = frozen.x.conditional_mean(a.realization, a.node);
      fa.y_hat = frozen.y.conditional_mean(a.realization, a.node);
      Eigen::VectorXd live = ((1.0 - lambda0) * beta) * (-(g.transpose() * a.y)) +
                             lambda0 * problem.forward_drift(a);
      Eigen::VectorXd inc = delta * (beta * (g.transpose() * fa.y) + problem.forward_drift(fa));
      return (live + inc).eval();
    };
    inner_problem.backward_driver = [&problem, &frozen, lambda0, delta](const FbsdeArgs& a) {
      FbsdeArgs fa = a;
      fa.x = frozen.x.path(a.realization, a.particle).col(a.node);
      fa.y = frozen.y.path(a.realization, a.particle).col(a.node);
      fa.x_hat = frozen.x.conditional_mean(a.realization, a.node);
      fa.y_hat = frozen.y.conditional_mean(a.realization, a.node);
      return (lambda0 * problem.backward_driver(a) + delta * problem.backward_driver(fa)).eval();
    };
    inner_problem.conditional_driver =
        problem.conditional_driver
            ? FbsdeCoefficientFn([&problem, &frozen, lambda0, delta](const FbsdeArgs& a) {
                FbsdeArgs fa = a;
                fa.x = frozen.x.path(a.realization, a.particle).col(a.node);
                fa.y = frozen.y.path(a.realization, a.particle).col(a.node);
                fa.x_hat = frozen.x.conditional_mean(a.realization, a.node);
                fa.y_hat = frozen.y.conditional_mean(a.realization, a.node);
                return (lambda0 * problem.conditional_driver(a) +
                        delta * problem.conditional_driver(fa))
                    .eval();
              })
            : FbsdeCoefficientFn();
    inner_problem.terminal = [&problem, &frozen, lambda0, delta](int r, int m,
                                                                 const Eigen::VectorXd& xT) {
      const int last = frozen.x.grid().n_steps;
      Eigen::VectorXd frozen_xT = frozen.x.path(r, m).col(last);
      return (lambda0 * problem.terminal(r, m, xT) + delta * problem.terminal(r, m, frozen_xT))
          .eval();
    };

    FbsdeSolution next = solve_picard(inner_problem, &outer, noise, grid, inner);
    const double dist = fbsde_distance(next, outer);
    if (!audit.distances.empty() && audit.distances.back() > 0.0) {
      audit.factors.push_back(dist / audit.distances.back());
    }
    audit.distances.push_back(dist);
    previous = outer;
    outer = std::move(next);
    if (dist <= 1e3 * inner.tol) break;
  }
  if (!audit.factors.empty()) {
    std::vector<double> sorted = audit.factors;
    std::sort(sorted.begin(), sorted.end());
    audit.fitted_rate = sorted[sorted.size() / 2] / delta;
  }
  return audit;
}

}  // namespace mfsg
