#include "mfsg/riccati.hpp"

#include <cmath>

namespace mfsg {

namespace {
constexpr double kBlowupLimit = 1e12;
}

Eigen::VectorXd RiccatiLqOracle::riccati(const TimeGrid& grid) const {
  const int fine_steps = grid.n_steps * refine_factor;
  const double h = grid.horizon / fine_steps;
  auto rhs = [this](double r) { return b * r * r - 2.0 * a * r - q; };
  // Integrate backwards from T on the fine grid.
  Eigen::VectorXd fine(fine_steps + 1);
  fine[fine_steps] = r_terminal;
  for (int k = fine_steps; k > 0; --k) {
    const double r = fine[k];
    const double k1 = rhs(r);
    const double k2 = rhs(r - 0.5 * h * k1);
    const double k3 = rhs(r - 0.5 * h * k2);
    const double k4 = rhs(r - h * k3);
    fine[k - 1] = r - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!std::isfinite(fine[k - 1]) || std::abs(fine[k - 1]) > kBlowupLimit) {
      throw OracleDomainError("riccati_lq_oracle: Riccati solution blew up inside [0, T]");
    }
  }
  Eigen::VectorXd coarse(grid.n_nodes());
  for (int k = 0; k <= grid.n_steps; ++k) coarse[k] = fine[k * refine_factor];
  return coarse;
}

std::pair<SamplePath, SamplePath> RiccatiLqOracle::paths(const TimeGrid& grid) const {
  const int fine_steps = grid.n_steps * refine_factor;
  const double h = grid.horizon / fine_steps;
  auto rhs_r = [this](double r) { return b * r * r - 2.0 * a * r - q; };

  Eigen::VectorXd r_fine(fine_steps + 1);
  r_fine[fine_steps] = r_terminal;
  for (int k = fine_steps; k > 0; --k) {
    const double r = r_fine[k];
    const double k1 = rhs_r(r);
    const double k2 = rhs_r(r - 0.5 * h * k1);
    const double k3 = rhs_r(r - 0.5 * h * k2);
    const double k4 = rhs_r(r - h * k3);
    r_fine[k - 1] = r - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!std::isfinite(r_fine[k - 1]) || std::abs(r_fine[k - 1]) > kBlowupLimit) {
      throw OracleDomainError("riccati_lq_oracle: Riccati solution blew up inside [0, T]");
    }
  }

  // dX = (a - b r(t)) X dt on the same fine grid; r varies along the step, so
  // interpolate r linearly for the RK4 stages.
  auto r_at = [&](double idx) {
    const int lo = std::min(static_cast<int>(idx), fine_steps - 1);
    const double frac = idx - lo;
    return (1.0 - frac) * r_fine[lo] + frac * r_fine[lo + 1];
  };
  Eigen::VectorXd x_fine(fine_steps + 1);
  x_fine[0] = x0;
  for (int k = 0; k < fine_steps; ++k) {
    auto f = [&](double idx, double x) { return (a - b * r_at(idx)) * x; };
    const double x = x_fine[k];
    const double k1 = f(k, x);
    const double k2 = f(k + 0.5, x + 0.5 * h * k1);
    const double k3 = f(k + 0.5, x + 0.5 * h * k2);
    const double k4 = f(k + 1.0, x + h * k3);
    x_fine[k + 1] = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  SamplePath x_path(grid, 1);
  SamplePath y_path(grid, 1);
  for (int k = 0; k <= grid.n_steps; ++k) {
    const double xv = x_fine[k * refine_factor];
    const double rv = r_fine[k * refine_factor];
    x_path.data()(0, k) = xv;
    y_path.data()(0, k) = rv * xv;
  }
  return {x_path, y_path};
}

FbsdeProblem make_lq_problem(const RiccatiLqOracle& oracle) {
  FbsdeProblem problem;
  problem.dims = {1, 1, 0, 0};
  const double a = oracle.a;
  const double b = oracle.b;
  const double q = oracle.q;
  const double rT = oracle.r_terminal;
  const double x0 = oracle.x0;
  problem.forward_drift = [a, b](const FbsdeArgs& s) {
    return Eigen::VectorXd::Constant(1, a * s.x[0] - b * s.y[0]);
  };
  problem.backward_driver = [a, q](const FbsdeArgs& s) {
    return Eigen::VectorXd::Constant(1, q * s.x[0] + a * s.y[0]);
  };
  problem.terminal = [rT](int, int, const Eigen::VectorXd& xT) {
    return Eigen::VectorXd::Constant(1, rT * xT[0]);
  };
  problem.initial = [x0](int, int) { return Eigen::VectorXd::Constant(1, x0); };
  problem.theta0 = Eigen::MatrixXd::Zero(1, 0);
  problem.theta1 = Eigen::MatrixXd::Zero(1, 0);
  problem.coupling = Eigen::MatrixXd::Identity(1, 1);
  return problem;
}

FbsdeProblem make_monotone_problem(int dim, double beta, double gamma, double theta0_scale,
                                   double theta1_scale, const Eigen::VectorXd& x0_mean) {
  FbsdeProblem problem;
  problem.dims = {dim, dim, 1, 1};
  Eigen::MatrixXd g = Eigen::MatrixXd::Identity(dim, dim);
  g(0, dim - 1) = 0.25;  // non-trivial full-rank coupling
  problem.coupling = g;
  problem.forward_drift = [g, beta, gamma](const FbsdeArgs& s) {
    return (-beta * (g.transpose() * s.y) - gamma * (g.transpose() * s.y_hat)).eval();
  };
  problem.backward_driver = [g, beta](const FbsdeArgs& s) { return (beta * (g * s.x)).eval(); };
  problem.conditional_driver = [g, gamma](const FbsdeArgs& s) {
    return (gamma * (g * s.x_hat)).eval();
  };
  problem.terminal = [g](int, int, const Eigen::VectorXd& xT) { return (g * xT).eval(); };
  problem.initial = [x0_mean, dim](int r, int m) {
    // Deterministic spread of initial states, reproducible per particle.
    Eigen::VectorXd x = x0_mean;
    RngStream stream(splitmix64(0x12d5u ^ (static_cast<std::uint64_t>(r) << 32) ^
                                static_cast<std::uint64_t>(m)));
    for (int i = 0; i < dim; ++i) x[i] += 0.3 * stream.gaussian();
    return x;
  };
  problem.theta0 = Eigen::MatrixXd::Constant(dim, 1, theta0_scale);
  problem.theta1 = Eigen::MatrixXd::Constant(dim, 1, theta1_scale);
  return problem;
}

FbsdeProblem make_zero_problem(int dim_x, int dim_y, const Eigen::MatrixXd& theta0,
                               const Eigen::MatrixXd& theta1, const Eigen::VectorXd& x0) {
  FbsdeProblem problem;
  problem.dims = {dim_x, dim_y, static_cast<int>(theta0.cols()), static_cast<int>(theta1.cols())};
  problem.forward_drift = [dim_x](const FbsdeArgs&) { return Eigen::VectorXd::Zero(dim_x); };
  problem.backward_driver = [dim_y](const FbsdeArgs&) { return Eigen::VectorXd::Zero(dim_y); };
  problem.terminal = [dim_y](int, int, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Zero(dim_y);
  };
  problem.initial = [x0](int, int) { return x0; };
  problem.theta0 = theta0;
  problem.theta1 = theta1;
  problem.coupling = FbsdeProblem::default_coupling(dim_y, dim_x);
  return problem;
}

}  // namespace mfsg
