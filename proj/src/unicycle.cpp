#include "mfsg/unicycle.hpp"

#include <cmath>

namespace mfsg {

void UnicycleParams::validate() const {
  if (!(v > 0.0)) throw ConfigError("UnicycleParams: ground speed v must be positive");
  if (!(d0 > 0.0) || !(d1 > 0.0)) throw ConfigError("UnicycleParams: d0 and d1 must be positive");
  if (!(T > 0.0)) throw ConfigError("UnicycleParams: horizon T must be positive");
  if (c0 < 0.0 || c1 < 0.0 || e1 < 0.0 || sigma < 0.0) {
    throw ConfigError("UnicycleParams: weights and sigma must be non-negative");
  }
}

GameSpec make_unicycle_game(const UnicycleParams& params) {
  params.validate();
  GameSpec spec;
  spec.family = "unicycle";
  const double v = params.v;
  const double c1 = params.c1, d1 = params.d1, e1 = params.e1;
  const double c0 = params.c0, d0 = params.d0;
  const double a = params.a, b = params.b;
  const bool noisy = params.sigma > 0.0;

  spec.dims = {0, 4, 1, 1, 0, noisy ? 1 : 0};

  spec.follower.b1 = [v](double, const Vec& x, const Vec& u, const Vec&, const Vec& u0,
                         const Vec&) {
    Vec out(4);
    out << v * std::cos(x[2]), v * std::sin(x[2]), x[3] + u[0] + u0[0], 0.0;
    return out;
  };
  spec.follower.sigma_tilde = Mat::Zero(4, noisy ? 1 : 0);
  if (noisy) spec.follower.sigma_tilde(3, 0) = params.sigma;
  spec.follower.b1_xi = [v](double, const Vec& x, const Vec&, const Vec&, const Vec&, const Vec&) {
    Mat m = Mat::Zero(4, 4);
    m(0, 2) = -v * std::sin(x[2]);
    m(1, 2) = v * std::cos(x[2]);
    m(2, 3) = 1.0;
    return m;
  };
  spec.follower.b1_ui = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    Mat m = Mat::Zero(4, 1);
    m(2, 0) = 1.0;
    return m;
  };
  spec.follower.b1_u0 = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    Mat m = Mat::Zero(4, 1);
    m(2, 0) = 1.0;
    return m;
  };
  spec.follower.b1_x0 = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat::Zero(4, 0);
  };
  spec.follower.b1_z = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat::Zero(4, 4);
  };

  spec.costs.g1 = [c1, d1, e1, a, b](double, const Vec& x, const Vec& u, const Vec&, const Vec&,
                                     const Vec& z) {
    const double dx = x[0] - a, dy = x[1] - b;
    const double za = z[0] - a, zb = z[1] - b;
    return c1 * dx * dx + c1 * dy * dy + d1 * u[0] * u[0] + e1 * za * za + e1 * zb * zb;
  };
  spec.costs.g1_xi = [c1, a, b](double, const Vec& x, const Vec&, const Vec&, const Vec&,
                                const Vec&) {
    Vec g = Vec::Zero(4);
    g[0] = 2.0 * c1 * (x[0] - a);
    g[1] = 2.0 * c1 * (x[1] - b);
    return g;
  };
  spec.costs.g1_ui = [d1](double, const Vec&, const Vec& u, const Vec&, const Vec&, const Vec&) {
    return Vec::Constant(1, 2.0 * d1 * u[0]);
  };
  spec.costs.g1_u0 = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Vec::Zero(1);
  };
  spec.costs.g1_x0 = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Vec::Zero(0);
  };
  spec.costs.g1_z = [e1, a, b](double, const Vec&, const Vec&, const Vec&, const Vec&,
                               const Vec& z) {
    Vec g = Vec::Zero(4);
    g[0] = 2.0 * e1 * (z[0] - a);
    g[1] = 2.0 * e1 * (z[1] - b);
    return g;
  };
  spec.costs.G1 = [](const Vec&) { return 0.0; };
  spec.costs.G1_xi = [](const Vec&) { return Vec::Zero(4); };
  spec.costs.G1_xixi = [](const Vec&) { return Mat::Zero(4, 4); };

  spec.costs.g0 = [c0, d0, a, b](double, const Vec&, const Vec& u0, const Vec& z) {
    const double za = z[0] - a, zb = z[1] - b;
    return c0 * za * za + c0 * zb * zb + d0 * u0[0] * u0[0];
  };
  spec.costs.g0_u0 = [d0](double, const Vec&, const Vec& u0, const Vec&) {
    return Vec::Constant(1, 2.0 * d0 * u0[0]);
  };
  spec.costs.g0_z = [c0, a, b](double, const Vec&, const Vec&, const Vec& z) {
    Vec g = Vec::Zero(4);
    g[0] = 2.0 * c0 * (z[0] - a);
    g[1] = 2.0 * c0 * (z[1] - b);
    return g;
  };
  spec.costs.g0_x0 = [](double, const Vec&, const Vec&, const Vec&) { return Vec::Zero(0); };

  spec.stationarity.alpha1 = [d1](double, const Vec&, const Vec&, const Vec&, const Vec&,
                                  const Vec& p) {
    return Vec::Constant(1, -p[2] / (2.0 * d1));
  };
  spec.stationarity.alpha1_pi = [d1](double, const Vec&, const Vec&, const Vec&, const Vec&,
                                     const Vec&) {
    Mat m = Mat::Zero(1, 4);
    m(0, 2) = -1.0 / (2.0 * d1);
    return m;
  };

  spec.sample_xi = [](RngStream&) { return Vec::Zero(4); };
  return spec;
}

LeaderCoefficients make_unicycle_leader_coefficients(const UnicycleParams& params) {
  const double v = params.v;
  const double c1 = params.c1, d1 = params.d1;
  const double a = params.a, b = params.b;

  LeaderCoefficients lc;
  lc.B1 = [v, d1](double, const Vec& x, const Vec&, const Vec& u0, const Vec&, const Vec& p) {
    Vec out(4);
    out << v * std::cos(x[2]), v * std::sin(x[2]), x[3] - p[2] / (2.0 * d1) + u0[0], 0.0;
    return out;
  };
  lc.Phi = [v, c1, a, b](double, const Vec& x, const Vec&, const Vec&, const Vec&, const Vec& p) {
    Vec out(4);
    out << 2.0 * c1 * (x[0] - a), 2.0 * c1 * (x[1] - b),
        -v * std::sin(x[2]) * p[0] + v * std::cos(x[2]) * p[1], p[2];
    return out;
  };
  lc.B1_x1 = [v](double, const Vec& x, const Vec&, const Vec&, const Vec&, const Vec&) {
    Mat m = Mat::Zero(4, 4);
    m(0, 2) = -v * std::sin(x[2]);
    m(1, 2) = v * std::cos(x[2]);
    m(2, 3) = 1.0;
    return m;
  };
  lc.B1_x0 = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat::Zero(4, 0);
  };
  lc.B1_u0 = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    Mat m = Mat::Zero(4, 1);
    m(2, 0) = 1.0;
    return m;
  };
  lc.B1_z = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat::Zero(4, 4);
  };
  lc.B1_p1 = [d1](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    Mat m = Mat::Zero(4, 4);
    m(2, 2) = -1.0 / (2.0 * d1);
    return m;
  };
  lc.Phi_x1 = [v, c1](double, const Vec& x, const Vec&, const Vec&, const Vec&, const Vec& p) {
    Mat m = Mat::Zero(4, 4);
    m(0, 0) = 2.0 * c1;
    m(1, 1) = 2.0 * c1;
    m(2, 2) = -v * std::cos(x[2]) * p[0] - v * std::sin(x[2]) * p[1];
    return m;
  };
  lc.Phi_x0 = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat::Zero(4, 0);
  };
  lc.Phi_u0 = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat::Zero(4, 1);
  };
  lc.Phi_z = [](double, const Vec&, const Vec&, const Vec&, const Vec&, const Vec&) {
    return Mat::Zero(4, 4);
  };
  lc.Phi_p1 = [v](double, const Vec& x, const Vec&, const Vec&, const Vec&, const Vec&) {
    Mat m = Mat::Zero(4, 4);
    m(2, 0) = -v * std::sin(x[2]);
    m(2, 1) = v * std::cos(x[2]);
    m(3, 2) = 1.0;
    return m;
  };
  return lc;
}

UnicycleFollowerSolution solve_unicycle_follower(const ControlProfile& u0,
                                                 const UnicycleParams& params,
                                                 const EnsembleConfig& ens, const RngSpec& rng,
                                                 const TimeGrid& grid, double tol) {
  GameSpec spec = make_unicycle_game(params);
  UnicycleFollowerSolution sol;
  sol.mp = solve_follower_mp(u0, spec, ens, rng, grid, tol);
  sol.params = params;
  return sol;
}

// ---------------------------------------------------------------------------
// Deterministic reduced systems
// ---------------------------------------------------------------------------

namespace {

struct ReducedCoeffs {
  double v, c0, c1, d0, d1, a, b;
};

// Follower-response sweep: forward (x, y, theta) with ui = -p3/(2 d1),
// backward (p1, p2, p3). Returns false if the sweep failed to converge.
bool follower_response_sweep(const ReducedCoeffs& c, const Eigen::RowVectorXd& u0,
                             const TimeGrid& grid, double tol, int max_sweeps, double damping,
                             SamplePath& state, SamplePath& p, int* sweeps_used) {
  const int n = grid.n_steps;
  const double h = grid.step();
  state = SamplePath(grid, 3);
  p = SamplePath(grid, 3);
  double change = std::numeric_limits<double>::infinity();
  int sweep = 0;
  for (; sweep < max_sweeps && change > tol; ++sweep) {
    // Forward pass with the current adjoint.
    SamplePath fresh(grid, 3);
    for (int k = 0; k < n; ++k) {
      const double theta = fresh.data()(2, k);
      fresh.data()(0, k + 1) = fresh.data()(0, k) + h * c.v * std::cos(theta);
      fresh.data()(1, k + 1) = fresh.data()(1, k) + h * c.v * std::sin(theta);
      fresh.data()(2, k + 1) =
          fresh.data()(2, k) + h * (-p.data()(2, k) / (2.0 * c.d1) + u0[k]);
    }
    // Backward pass with the fresh states.
    SamplePath p_new(grid, 3);
    p_new.set_value(n, Eigen::Vector3d::Zero());
    for (int k = n - 1; k >= 0; --k) {
      const double theta = fresh.data()(2, k);
      p_new.data()(0, k) = p_new.data()(0, k + 1) + h * 2.0 * c.c1 * (fresh.data()(0, k) - c.a);
      p_new.data()(1, k) = p_new.data()(1, k + 1) + h * 2.0 * c.c1 * (fresh.data()(1, k) - c.b);
      p_new.data()(2, k) =
          p_new.data()(2, k + 1) + h * (-c.v * std::sin(theta) * p_new.data()(0, k + 1) +
                                        c.v * std::cos(theta) * p_new.data()(1, k + 1));
    }
    change = (p_new.data() - p.data()).cwiseAbs().maxCoeff() +
             (fresh.data() - state.data()).cwiseAbs().maxCoeff();
    state.data() = fresh.data();
    p.data() = (1.0 - damping) * p.data() + damping * p_new.data();
    if (!state.all_finite() || !p.all_finite()) return false;
  }
  if (sweeps_used) *sweeps_used = sweep;
  return change <= tol;
}

}  // namespace

UnicycleFollowerResponse solve_unicycle_follower_response(const UnicycleParams& params,
                                                          const Eigen::RowVectorXd& u0,
                                                          const TimeGrid& grid, double tol,
                                                          int max_sweeps) {
  params.validate();
  if (u0.size() != grid.n_nodes()) {
    throw ConfigError("solve_unicycle_follower_response: control length mismatch");
  }
  ReducedCoeffs c{params.v, params.c0, params.c1, params.d0, params.d1, params.a, params.b};
  UnicycleFollowerResponse out;
  int sweeps = 0;
  bool ok = follower_response_sweep(c, u0, grid, tol, max_sweeps, 1.0, out.state, out.p, &sweeps);
  if (!ok) {
    ok = follower_response_sweep(c, u0, grid, tol, max_sweeps, 0.5, out.state, out.p, &sweeps);
  }
  if (!ok) {
    throw DivergenceError("solve_unicycle_follower_response: sweep did not converge", 0.0);
  }
  out.sweeps = sweeps;
  out.converged = true;
  out.ui = -out.p.data().row(2) / (2.0 * params.d1);
  const double h = grid.step();
  double jl = 0.0, jf = 0.0;
  for (int k = 0; k < grid.n_steps; ++k) {
    const double dx = out.state.data()(0, k) - params.a;
    const double dy = out.state.data()(1, k) - params.b;
    jl += h * (params.c0 * dx * dx + params.c0 * dy * dy + params.d0 * u0[k] * u0[k]);
    jf += h * (params.c1 * dx * dx + params.c1 * dy * dy + params.d1 * out.ui[k] * out.ui[k] +
               params.e1 * dx * dx + params.e1 * dy * dy);
  }
  out.leader_cost = jl;
  out.follower_cost = jf;
  return out;
}

namespace {

// One full BVP sweep iteration state.
struct BvpState {
  SamplePath state;  // (x, y, theta)
  SamplePath phi;    // (phi1, phi2, phi3)
  SamplePath p;      // (p1, p2, p3)
  SamplePath K;      // (K1, K2, K3)
};

void bvp_forward(const ReducedCoeffs& c, const Eigen::RowVectorXd& u0, const TimeGrid& grid,
                 const BvpState& prev, BvpState& next) {
  const int n = grid.n_steps;
  const double h = grid.step();
  next.state = SamplePath(grid, 3);
  next.phi = SamplePath(grid, 3);
  for (int k = 0; k < n; ++k) {
    const double theta = next.state.data()(2, k);
    next.state.data()(0, k + 1) = next.state.data()(0, k) + h * c.v * std::cos(theta);
    next.state.data()(1, k + 1) = next.state.data()(1, k) + h * c.v * std::sin(theta);
    next.state.data()(2, k + 1) =
        next.state.data()(2, k) + h * (-prev.p.data()(2, k) / (2.0 * c.d1) + u0[k]);
    next.phi.data()(0, k + 1) =
        next.phi.data()(0, k) - h * c.v * next.phi.data()(2, k) * std::sin(theta);
    next.phi.data()(1, k + 1) =
        next.phi.data()(1, k) + h * c.v * next.phi.data()(2, k) * std::cos(theta);
    next.phi.data()(2, k + 1) = next.phi.data()(2, k) + h * prev.K.data()(2, k) / (2.0 * c.d1);
  }
}

void bvp_backward(const ReducedCoeffs& c, const TimeGrid& grid, BvpState& st) {
  const int n = grid.n_steps;
  const double h = grid.step();
  st.p = SamplePath(grid, 3);
  st.K = SamplePath(grid, 3);
  for (int k = n - 1; k >= 0; --k) {
    const double theta = st.state.data()(2, k);
    const double x = st.state.data()(0, k);
    const double y = st.state.data()(1, k);
    st.p.data()(0, k) = st.p.data()(0, k + 1) + h * 2.0 * c.c1 * (x - c.a);
    st.p.data()(1, k) = st.p.data()(1, k + 1) + h * 2.0 * c.c1 * (y - c.b);
    st.p.data()(2, k) = st.p.data()(2, k + 1) + h * (-c.v * std::sin(theta) * st.p.data()(0, k + 1) +
                                                     c.v * std::cos(theta) * st.p.data()(1, k + 1));
    st.K.data()(0, k) =
        st.K.data()(0, k + 1) + h * (-2.0 * c.c1 * st.phi.data()(0, k) + 2.0 * c.c0 * (x - c.a));
    st.K.data()(1, k) =
        st.K.data()(1, k + 1) + h * (-2.0 * c.c1 * st.phi.data()(1, k) + 2.0 * c.c0 * (y - c.b));
    st.K.data()(2, k) =
        st.K.data()(2, k + 1) +
        h * ((-c.v * st.K.data()(0, k + 1) + c.v * st.phi.data()(2, k) * st.p.data()(1, k + 1)) *
                 std::sin(theta) +
             (c.v * st.K.data()(1, k + 1) + c.v * st.phi.data()(2, k) * st.p.data()(0, k + 1)) *
                 std::cos(theta));
  }
}

bool bvp_sweep(const ReducedCoeffs& c, const TimeGrid& grid, double tol, int max_sweeps,
               double damping, LeaderBvpSolution& out) {
  const double h = grid.step();
  Eigen::RowVectorXd u0 = Eigen::RowVectorXd::Zero(grid.n_nodes());
  BvpState st;
  st.state = SamplePath(grid, 3);
  st.phi = SamplePath(grid, 3);
  st.p = SamplePath(grid, 3);
  st.K = SamplePath(grid, 3);
  double change = std::numeric_limits<double>::infinity();
  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    BvpState next;
    next.p = st.p;
    next.K = st.K;
    bvp_forward(c, u0, grid, st, next);
    bvp_backward(c, grid, next);
    Eigen::RowVectorXd u_new = -next.K.data().row(2) / (2.0 * c.d0);
    change = (u_new - u0).cwiseAbs().maxCoeff() +
             (next.p.data() - st.p.data()).cwiseAbs().maxCoeff() +
             (next.K.data() - st.K.data()).cwiseAbs().maxCoeff();
    if (!next.state.all_finite() || !next.p.all_finite() || !next.K.all_finite() ||
        !std::isfinite(change)) {
      return false;
    }
    if (change <= tol) {
      // Final exact assignment from the last backward pass.
      u0 = -next.K.data().row(2) / (2.0 * c.d0);
      st = std::move(next);
      ++sweep;
      break;
    }
    u0 += damping * (u_new - u0);
    st.state = std::move(next.state);
    st.phi = std::move(next.phi);
    st.p.data() = (1.0 - damping) * st.p.data() + damping * next.p.data();
    st.K.data() = (1.0 - damping) * st.K.data() + damping * next.K.data();
  }
  if (change > tol) return false;

  out.state = std::move(st.state);
  out.p = std::move(st.p);
  out.K = std::move(st.K);
  out.phi = std::move(st.phi);
  out.u0 = u0;
  out.sweeps = sweep;
  out.converged = true;
  double cost = 0.0;
  for (int k = 0; k < grid.n_steps; ++k) {
    const double dx = out.state.data()(0, k) - c.a;
    const double dy = out.state.data()(1, k) - c.b;
    cost += h * (c.c0 * dx * dx + c.c0 * dy * dy + c.d0 * u0[k] * u0[k]);
  }
  out.leader_cost = cost;
  return true;
}

// Shooting fallback: unknown initial values (p(0), K(0)), full 12-dimensional
// forward integration, finite-difference Newton on the terminal defect.
bool bvp_shooting(const ReducedCoeffs& c, const TimeGrid& grid, double tol,
                  LeaderBvpSolution& out) {
  const int n = grid.n_steps;
  const double h = grid.step();

  auto integrate = [&](const Eigen::VectorXd& init, BvpState* record,
                       Eigen::RowVectorXd* u_record) {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    Eigen::Vector3d phi = Eigen::Vector3d::Zero();
    Eigen::Vector3d p = init.head(3);
    Eigen::Vector3d K = init.tail(3);
    for (int k = 0; k <= n; ++k) {
      const double u0k = -K[2] / (2.0 * c.d0);
      if (record) {
        record->state.set_value(k, x);
        record->phi.set_value(k, phi);
        record->p.set_value(k, p);
        record->K.set_value(k, K);
      }
      if (u_record) (*u_record)[k] = u0k;
      if (k == n) break;
      const double theta = x[2];
      Eigen::Vector3d xd(c.v * std::cos(theta), c.v * std::sin(theta),
                         -p[2] / (2.0 * c.d1) + u0k);
      Eigen::Vector3d phid(-c.v * phi[2] * std::sin(theta), c.v * phi[2] * std::cos(theta),
                           K[2] / (2.0 * c.d1));
      Eigen::Vector3d pd(2.0 * c.c1 * (x[0] - c.a), 2.0 * c.c1 * (x[1] - c.b),
                         -c.v * std::sin(theta) * p[0] + c.v * std::cos(theta) * p[1]);
      Eigen::Vector3d Kd(-2.0 * c.c1 * phi[0] + 2.0 * c.c0 * (x[0] - c.a),
                         -2.0 * c.c1 * phi[1] + 2.0 * c.c0 * (x[1] - c.b),
                         (-c.v * K[0] + c.v * phi[2] * p[1]) * std::sin(theta) +
                             (c.v * K[1] + c.v * phi[2] * p[0]) * std::cos(theta));
      x += h * xd;
      phi += h * phid;
      p -= h * pd;
      K -= h * Kd;
    }
    Eigen::VectorXd defect(6);
    defect.head(3) = p;
    defect.tail(3) = K;
    return defect;
  };

  Eigen::VectorXd guess = Eigen::VectorXd::Zero(6);
  Eigen::VectorXd defect = integrate(guess, nullptr, nullptr);
  for (int iter = 0; iter < 100 && defect.norm() > tol; ++iter) {
    Eigen::MatrixXd jac(6, 6);
    const double fd = 1e-7;
    for (int i = 0; i < 6; ++i) {
      Eigen::VectorXd pert = guess;
      pert[i] += fd;
      jac.col(i) = (integrate(pert, nullptr, nullptr) - defect) / fd;
    }
    Eigen::VectorXd step = jac.colPivHouseholderQr().solve(-defect);
    if (!step.allFinite()) return false;
    guess += step;
    defect = integrate(guess, nullptr, nullptr);
  }
  if (defect.norm() > tol) return false;

  BvpState record;
  record.state = SamplePath(grid, 3);
  record.phi = SamplePath(grid, 3);
  record.p = SamplePath(grid, 3);
  record.K = SamplePath(grid, 3);
  Eigen::RowVectorXd u0(grid.n_nodes());
  integrate(guess, &record, &u0);
  out.state = std::move(record.state);
  out.phi = std::move(record.phi);
  out.p = std::move(record.p);
  out.K = std::move(record.K);
  out.u0 = u0;
  out.used_shooting = true;
  out.converged = true;
  double cost = 0.0;
  for (int k = 0; k < grid.n_steps; ++k) {
    const double dx = out.state.data()(0, k) - c.a;
    const double dy = out.state.data()(1, k) - c.b;
    cost += h * (c.c0 * dx * dx + c.c0 * dy * dy + c.d0 * u0[k] * u0[k]);
  }
  out.leader_cost = cost;
  return true;
}

}  // namespace

LeaderBvpSolution solve_unicycle_leader_bvp(const UnicycleParams& params, const TimeGrid& grid,
                                            double tol, int max_sweeps) {
  params.validate();
  if (params.sigma > 0.0) {
    throw ConfigError(
        "solve_unicycle_leader_bvp: sigma > 0 is refused; the control-center problem is derived "
        "deterministically and the stochastic version falls outside the smoothness assumptions "
        "of the reduction");
  }
  ReducedCoeffs c{params.v, params.c0, params.c1, params.d0, params.d1, params.a, params.b};
  LeaderBvpSolution out;
  if (bvp_sweep(c, grid, tol, max_sweeps, 0.5, out)) return out;
  if (bvp_sweep(c, grid, tol, max_sweeps, 0.25, out)) return out;
  if (bvp_shooting(c, grid, tol, out)) return out;
  throw DivergenceError(
      "solve_unicycle_leader_bvp: sweep and shooting both failed; reduce damping or the horizon",
      0.0);
}

AprioriBoundsReport check_apriori_bounds(const LeaderBvpSolution& sol,
                                         const UnicycleParams& params) {
  AprioriBoundsReport report;
  const double bound_xy = params.v * params.T;
  const double bound_p11 = 2.0 * params.c1 * params.T * (params.v * params.T + params.a);
  const double bound_p12 = 2.0 * params.c1 * params.T * (params.v * params.T + params.b);
  report.worst_margin = std::numeric_limits<double>::infinity();
  const double slack = 1e-12;  // equality allowed at degenerate weights

  auto check_row = [&](const Eigen::RowVectorXd& row, double bound, bool& flag,
                       const std::string& name) {
    for (int k = 0; k < row.size(); ++k) {
      const double margin = bound - std::abs(row[k]);
      if (margin < report.worst_margin) {
        report.worst_margin = margin;
        report.witness_node = k;
        report.witness_quantity = name;
      }
      if (margin < -slack) flag = false;
    }
  };
  check_row(sol.state.data().row(0), bound_xy, report.x_ok, "x");
  check_row(sol.state.data().row(1), bound_xy, report.y_ok, "y");
  check_row(sol.p.data().row(0), bound_p11, report.p11_ok, "p11");
  check_row(sol.p.data().row(1), bound_p12, report.p12_ok, "p12");
  return report;
}

}  // namespace mfsg
